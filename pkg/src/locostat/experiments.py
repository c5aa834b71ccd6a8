"""Experiment suites: threshold sweeps, the reset-probability sweep against
the geometric-walk baseline, and the three reproduction table generators.

Every suite derives all of its randomness from one base seed; per-run
substreams are keyed by anchor / sweep position so rows are independent and
the whole table is reproducible byte-for-byte.
"""

from __future__ import annotations

import numpy as np

from . import estimator, oracle
from .chains import Adjacency, Chain, build_personalized_pagerank
from .errors import ParameterError
from .estimator import EstimatorParams
from .sampling import frequency_traces


def derive_seed(base: int, *key: int) -> int:
    """Stable child seed for a labelled subexperiment."""
    return int(np.random.SeedSequence([int(base), *[int(k) for k in key]]).generate_state(1)[0])


def sweep_delta(
    chain: Chain,
    anchor: int,
    deltas,
    eps: float,
    alpha: float,
    seed: int,
    observers=(),
) -> list[dict]:
    """Run one estimation per importance threshold; rows are
    (delta, pi_hat, total_steps, decision_bit, theta_final)."""
    rows = []
    for k, delta in enumerate(deltas):
        params = EstimatorParams(delta=float(delta), eps=eps, alpha=alpha, seed=derive_seed(seed, k))
        rep = estimator.run(chain, anchor, params, observers=observers)
        rows.append(
            {
                "delta": float(delta),
                "pi_hat": rep.pi_hat_final,
                "total_steps": rep.total_steps,
                "decision_bit": rep.decision_bit,
                "theta_final": rep.trace[-1].theta,
            }
        )
    return rows


def beta_sweep(
    adj: Adjacency,
    anchors,
    betas,
    seed: int,
    total_steps: int = 100_000,
    checkpoint: int = 1_000,
    error_target: float = 0.05,
    replicas: int = 10,
) -> list[dict]:
    """For each (anchor, reset probability): how many steps of a plain long
    walk does it take for the visit-fraction estimate to reach the error
    target, and what is the exact expected return time there.

    ``steps_needed`` is -1 when the target was never reached within the
    walk budget.
    """
    rows = []
    for ai, x in enumerate(anchors):
        for bi, beta in enumerate(betas):
            chain = build_personalized_pagerank(adj, float(beta), int(x))
            pi = oracle.stationary_exact(chain)
            true_pi = float(pi[int(x)])
            pair_seed = derive_seed(seed, ai, bi)
            steps_grid, fractions = frequency_traces(
                chain, int(x), total_steps, checkpoint, pair_seed, replicas
            )
            rel_err = np.abs(fractions - true_pi).mean(axis=0) / true_pi
            hit = np.flatnonzero(rel_err < error_target)
            rows.append(
                {
                    "anchor": int(x),
                    "beta": float(beta),
                    "steps_needed": int(steps_grid[hit[0]]) if hit.size else -1,
                    "expected_return_time": 1.0 / true_pi,
                }
            )
    return rows


def _true_pi_for(chain: Chain, states, cap: int | None = None):
    """Exact stationary values for the requested states, truncating
    countable chains first."""
    if chain.is_finite:
        table = oracle.oracle_table(chain)
        return {int(s): float(table.pi[int(s)]) for s in states}, table
    finite, info = oracle.truncate_countable(chain, cap=cap)
    table = oracle.oracle_table(finite)
    table.info.update(info)
    return {int(s): float(table.pi[int(s)]) for s in states}, table


def reproduce_anchors(
    chain: Chain,
    anchors,
    delta: float,
    eps: float,
    alpha: float,
    seed: int,
    labels=None,
    cap: int | None = None,
) -> list[dict]:
    """Independent estimation runs per anchor, next to the true values.
    ``labels`` supplies presentation labels (the importance rank for graphs
    with no natural node order)."""
    truths, _ = _true_pi_for(chain, anchors, cap=cap)
    labels = list(labels) if labels is not None else [int(a) for a in anchors]
    rows = []
    for label, a in zip(labels, anchors):
        params = EstimatorParams(delta=delta, eps=eps, alpha=alpha, seed=derive_seed(seed, int(a)))
        rep = estimator.run(chain, int(a), params)
        rows.append(
            {
                "node": label,
                "state": int(a),
                "pi_true": truths[int(a)],
                "pi_hat": rep.pi_hat_final,
                "pi_tilde": rep.pi_tilde_final[int(a)],
                "decision_bit": rep.decision_bit,
            }
        )
    return rows


def reproduce_observers(
    chain: Chain,
    anchor: int,
    observers,
    delta: float,
    eps: float,
    alpha: float,
    seed: int,
    cap: int | None = None,
) -> list[dict]:
    """A single run from ``anchor`` watching ``observers``; one row per
    observer with its true value."""
    truths, _ = _true_pi_for(chain, observers, cap=cap)
    params = EstimatorParams(delta=delta, eps=eps, alpha=alpha, seed=derive_seed(seed, int(anchor)))
    rep = estimator.run(chain, int(anchor), params, observers=observers)
    return [
        {
            "node": int(j),
            "pi_true": truths[int(j)],
            "pi_tilde": rep.pi_tilde_final[int(j)],
        }
        for j in observers
    ]


def reproduce_stats(
    chain: Chain,
    anchors,
    delta: float,
    eps: float,
    alpha: float,
    seed: int,
    labels=None,
) -> list[dict]:
    """Per-anchor final-iteration statistics: truncated fraction, horizon,
    and total walk steps."""
    labels = list(labels) if labels is not None else [int(a) for a in anchors]
    rows = []
    for label, a in zip(labels, anchors):
        params = EstimatorParams(delta=delta, eps=eps, alpha=alpha, seed=derive_seed(seed, int(a)))
        rep = estimator.run(chain, int(a), params)
        last = rep.trace[-1]
        rows.append(
            {
                "node": label,
                "state": int(a),
                "p_hat_final": last.p_hat,
                "theta_final": last.theta,
                "total_steps": rep.total_steps,
            }
        )
    return rows
