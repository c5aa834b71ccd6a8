"""Truncated return-walk sampling and the long-walk baselines.

Reproducibility contract: walk ``k`` of iteration ``t`` under seed ``S``
consumes the uniforms of row ``k % CHUNK`` of the matrix produced by
``chunk_uniforms(S, t, k // CHUNK, ..., theta)``, one uniform per step.  The
contract is independent of how walks are scheduled, so sequential, chunked,
worker-parallel and message-passing executions of the same batch are
bit-identical.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .chains import Adjacency, Chain, FiniteChain
from .errors import ParameterError

CHUNK = 4096


def chunk_uniforms(seed: int, iteration: int, chunk_index: int, rows: int, theta: int) -> np.ndarray:
    """Canonical uniform block for one chunk of walks.

    Rows are filled in C order, so asking for fewer rows yields a prefix of
    the full chunk.
    """
    ss = np.random.SeedSequence([int(seed), int(iteration), int(chunk_index)])
    return np.random.default_rng(ss).random((rows, theta))


def walk_uniforms(seed: int, iteration: int, k: int, theta: int) -> np.ndarray:
    """The uniform row consumed by walk ``k`` (test / replay helper)."""
    c, r = divmod(int(k), CHUNK)
    return chunk_uniforms(seed, iteration, c, r + 1, theta)[r]


@dataclass
class WalkSample:
    """One truncated return walk: its length, whether it was cut at the
    horizon, and visit counts for the watched states (steps 1..length)."""

    length: int
    truncated: bool
    visits: dict


@dataclass(eq=True)
class BatchStats:
    """Aggregates of one batch of truncated return walks.

    Counts are kept as exact integers; the ratio properties divide once, so
    two executions that took the same walks compare equal field-for-field.
    """

    n: int
    n_truncated: int
    total_steps: int
    visit_totals: dict

    @property
    def t_hat(self) -> float:
        return self.total_steps / self.n

    @property
    def p_hat(self) -> float:
        return self.n_truncated / self.n

    def f_hat(self, j: int) -> float:
        return self.visit_totals[j] / self.n

    @property
    def f_hat_map(self) -> dict:
        return {j: v / self.n for j, v in self.visit_totals.items()}


def walk_from_uniforms(chain: Chain, anchor: int, theta: int, observers, uniforms) -> WalkSample:
    """Run one walk from ``anchor``, stopping at the first return or after
    ``theta`` steps, consuming ``uniforms`` one per step."""
    visits = {int(j): 0 for j in observers}
    s = anchor
    for r in range(theta):
        s = chain.row(s).sample(float(uniforms[r]))
        if s in visits:
            visits[s] += 1
        if s == anchor:
            return WalkSample(length=r + 1, truncated=False, visits=visits)
    return WalkSample(length=theta, truncated=True, visits=visits)


def sample_return(chain: Chain, anchor: int, theta: int, observers, rng: np.random.Generator) -> WalkSample:
    """Draw one truncated return walk.

    Consumes a block of exactly ``theta`` uniforms from ``rng`` regardless
    of where the walk stops, matching the batch substream layout.
    """
    if theta < 1:
        raise ParameterError("theta must be >= 1")
    return walk_from_uniforms(chain, anchor, theta, observers, rng.random(theta))


def _next_states_finite(chain: FiniteChain, states, u):
    targ, cum = chain.padded_arrays()
    rows = cum[states]
    return targ[states, np.sum(rows <= u[:, None], axis=1)]


def _next_states_generic(chain: Chain, states, u):
    uniq, inv = np.unique(states, return_inverse=True)
    nxt = np.empty_like(states)
    for gi, s in enumerate(uniq):
        row = chain.row(int(s))
        sel = inv == gi
        nxt[sel] = row.targets[np.searchsorted(row.cum, u[sel], side="right")]
    return nxt


def _simulate_chunk(chain: Chain, anchor: int, theta: int, uniforms, obs_sorted):
    """Advance one chunk of walks; returns per-walk lengths / truncation
    flags, observer visit totals, and each walk's final state."""
    m = uniforms.shape[0]
    advance = _next_states_finite if isinstance(chain, FiniteChain) else _next_states_generic
    states = np.full(m, anchor, dtype=np.int64)
    alive = np.arange(m)
    lengths = np.zeros(m, dtype=np.int64)
    final_states = np.full(m, anchor, dtype=np.int64)
    visit_totals = np.zeros(obs_sorted.size, dtype=np.int64)
    for r in range(theta):
        u = uniforms[alive, r]
        nxt = advance(chain, states, u)
        lengths[alive] = r + 1
        final_states[alive] = nxt
        if obs_sorted.size:
            pos = np.searchsorted(obs_sorted, nxt)
            pos_c = np.minimum(pos, obs_sorted.size - 1)
            hit = obs_sorted[pos_c] == nxt
            np.add.at(visit_totals, pos_c[hit], 1)
        returned = nxt == anchor
        keep = ~returned
        states = nxt[keep]
        alive = alive[keep]
        if alive.size == 0:
            break
    truncated = np.zeros(m, dtype=bool)
    truncated[alive] = True
    return lengths, truncated, visit_totals, final_states


def sample_batch(
    chain: Chain,
    anchor: int,
    theta: int,
    n_walks: int,
    observers,
    seed: int,
    iteration: int = 1,
    workers: int = 1,
) -> BatchStats:
    """Aggregate ``n_walks`` independent truncated return walks.

    Walks are processed in fixed-size chunks whose uniforms come from
    :func:`chunk_uniforms`, so the result depends only on
    ``(seed, iteration)`` and not on ``workers``.
    """
    if theta < 1 or n_walks < 1:
        raise ParameterError("theta and n_walks must be >= 1")
    obs_sorted = np.unique(np.asarray(sorted(int(j) for j in observers), dtype=np.int64))
    n_chunks = (n_walks + CHUNK - 1) // CHUNK

    def run_chunk(c):
        rows = min(CHUNK, n_walks - c * CHUNK)
        u = chunk_uniforms(seed, iteration, c, rows, theta)
        lengths, truncated, visit_totals, _ = _simulate_chunk(chain, anchor, theta, u, obs_sorted)
        return int(lengths.sum()), int(truncated.sum()), visit_totals

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, range(n_chunks)))
    else:
        parts = [run_chunk(c) for c in range(n_chunks)]

    total_steps = sum(p[0] for p in parts)
    n_truncated = sum(p[1] for p in parts)
    visit_totals = np.zeros(obs_sorted.size, dtype=np.int64)
    for p in parts:
        visit_totals += p[2]
    return BatchStats(
        n=n_walks,
        n_truncated=n_truncated,
        total_steps=total_steps,
        visit_totals={int(j): int(v) for j, v in zip(obs_sorted, visit_totals)},
    )


def return_length_histogram(
    chain: Chain, anchor: int, theta: int, n_walks: int, seed: int, iteration: int = 1
):
    """Histogram of walk lengths: ``counts[l]`` walks returned at step ``l``
    (index 0 unused), plus the number cut at the horizon.  Shares the batch
    substream contract."""
    counts = np.zeros(theta + 1, dtype=np.int64)
    n_truncated = 0
    empty = np.empty(0, dtype=np.int64)
    n_chunks = (n_walks + CHUNK - 1) // CHUNK
    for c in range(n_chunks):
        rows = min(CHUNK, n_walks - c * CHUNK)
        u = chunk_uniforms(seed, iteration, c, rows, theta)
        lengths, truncated, _, _ = _simulate_chunk(chain, anchor, theta, u, empty)
        counts += np.bincount(lengths[~truncated], minlength=theta + 1)
        n_truncated += int(truncated.sum())
    return counts, n_truncated


def tail_from_histogram(counts: np.ndarray, n_truncated: int, n_walks: int) -> np.ndarray:
    """Empirical ``P(T > k)`` for ``k = 0..theta`` from a length histogram."""
    theta = counts.size - 1
    tail = np.empty(theta + 1)
    returned_by = np.cumsum(counts)
    tail[0] = 1.0
    tail[1:] = (n_walks - returned_by[1:]) / n_walks
    return tail


def geometric_walk_sample(adj: Adjacency, x: int, beta: float, rng: np.random.Generator) -> int:
    """One geometric-length walk on the out-edges of ``adj``: at each node
    stop with probability ``beta``, else move to a uniform out-neighbour;
    returns the node where the walk stopped."""
    if not 0 < beta < 1:
        if beta == 1.0:
            return int(x)
        raise ParameterError("beta must be in (0, 1)")
    cur = int(x)
    while True:
        if rng.random() < beta:
            return cur
        t = adj.targets[cur]
        cur = int(t[rng.integers(len(t))])


def geometric_walk_counts(adj: Adjacency, x: int, beta: float, n_samples: int, seed: int) -> np.ndarray:
    """Vectorised tally of :func:`geometric_walk_sample` end nodes."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    maxdeg = max(len(t) for t in adj.targets)
    pad = np.zeros((adj.n, maxdeg), dtype=np.int64)
    deg = np.zeros(adj.n, dtype=np.int64)
    for i, t in enumerate(adj.targets):
        pad[i, : len(t)] = t
        deg[i] = len(t)
    counts = np.zeros(adj.n, dtype=np.int64)
    cur = np.full(n_samples, int(x), dtype=np.int64)
    while cur.size:
        stop = rng.random(cur.size) < beta
        counts += np.bincount(cur[stop], minlength=adj.n)
        cur = cur[~stop]
        if cur.size == 0:
            break
        j = (rng.random(cur.size) * deg[cur]).astype(np.int64)
        cur = pad[cur, j]
    return counts


def long_walk_frequency_trace(
    chain: Chain, x: int, total_steps: int, checkpoint: int, rng: np.random.Generator
):
    """One continuous walk from ``x``; after every ``checkpoint`` steps
    record ``(steps so far, fraction of steps that visited x)``.

    Uniforms are consumed in blocks of ``checkpoint`` draws so that a trace
    with generator ``default_rng(SeedSequence([seed, r]))`` reproduces row
    ``r`` of :func:`frequency_traces`.
    """
    if total_steps % checkpoint != 0:
        raise ParameterError("checkpoint must divide total_steps")
    out = []
    s = int(x)
    visits = 0
    steps = 0
    for _ in range(total_steps // checkpoint):
        u = rng.random(checkpoint)
        for b in range(checkpoint):
            s = chain.row(s).sample(float(u[b]))
            visits += s == x
        steps += checkpoint
        out.append((steps, visits / steps))
    return out


def frequency_traces(chain: Chain, x: int, total_steps: int, checkpoint: int, seed: int, replicas: int):
    """Replica-vectorised :func:`long_walk_frequency_trace`.

    Returns ``(steps_grid, fractions)`` where ``fractions[r, c]`` is replica
    ``r``'s visit fraction at checkpoint ``c``.  Replica ``r`` draws from
    ``SeedSequence([seed, r])``.
    """
    if total_steps % checkpoint != 0:
        raise ParameterError("checkpoint must divide total_steps")
    gens = [np.random.default_rng(np.random.SeedSequence([int(seed), r])) for r in range(replicas)]
    advance = _next_states_finite if isinstance(chain, FiniteChain) else _next_states_generic
    states = np.full(replicas, int(x), dtype=np.int64)
    visits = np.zeros(replicas, dtype=np.int64)
    n_checkpoints = total_steps // checkpoint
    fractions = np.zeros((replicas, n_checkpoints))
    steps_grid = np.arange(1, n_checkpoints + 1) * checkpoint
    for c in range(n_checkpoints):
        u_block = np.stack([g.random(checkpoint) for g in gens])
        for b in range(checkpoint):
            states = advance(chain, states, u_block[:, b])
            visits += states == x
        fractions[:, c] = visits / steps_grid[c]
    return steps_grid, fractions
