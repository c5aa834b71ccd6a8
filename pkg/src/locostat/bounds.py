"""Closed-form guarantee evaluators: return-time tail envelopes, estimate
error bounds, iteration/step budgets, and the drift-based machinery for
countable chains.

Probability-type bounds are clipped to [0, 1] on request; raw values are
always available.  Expressions follow their published forms with no
tightening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .chains import Chain
from .errors import ParameterError

_E_MINUS_2 = math.e - 2.0
_DRIFT_TOL = 1e-9


def clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def tail_bound_finite(h_i: float, k: int, clip: bool = True) -> float:
    """Return-time tail envelope for finite chains: 2 * 2**(-k / 2 H_i)."""
    if h_i < 1.0 or k < 0:
        raise ParameterError("need h_i >= 1 and k >= 0")
    v = 2.0 * 2.0 ** (-k / (2.0 * h_i))
    return clip01(v) if clip else v


def tail_bound_countable(r_i: float, k: int, clip: bool = True) -> float:
    """Drift-regime analogue of :func:`tail_bound_finite`: 4 * 2**(-k / R_i)."""
    if r_i <= 0.0 or k < 0:
        raise ParameterError("need r_i > 0 and k >= 0")
    v = 4.0 * 2.0 ** (-k / r_i)
    return clip01(v) if clip else v


@dataclass(frozen=True)
class HajekConstants:
    """Exponential-moment constants derived from a drift condition."""

    omega: float
    eta: float
    rho: float

    def __post_init__(self):
        if not 0.0 < self.eta <= self.omega:
            raise ParameterError("need 0 < eta <= omega")
        if not 0.0 < self.rho < 1.0:
            raise ParameterError("need rho in (0, 1)")


def hajek_constants(gamma: float, nu_max: float) -> HajekConstants:
    """Concrete admissible constants for drift magnitude ``gamma`` and
    maximum single-step displacement ``nu_max``."""
    if gamma <= 0 or nu_max <= 0:
        raise ParameterError("gamma and nu_max must be positive")
    if gamma > nu_max:
        raise ParameterError("gamma cannot exceed nu_max")
    omega = 1.0 / nu_max
    eta = gamma / (2.0 * _E_MINUS_2 * nu_max**2)
    rho = 1.0 - gamma**2 / (4.0 * _E_MINUS_2 * nu_max**2)
    return HajekConstants(omega=omega, eta=eta, rho=rho)


def r_i(h_i_b: float, consts: HajekConstants, nu_max: float) -> float:
    """Tail rate for a drift-bounded chain, assembled with its explicit
    constants (the excursion-length and restricted-hitting terms)."""
    if h_i_b <= 0:
        raise ParameterError("h_i_b must be positive")
    e_en = math.exp(consts.eta * nu_max)
    one_m_rho = 1.0 - consts.rho
    excursions = 1.25 * math.exp(2.0 * consts.eta * nu_max) / (one_m_rho * (e_en - consts.rho))
    return 2.0 * h_i_b * (excursions + 1.0) + math.log(2.0) * e_en / (0.8 * one_m_rho)


def error_bound_anchor(eps: float, theta: int, h_i: float, zmax_i: float, mode: str = "finite") -> float:
    """Relative-error bound for the inverse-mean-length estimate.

    ``finite``: the horizon-dependent form; ``terminated_b``: the bound that
    applies once the truncation-negligibility stop rule fired.
    """
    if mode == "terminated_b":
        return eps * (3.0 * zmax_i + 1.0)
    if mode == "finite":
        return 4.0 * (1.0 - eps) * 2.0 ** (-theta / (2.0 * h_i)) * zmax_i + eps
    raise ParameterError(f"unknown mode {mode!r}")


def error_bound_tilde(eps: float, theta: int, h_i: float, zmax_i: float) -> float:
    """Relative-error bound for the visit-fraction estimate at the anchor.
    Only meaningful when fewer than half the walks are truncated; the caller
    checks that."""
    lead = 4.0 * (1.0 + eps) / (1.0 - eps)
    return lead * 2.0 ** (-theta / (2.0 * h_i)) * max(2.0 * zmax_i - 1.0, 1.0) + 2.0 * eps / (1.0 - eps)


def error_bound_observer(
    eps: float, theta: int, h_i: float, zmax_j: float, pi_hat_i: float, pi_tilde_j: float
) -> float:
    """Additive error bound for an observer estimate: mixing enters through
    the anchor's tail and the observer's own column of the fundamental
    matrix."""
    return (
        4.0 * (1.0 + eps) * 2.0 ** (-theta / (2.0 * h_i)) * zmax_j * pi_hat_i
        + eps * pi_tilde_j
        + eps
    )


def countable_error_bounds(eps: float, theta: int, r: float, pi_i: float, which: str) -> float:
    """Drift-regime analogues of the anchor bounds, with the tail rate
    ``r`` standing in for the hitting time and ``pi_i * (geometric sum)``
    standing in for the fundamental-matrix column."""
    geo = 1.0 - 2.0 ** (-1.0 / r)
    if which == "anchor":
        return 4.0 * (1.0 - eps) * (2.0 ** (-theta / r) / geo) * pi_i + eps
    if which == "tilde":
        lead = 8.0 * (1.0 + eps) / (1.0 - eps)
        return lead * 2.0 ** (-theta / r) * max(pi_i / geo, 1.0) + 2.0 * eps / (1.0 - eps)
    raise ParameterError(f"unknown mode {which!r}")


def general_step_bound(eps: float, alpha: float, theta_final: float) -> float:
    """Explicit-constant budget on total walk steps through the iteration
    that finished at horizon ``theta_final``.

    Derived from the sample-count recursion: each iteration costs at most
    ``N * mean_length`` with ``N`` proportional to ``theta * log(4 theta /
    alpha) / mean_length_prev`` and consecutive mean lengths growing by at
    most ``2 (1+eps)/(1-eps)`` on the concentration event; the doubling
    horizon makes the sum geometric, and the first iteration is added
    separately.
    """
    c = 12.0 * (1.0 + eps) ** 2 / ((1.0 - eps) * eps**2)
    first = 2.0 * (6.0 * (1.0 + eps) * math.log(8.0 / alpha) / eps**2 + 1.0)
    return c * theta_final * math.log(4.0 * theta_final / alpha) + 2.0 * theta_final + first


def step_bounds(eps: float, delta: float, alpha: float, extras: dict | None = None) -> dict:
    """Iteration and step budgets; ``extras`` may carry ``h_i`` or ``r_i``
    plus ``pi_i`` to evaluate the chain-aware forms.

    Inapplicable chain-aware bounds (importance too close to the threshold)
    come back as None.
    """
    for name, v in (("eps", eps), ("delta", delta), ("alpha", alpha)):
        if not 0 < v < 1:
            raise ParameterError(f"{name} must be in (0, 1)")
    extras = extras or {}
    trigger = 1.0 / (eps * delta)
    out = {
        "theta_trigger": trigger,
        "theta_hard_max": 2.0 / (eps * delta),
        "iteration_cap_doubling": math.ceil(math.log2(2.0 / (eps * delta))),
        "iteration_cap_log": math.log(1.0 / (eps * delta)),
        "general_steps": general_step_bound(eps, alpha, 2.0 / (eps * delta)),
    }

    def chain_aware(rate: float, geo_exp: float, prefix: str):
        pi_i = extras.get("pi_i")
        if pi_i is None:
            return
        geo = 1.0 - 2.0 ** (-1.0 / geo_exp)
        lead = math.log(1.0 / alpha) / eps**2
        gap = 1.0 / pi_i - (1.0 + eps) / ((1.0 - eps) * delta)
        if gap > 0:
            out[f"{prefix}_below_threshold_steps"] = lead * rate * math.log((1.0 / geo) / gap)
        else:
            out[f"{prefix}_below_threshold_steps"] = None  # importance too large
        inner = 2.0 * pi_i * (2.0 / ((1.0 - eps) * eps * delta) + 1.0 / geo)
        out[f"{prefix}_all_nodes_steps"] = lead * (4.0 * rate / (alpha * math.log(2.0))) * math.log(inner)
        out[f"{prefix}_all_nodes_steps_stated_arg"] = lead * (rate / alpha) * math.log(
            pi_i * (1.0 / (eps * delta) + 1.0 / geo)
        )

    if "h_i" in extras:
        chain_aware(extras["h_i"], 2.0 * extras["h_i"], "finite")
    if "r_i" in extras:
        chain_aware(extras["r_i"], extras["r_i"], "countable")
    return out


def chernoff_check(n: int, theta: int, mean: float, eps: float) -> float:
    """Two-sided multiplicative tail for averages of i.i.d. variables in
    [0, theta] with the given mean: 2 exp(-eps^2 N mean / 3 theta)."""
    if n < 1 or theta < 1 or mean <= 0 or eps <= 0:
        raise ParameterError("need positive n, theta, mean, eps")
    return 2.0 * math.exp(-(eps**2) * n * mean / (3.0 * theta))


# ---------------------------------------------------------------------------
# Drift-condition verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovSpec:
    """A candidate drift function with its claimed constants."""

    v: object  # callable StateId -> float
    b: float
    nu_max: float
    gamma: float


def foster_check(
    chain: Chain,
    spec: LyapunovSpec,
    frontier_depth: int | None = None,
    anchor: int | None = None,
    root: int = 0,
) -> dict:
    """Check the drift conditions on every state within ``frontier_depth``
    edges of the low-level set B = {x : V(x) <= b}.

    B is discovered by breadth-first search from ``root`` through B-states.
    When ``anchor`` lies outside B, the function is patched to pull the
    anchor into B (its value set to b) and the displacement budget grows by
    the difference; the report records the adjustment.  Full verification
    over an infinite space is impossible, so only the explored frontier is
    certified and its depth is reported.
    """
    if frontier_depth is None:
        frontier_depth = max(1, math.ceil(10.0 * spec.b))
    v_raw, b, gamma = spec.v, spec.b, spec.gamma
    nu_max = spec.nu_max
    adjusted = None
    if anchor is not None and v_raw(anchor) > b:
        b_prime = v_raw(anchor)
        nu_max = spec.nu_max + b_prime - b
        base_v = v_raw

        def v(x, _a=anchor, _b=b, _f=base_v):
            return _b if x == _a else _f(x)

        adjusted = {"anchor": anchor, "nu_max": nu_max, "anchor_value": b_prime}
    else:
        v = v_raw

    if v(root) > b:
        raise ParameterError(f"root state {root} is outside B; pick a root with V <= b")

    # B: component of the low-level set reachable from root through B-states
    b_set = {root}
    queue = [root]
    while queue:
        x = queue.pop()
        for t in chain.row(x).targets:
            t = int(t)
            if t not in b_set and v(t) <= b:
                b_set.add(t)
                queue.append(t)

    dist = {x: 0 for x in b_set}
    frontier = sorted(b_set)
    for d in range(1, frontier_depth + 1):
        new = []
        for x in frontier:
            if dist[x] != d - 1:
                continue
            for t in chain.row(x).targets:
                t = int(t)
                if t not in dist:
                    dist[t] = d
                    new.append(t)
        frontier = sorted(set(frontier) | set(new))

    violations = []
    for x in sorted(dist):
        row = chain.row(x)
        vx = v(x)
        drift = 0.0
        for t, p in zip(row.targets, row.probs):
            dv = v(int(t)) - vx
            if abs(dv) > nu_max + _DRIFT_TOL:
                violations.append(f"edge ({x} -> {int(t)}): |dV| = {abs(dv)} > nu_max {nu_max}")
            drift += p * dv
        if vx > b and drift > -gamma + _DRIFT_TOL:
            violations.append(f"state {x}: drift {drift} > -gamma {-gamma}")

    return {
        "ok": not violations,
        "violations": violations,
        "states_checked": len(dist),
        "b_states": sorted(b_set),
        "frontier_depth": frontier_depth,
        "adjusted": adjusted,
    }
