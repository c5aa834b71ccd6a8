"""Exact desk-scale ground truth for finite chains.

Everything here treats a chain's probabilities as the exact differences of
its stored cumulative rows.  Well-conditioned chains are handled in double
precision.  Slowly mixing chains (the two-attractor path is the canonical
case) make the stationary vector and fundamental matrix ill-conditioned far
beyond what doubles can certify, so tables escalate to multi-precision
arithmetic; birth-death chains additionally get O(n) passage-time
recurrences, which stay relatively accurate even when hitting times overflow
any sensible condition number.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from .chains import Chain, CountableChain, FiniteChain
from .errors import NumericalError, ParameterError

DEFAULT_ORACLE_CAP = 5000
ESCALATE_COND = 1e8
FLAG_COND = 1e12
MP_SIZE_LIMIT = 150
MP_DPS = 40


def oracle_cap() -> int:
    """Size cap for dense solves; override with LOCOSTAT_ORACLE_CAP."""
    v = os.environ.get("LOCOSTAT_ORACLE_CAP")
    return int(v) if v else DEFAULT_ORACLE_CAP


# ---------------------------------------------------------------------------
# Exact row probabilities
# ---------------------------------------------------------------------------


def _row_probs_mp(chain: FiniteChain, s: int):
    """Exact (target, probability) pairs of row ``s`` as mpmath numbers."""
    r = chain.row(s)
    out = []
    prev = mp.mpf(0)
    for t, c in zip(r.targets, r.cum):
        c = mp.mpf(float(c))
        out.append((int(t), c - prev))
        prev = c
    return out


def _matrix_mp(chain: FiniteChain):
    n = chain.n
    P = mp.zeros(n, n)
    for s in range(n):
        for t, p in _row_probs_mp(chain, s):
            P[s, t] = p
    return P


def is_birth_death(chain: FiniteChain) -> bool:
    """True when every row only touches {s-1, s, s+1}."""
    for s in range(chain.n):
        t = chain.row(s).targets
        if np.any(np.abs(t - s) > 1):
            return False
    return True


def birth_death_rates_mp(chain: FiniteChain):
    """Exact (up, down) step probabilities of a birth-death chain."""
    n = chain.n
    up = [mp.mpf(0)] * n
    down = [mp.mpf(0)] * n
    for s in range(n):
        for t, p in _row_probs_mp(chain, s):
            if t == s + 1:
                up[s] = p
            elif t == s - 1:
                down[s] = p
    return up, down


# ---------------------------------------------------------------------------
# Stationary vector and fundamental matrix
# ---------------------------------------------------------------------------


def _stationary_f64(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    A = np.eye(n) - P + np.ones((n, n))
    try:
        pi = np.linalg.solve(A.T, np.ones(n))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"stationary solve failed: {exc}") from exc
    pi = pi / pi.sum()
    return pi


def _stationary_mp(chain: FiniteChain):
    n = chain.n
    with mp.workdps(MP_DPS):
        P = _matrix_mp(chain)
        A = mp.eye(n) - P + mp.matrix([[mp.mpf(1)] * n for _ in range(n)])
        pi = mp.lu_solve(A.T, mp.matrix([1] * n))
        s = sum(pi)
        return [x / s for x in pi]


def _stationary_bd_mp(chain: FiniteChain):
    """Detailed-balance products; exact per entry even when entries span
    hundreds of orders of magnitude."""
    n = chain.n
    up, down = birth_death_rates_mp(chain)
    with mp.workdps(MP_DPS):
        w = [mp.mpf(1)] * n
        for s in range(1, n):
            if down[s] == 0:
                raise NumericalError("birth-death chain with a zero down-rate")
            w[s] = w[s - 1] * up[s - 1] / down[s]
        tot = sum(w)
        return [x / tot for x in w]


def stationary_exact(chain: FiniteChain, cap: int | None = None) -> np.ndarray:
    """Solve for the stationary vector of a finite chain (double precision
    dense solve; see :func:`oracle_table` for the precision-aware path)."""
    if not chain.is_finite:
        raise ParameterError("stationary_exact needs a finite chain; truncate first")
    cap = oracle_cap() if cap is None else cap
    if chain.n > cap:
        raise NumericalError(f"chain size {chain.n} exceeds oracle cap {cap}")
    pi = _stationary_f64(chain.matrix())
    resid = float(np.abs(pi @ chain.matrix() - pi).max())
    if resid > 1e-8:
        raise NumericalError(f"stationary residual {resid} too large")
    return pi


def fundamental_matrix(chain: FiniteChain, pi: np.ndarray | None = None) -> np.ndarray:
    """Dense inverse of (I - P + 1 pi^T) in double precision."""
    P = chain.matrix()
    if pi is None:
        pi = _stationary_f64(P)
    n = chain.n
    M = np.eye(n) - P + np.outer(np.ones(n), pi)
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"fundamental matrix inversion failed: {exc}") from exc


def z_max(Z: np.ndarray, i: int) -> float:
    """Largest absolute entry in column ``i`` of the fundamental matrix."""
    return float(np.abs(Z[:, i]).max())


# ---------------------------------------------------------------------------
# Hitting / return times
# ---------------------------------------------------------------------------


def expected_hitting(chain: FiniteChain, i: int):
    """Expected first-passage times into ``i`` from every state (the entry
    at ``i`` itself is the expected return time), plus their maximum.

    Double-precision dense solve: trustworthy when passage times are not
    astronomically larger than 1/pi_i; birth-death chains should prefer
    :meth:`OracleTable.hitting`.
    """
    P = chain.matrix()
    n = chain.n
    mask = np.arange(n) != i
    Q = P[np.ix_(mask, mask)]
    try:
        h = np.linalg.solve(np.eye(n - 1) - Q, np.ones(n - 1))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"hitting solve failed: {exc}") from exc
    v = np.empty(n)
    v[mask] = h
    v[i] = 1.0 + P[i][mask] @ h
    return v, float(v.max())


def _hitting_mp(chain: FiniteChain, i: int):
    n = chain.n
    with mp.workdps(MP_DPS):
        P = _matrix_mp(chain)
        idx = [j for j in range(n) if j != i]
        A = mp.zeros(n - 1, n - 1)
        for a, ja in enumerate(idx):
            for b, jb in enumerate(idx):
                A[a, b] = (mp.mpf(1) if a == b else mp.mpf(0)) - P[ja, jb]
        h = mp.lu_solve(A, mp.matrix([1] * (n - 1)))
        v = [mp.mpf(0)] * n
        for a, ja in enumerate(idx):
            v[ja] = h[a]
        v[i] = 1 + sum(P[i, ja] * h[a] for a, ja in enumerate(idx))
        return v


def _hitting_bd_mp(chain: FiniteChain, i: int):
    """Passage-time recurrences for birth-death chains.  All additions are
    of positive terms, so the results are relatively accurate at any scale."""
    n = chain.n
    up, down = birth_death_rates_mp(chain)
    with mp.workdps(MP_DPS):
        climb = [mp.mpf(0)] * n  # climb[j] = E_j[first hit of j+1]
        if n > 1:
            if up[0] == 0:
                raise NumericalError("birth-death chain with zero up-rate at 0")
            climb[0] = 1 / up[0]
            for j in range(1, n - 1):
                climb[j] = (1 + down[j] * climb[j - 1]) / up[j]
        descend = [mp.mpf(0)] * n  # descend[j] = E_j[first hit of j-1]
        if n > 1:
            descend[n - 1] = 1 / down[n - 1]
            for j in range(n - 2, 0, -1):
                descend[j] = (1 + up[j] * descend[j + 1]) / down[j]
        v = [mp.mpf(0)] * n
        for j in range(i - 1, -1, -1):
            v[j] = v[j + 1] + climb[j]
        for j in range(i + 1, n):
            v[j] = v[j - 1] + descend[j]
        ret = mp.mpf(1)
        if i + 1 < n:
            ret += up[i] * v[i + 1]
        if i - 1 >= 0:
            ret += down[i] * v[i - 1]
        v[i] = ret
        return v


# ---------------------------------------------------------------------------
# Taboo propagation: return-time tails, survivors, truncated visit counts
# ---------------------------------------------------------------------------


def return_tail(chain: FiniteChain, i: int, k_max: int) -> np.ndarray:
    """P(return to i takes more than k steps) for k = 0..k_max, by
    propagating the not-yet-returned mass with the anchor column removed."""
    P = chain.matrix()
    n = chain.n
    tail = np.empty(k_max + 1)
    tail[0] = 1.0
    u = P[i].copy()
    for k in range(1, k_max + 1):
        u[i] = 0.0
        tail[k] = u.sum()
        if k < k_max:
            u = u @ P
    return tail


def truncated_return_mean(tail: np.ndarray, theta: int) -> float:
    """Expected truncated return time E[min(T, theta)] from a tail vector."""
    if theta > tail.size - 1 + 1:
        raise ParameterError("tail vector too short for this theta")
    return float(tail[:theta].sum())


def survivor_distribution(chain: FiniteChain, i: int, theta: int) -> np.ndarray:
    """Location of the walk at step ``theta`` conditioned on not having
    returned to ``i`` yet; zero at the anchor by construction."""
    P = chain.matrix()
    u = P[i].copy()
    u[i] = 0.0
    for _ in range(theta - 1):
        u = u @ P
        u[i] = 0.0
    mass = u.sum()
    if mass <= 0.0:
        raise NumericalError(f"no surviving mass at horizon {theta}; conditional undefined")
    return u / mass


@dataclass
class TruncationView:
    """Everything the exact bias identities need at one horizon."""

    theta: int
    tail: float          # P(T > theta)
    mean_trunc: float    # E[min(T, theta)]
    survivor: np.ndarray
    visit_sums: np.ndarray  # E[F_hat_j] for every state j


def _taboo_scan_f64(chain: FiniteChain, i: int, thetas) -> dict[int, TruncationView]:
    P = chain.matrix()
    want = sorted(set(int(t) for t in thetas))
    views: dict[int, TruncationView] = {}
    u = P[i].copy()
    visit_sums = np.zeros(chain.n)
    mean_acc = 0.0  # sum of tail(k) for k < current step
    tail_prev = 1.0
    for r in range(1, want[-1] + 1):
        visit_sums += u
        mean_acc += tail_prev
        masked = u.copy()
        masked[i] = 0.0
        tail_r = masked.sum()
        if r in want:
            views[r] = TruncationView(
                theta=r,
                tail=float(tail_r),
                mean_trunc=float(mean_acc),
                survivor=masked / tail_r,
                visit_sums=visit_sums.copy(),
            )
        tail_prev = tail_r
        u = masked @ P
    return views


def _taboo_scan_mp(chain: FiniteChain, i: int, thetas) -> dict[int, TruncationView]:
    n = chain.n
    want = sorted(set(int(t) for t in thetas))
    views: dict[int, TruncationView] = {}
    with mp.workdps(MP_DPS):
        P = _matrix_mp(chain)
        u = [P[i, j] for j in range(n)]
        visit_sums = [mp.mpf(0)] * n
        mean_acc = mp.mpf(0)
        tail_prev = mp.mpf(1)
        for r in range(1, want[-1] + 1):
            for j in range(n):
                visit_sums[j] += u[j]
            mean_acc += tail_prev
            u[i] = mp.mpf(0)
            tail_r = sum(u)
            if r in want:
                views[r] = TruncationView(
                    theta=r,
                    tail=float(tail_r),
                    mean_trunc=float(mean_acc),
                    survivor=np.array([float(x / tail_r) for x in u]),
                    visit_sums=np.array([float(x) for x in visit_sums]),
                )
            tail_prev = tail_r
            u = [sum(u[q] * P[q, j] for q in range(n) if u[q] != 0) for j in range(n)]
    return views


# ---------------------------------------------------------------------------
# The assembled table
# ---------------------------------------------------------------------------


@dataclass
class OracleTable:
    chain: FiniteChain
    pi: np.ndarray
    Z: np.ndarray
    cond_estimate: float
    precision: str
    flagged: bool
    info: dict = field(default_factory=dict)
    _hitting: dict = field(default_factory=dict, repr=False)
    _pi_mp: list | None = field(default=None, repr=False)
    _Z_mp: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.chain.n

    def hitting(self, i: int) -> np.ndarray:
        """E_j[T_i] for every j (entry i = expected return time)."""
        if i not in self._hitting:
            if is_birth_death(self.chain):
                v = _hitting_bd_mp(self.chain, i)
                vec = np.array([float(x) for x in v])
            elif self.precision.startswith("mp"):
                v = _hitting_mp(self.chain, i)
                vec = np.array([float(x) for x in v])
            else:
                vec, _ = expected_hitting(self.chain, i)
            self._hitting[i] = vec
        return self._hitting[i]

    def H(self, i: int) -> float:
        return float(self.hitting(i).max())

    def return_time(self, i: int) -> float:
        return float(self.hitting(i)[i])

    def z_max(self, i: int) -> float:
        return z_max(self.Z, i)

    def z_gaps(self, i: int, j: int) -> np.ndarray:
        """The vector ``Z[i, j] - Z[q, j]`` over all q.  When the table was
        built in multi-precision the subtraction happens there too: entries
        of Z can dwarf their differences, and forming the gap in doubles
        would cancel catastrophically."""
        if self._Z_mp is not None:
            with mp.workdps(MP_DPS):
                zij = self._Z_mp[i, j]
                return np.array([float(zij - self._Z_mp[q, j]) for q in range(self.n)])
        return self.Z[i, j] - self.Z[:, j]

    def sandwich_ok(self, i: int, slack: float = 1e-9) -> bool:
        """Z_max(i) <= pi_i * H(i) <= 2 Z_max(i), up to relative slack."""
        zm = self.z_max(i)
        mid = self.pi[i] * self.H(i)
        return zm <= mid * (1 + slack) and mid <= 2 * zm * (1 + slack)

    def truncation_views(self, i: int, thetas) -> dict[int, TruncationView]:
        scan = _taboo_scan_mp if self.precision.startswith("mp") else _taboo_scan_f64
        return scan(self.chain, i, thetas)


def oracle_table(chain: FiniteChain, dps: int | None = None, auto: bool = True,
                 cap: int | None = None) -> OracleTable:
    """Build the ground-truth table, escalating precision when doubles
    cannot carry the chain's conditioning."""
    if not chain.is_finite:
        raise ParameterError("oracle_table needs a finite chain; truncate first")
    cap = oracle_cap() if cap is None else cap
    if chain.n > cap:
        raise NumericalError(f"chain size {chain.n} exceeds oracle cap {cap}")
    n = chain.n
    bd = is_birth_death(chain)

    pi_mp = None
    Z_mp = None
    if bd:
        pi_mp = _stationary_bd_mp(chain)
        pi = np.array([float(x) for x in pi_mp])
        pi_precision = "birth-death"
    else:
        pi = _stationary_f64(chain.matrix())
        pi_precision = "float64"

    P = chain.matrix()
    M = np.eye(n) - P + np.outer(np.ones(n), pi)
    Z = np.linalg.inv(M)
    cond = float(np.linalg.norm(M, 1) * np.linalg.norm(Z, 1))
    precision = f"float64/pi={pi_precision}"
    flagged = cond > FLAG_COND

    if auto and cond > ESCALATE_COND and n <= MP_SIZE_LIMIT and dps is None:
        dps = MP_DPS
    if dps is not None:
        if n > MP_SIZE_LIMIT:
            raise NumericalError(
                f"multi-precision table limited to n <= {MP_SIZE_LIMIT}, got {n}"
            )
        if pi_mp is None:
            pi_mp = _stationary_mp(chain)
            pi = np.array([float(x) for x in pi_mp])
        with mp.workdps(dps):
            Pm = _matrix_mp(chain)
            Mm = mp.eye(n) - Pm + mp.matrix([[pi_mp[j] for j in range(n)] for _ in range(n)])
            Z_mp = Mm**-1
            Z = np.array([[float(Z_mp[a, b]) for b in range(n)] for a in range(n)])
        precision = f"mp{dps}/pi={pi_precision if bd else 'mp'}"
        flagged = False

    return OracleTable(
        chain=chain, pi=pi, Z=Z, cond_estimate=cond,
        precision=precision, flagged=flagged,
        info={"birth_death": bd},
        _pi_mp=pi_mp,
        _Z_mp=Z_mp,
    )


# ---------------------------------------------------------------------------
# Expected visits and the exact truncation-bias identities
# ---------------------------------------------------------------------------


def expected_visits(table: OracleTable, i: int, j: int) -> float:
    """Expected visits to ``j`` along one full return cycle of ``i``."""
    if i == j:
        return 1.0
    return float(table.pi[j] * table.return_time(i))


def truncated_expected_visits(chain: FiniteChain, i: int, j: int, theta: int) -> float:
    """E[F_hat_j] at horizon ``theta``: taboo mass accumulated at ``j``
    over steps 1..theta."""
    views = _taboo_scan_f64(chain, i, [theta])
    return float(views[theta].visit_sums[j])


def gamma_i(table: OracleTable, i: int, theta: int) -> float:
    """Survivor-weighted fundamental-matrix gap at the anchor: the exact
    multiplier of the truncation bias."""
    view = table.truncation_views(i, [theta])[theta]
    return float(np.dot(view.survivor, table.z_gaps(i, i)))


def bias_identities(table: OracleTable, i: int, j: int, thetas) -> list[dict]:
    """Evaluate the exact truncation-bias identities at each horizon.

    For each theta, returns both sides of:
      * anchor:    1/E[min(T,th)] - pi_i            = tail * Gamma / E[min(T,th)]
      * fraction:  (1-tail)/E[min(T,th)] - pi_i     = tail * (Gamma - 1) / E[min(T,th)]
      * visit (j): E[F_hat_j]/E[min(T,th)] - pi_j   = tail/E[min(T,th)] * S

    where S sums survivor-weighted fundamental-matrix gaps (Z_ij - Z_qj).
    The exact S carries a unit adjustment at q = j (and at j = i): the gap
    form of a passage time is only valid between distinct states, and the
    expected return to a state contributes one extra visit.  ``visit_rhs``
    uses the exact S; ``visit_rhs_nominal`` omits the adjustment, and
    ``nominal_matches`` records whether the unadjusted form agreed.
    """
    views = table.truncation_views(i, sorted(set(thetas)))
    pi = table.pi
    anchor_gaps = table.z_gaps(i, i)
    observer_gaps = table.z_gaps(i, j)
    out = []
    for theta in sorted(set(int(t) for t in thetas)):
        v = views[theta]
        tail, mean_trunc, surv = v.tail, v.mean_trunc, v.survivor
        gamma = float(np.dot(surv, anchor_gaps))

        anchor_lhs = 1.0 / mean_trunc - pi[i]
        anchor_rhs = tail * gamma / mean_trunc
        fraction_lhs = (1.0 - tail) / mean_trunc - pi[i]
        fraction_rhs = tail * (gamma - 1.0) / mean_trunc

        base = float(np.dot(surv, observer_gaps))
        correction = float(surv[j]) - (1.0 if i == j else 0.0)
        visit_lhs = v.visit_sums[j] / mean_trunc - pi[j]
        visit_rhs = tail * (base + correction) / mean_trunc
        visit_rhs_nominal = tail * base / mean_trunc

        out.append(
            {
                "theta": theta,
                "tail": tail,
                "mean_trunc": mean_trunc,
                "gamma": gamma,
                "anchor_lhs": anchor_lhs,
                "anchor_rhs": anchor_rhs,
                "fraction_lhs": fraction_lhs,
                "fraction_rhs": fraction_rhs,
                "visit_lhs": float(visit_lhs),
                "visit_rhs": visit_rhs,
                "visit_rhs_nominal": visit_rhs_nominal,
                "nominal_matches": abs(visit_rhs_nominal - visit_lhs)
                <= 1e-9 * max(1.0, abs(visit_lhs)),
            }
        )
    return out


# ---------------------------------------------------------------------------
# Countable-chain truncation
# ---------------------------------------------------------------------------


def truncate_countable(chain: CountableChain, cap: int | None = None,
                       mass_tol: float = 1e-12, max_cap: int = 4096):
    """Restrict a countable chain to states 0..cap, folding outgoing mass
    at the boundary back into a self-loop.

    With ``cap=None`` the cap doubles until the truncated chain's stationary
    mass at the boundary state drops below ``mass_tol``.  Returns the finite
    chain and an info dict recording the cap and boundary mass.
    """
    if chain.is_finite:
        raise ParameterError("chain is already finite")

    def build(c: int) -> FiniteChain:
        n = c + 1
        P = np.zeros((n, n))
        for s in range(n):
            r = chain.row(s)
            for t, p in zip(r.targets, r.probs):
                t = int(t)
                P[s, t if t <= c else s] += p
        return FiniteChain(P)

    if cap is not None:
        fc = build(cap)
        pi = stationary_exact(fc)
        return fc, {"cap": cap, "boundary_mass": float(pi[cap])}

    c = 32
    while True:
        fc = build(c)
        pi = stationary_exact(fc)
        if pi[c] < mass_tol or c >= max_cap:
            if pi[c] >= mass_tol:
                raise NumericalError(
                    f"boundary mass {pi[c]} still above {mass_tol} at cap {c}"
                )
            return fc, {"cap": c, "boundary_mass": float(pi[c])}
        c *= 2
