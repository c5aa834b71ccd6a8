"""Markov chains as samplable transition structures, plus the built-in families.

States are opaque non-negative integers.  Finite chains index states
``0..n-1``; countable chains generate rows lazily and are never enumerated.

Each row is stored in cumulative form with the final entry forced to exactly
``1.0``, so the probabilities a chain actually realises are the exact
differences of the stored cumulative values.  This keeps every chain exactly
row-stochastic even when the written probabilities (``0.3 + 0.7``) do not sum
to one in double precision, which matters for the exact-identity oracle on
slowly mixing chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ChainError, ParameterError

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TransitionRow:
    """One state's outgoing distribution, sorted by target key.

    ``cum`` is the inclusive cumulative sum of the probabilities with the
    last entry forced to 1.0; sampling maps a uniform ``u in [0,1)`` to
    ``targets[searchsorted(cum, u, side='right')]``.
    """

    targets: np.ndarray
    cum: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        out = np.empty_like(self.cum)
        out[0] = self.cum[0]
        np.subtract(self.cum[1:], self.cum[:-1], out=out[1:])
        return out

    def sample(self, u: float) -> int:
        return int(self.targets[np.searchsorted(self.cum, u, side="right")])


def make_row(entries) -> TransitionRow:
    """Build a TransitionRow from ``(target, probability)`` pairs."""
    entries = sorted(entries)
    targets = np.array([t for t, _ in entries], dtype=np.int64)
    probs = np.array([p for _, p in entries], dtype=np.float64)
    if len(targets) == 0:
        raise ChainError("empty transition row")
    if np.unique(targets).size != targets.size:
        raise ChainError("duplicate targets in transition row")
    if np.any(probs < 0):
        raise ChainError("negative probability in transition row")
    cum = np.cumsum(probs)
    if abs(cum[-1] - 1.0) > ROW_SUM_TOL:
        raise ChainError(f"row sums to {cum[-1]!r}, not 1 within {ROW_SUM_TOL}")
    cum[-1] = 1.0
    return TransitionRow(targets=targets, cum=cum)


class Chain:
    """Base interface: a step-samplable Markov chain."""

    is_finite: bool = False

    def row(self, s: int) -> TransitionRow:
        raise NotImplementedError


class FiniteChain(Chain):
    """Finite chain over states ``0..n-1`` backed by a dense matrix.

    Construction validates row-stochasticity and (by default) irreducibility;
    pass ``check_irreducible=False`` to build a deliberately broken chain for
    inspection with :func:`validate`.
    """

    is_finite = True

    def __init__(self, matrix, check_irreducible: bool = True):
        P = np.asarray(matrix, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ChainError(f"transition matrix must be square, got {P.shape}")
        self.n = P.shape[0]
        self._rows = [
            make_row([(j, P[s, j]) for j in np.flatnonzero(P[s] != 0.0)])
            for s in range(self.n)
        ]
        if check_irreducible and not self.is_irreducible():
            raise ChainError("finite chain is not strongly connected")
        self._padded = None

    def row(self, s: int) -> TransitionRow:
        if not 0 <= s < self.n:
            raise ChainError(f"state {s} outside 0..{self.n - 1}")
        return self._rows[s]

    def matrix(self) -> np.ndarray:
        """Dense transition matrix rebuilt from the stored cumulative rows."""
        P = np.zeros((self.n, self.n))
        for s, r in enumerate(self._rows):
            P[s, r.targets] = r.probs
        return P

    def is_irreducible(self) -> bool:
        rows, cols = [], []
        for s, r in enumerate(self._rows):
            rows.extend([s] * len(r.targets))
            cols.extend(r.targets.tolist())
        g = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n))
        ncomp, _ = connected_components(g, directed=True, connection="strong")
        return ncomp == 1

    def padded_arrays(self):
        """(targets, cum) padded to max out-degree, for vectorised stepping."""
        if self._padded is None:
            w = max(len(r.targets) for r in self._rows)
            targ = np.zeros((self.n, w), dtype=np.int64)
            cum = np.ones((self.n, w), dtype=np.float64)
            for s, r in enumerate(self._rows):
                k = len(r.targets)
                targ[s, :k] = r.targets
                targ[s, k:] = r.targets[-1]
                cum[s, :k] = r.cum
            self._padded = (targ, cum)
        return self._padded


class CountableChain(Chain):
    """Countably infinite chain; rows come from a function and are cached.

    Irreducibility is assumed, not checked: there is no way to verify it
    from finitely many rows.
    """

    is_finite = False

    def __init__(self, row_fn):
        self._row_fn = row_fn
        self._cache: dict[int, TransitionRow] = {}

    def row(self, s: int) -> TransitionRow:
        if s < 0:
            raise ChainError(f"state {s} is negative")
        r = self._cache.get(s)
        if r is None:
            r = make_row(self._row_fn(s))
            self._cache[s] = r
        return r


@dataclass(frozen=True)
class Adjacency:
    """Directed graph given by out-neighbour lists; every node has out-degree >= 1."""

    n: int
    targets: tuple

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError("adjacency needs at least one node")
        for i, t in enumerate(self.targets):
            if len(t) == 0:
                raise ParameterError(f"node {i} has out-degree 0")
            if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) >= self.n):
                raise ParameterError(f"node {i} has a target outside 0..{self.n - 1}")

    def out_degree(self, i: int) -> int:
        return len(self.targets[i])


def adjacency_from_lists(lists) -> Adjacency:
    return Adjacency(
        n=len(lists),
        targets=tuple(np.array(sorted(set(map(int, t))), dtype=np.int64) for t in lists),
    )


def validate(chain: Chain, states=None) -> list[str]:
    """Report violations of row-stochasticity / irreducibility.

    Finite chains are checked in full; for countable chains only the rows of
    ``states`` (default: keys 0..99) are inspected.  Returns a list of
    human-readable violation strings, empty when clean.
    """
    report: list[str] = []
    if chain.is_finite:
        to_check = range(chain.n)
    else:
        to_check = states if states is not None else range(100)
    for s in to_check:
        try:
            r = chain.row(s)
        except ChainError as exc:
            report.append(f"row {s}: {exc}")
            continue
        probs = r.probs
        total = float(probs.sum())
        if abs(total - 1.0) > ROW_SUM_TOL:
            report.append(f"row {s} sums to {total} (deficit {1.0 - total})")
        if np.any(probs < 0):
            report.append(f"row {s} has a negative probability")
    if chain.is_finite and not chain.is_irreducible():
        report.append("not strongly connected")
    return report


def step(chain: Chain, s: int, rng: np.random.Generator) -> int:
    """Sample the next state from state ``s`` using one uniform draw."""
    return chain.row(s).sample(rng.random())


# ---------------------------------------------------------------------------
# Built-in chain families
# ---------------------------------------------------------------------------


def from_matrix(matrix, check_irreducible: bool = True) -> FiniteChain:
    return FiniteChain(matrix, check_irreducible=check_irreducible)


def build_pagerank(adj: Adjacency, beta: float) -> FiniteChain:
    """Random surfer chain: uniform jump with probability ``beta``, else a
    uniform out-neighbour of the current node."""
    if not 0 < beta <= 1:
        raise ParameterError(f"beta must be in (0, 1], got {beta}")
    n = adj.n
    P = np.full((n, n), beta / n)
    for r in range(n):
        t = adj.targets[r]
        P[r, t] += (1.0 - beta) / len(t)
    return FiniteChain(P)


def build_personalized_pagerank(adj: Adjacency, beta: float, x: int) -> FiniteChain:
    """Like :func:`build_pagerank` but the jump always resets to node ``x``."""
    if not 0 < beta <= 1:
        raise ParameterError(f"beta must be in (0, 1], got {beta}")
    if not 0 <= x < adj.n:
        raise ParameterError(f"reset node {x} outside 0..{adj.n - 1}")
    n = adj.n
    P = np.zeros((n, n))
    P[:, x] = beta
    for r in range(n):
        t = adj.targets[r]
        P[r, t] += (1.0 - beta) / len(t)
    return FiniteChain(P)


def build_mm1(q1: float) -> CountableChain:
    """Reflected biased walk on {0, 1, 2, ...}: up with probability ``q1``,
    down otherwise; state 0 holds in place instead of stepping down."""
    if not 0 < q1 < 0.5:
        raise ParameterError(f"q1 must be in (0, 0.5), got {q1}")

    def row_fn(s: int):
        if s == 0:
            return [(0, 1.0 - q1), (1, q1)]
        return [(s - 1, 1.0 - q1), (s + 1, q1)]

    return CountableChain(row_fn)


def build_mm1_truncated(q1: float, cap: int) -> FiniteChain:
    """State-truncated version of :func:`build_mm1` on ``0..cap``; the top
    state's upward mass becomes a self-loop."""
    if not 0 < q1 < 0.5:
        raise ParameterError(f"q1 must be in (0, 0.5), got {q1}")
    if cap < 1:
        raise ParameterError("cap must be >= 1")
    n = cap + 1
    P = np.zeros((n, n))
    P[0, 0] = 1.0 - q1
    P[0, 1] = q1
    for s in range(1, cap):
        P[s, s - 1] = 1.0 - q1
        P[s, s + 1] = q1
    P[cap, cap - 1] = 1.0 - q1
    P[cap, cap] = q1
    return FiniteChain(P)


def build_magnet(q1: float, q2: float, n1: int, n2: int) -> FiniteChain:
    """Two-attractor walk on a path of ``n2`` nodes (0-based labels).

    Node 0 and node ``n2 - 1`` attract their halves: left of the flip node
    ``n1 - 1`` the walk steps left with probability ``1 - q1``, right of it
    steps right with probability ``1 - q2``.  The flip node itself splits
    1/2 - 1/2, and the two attractors hold in place instead of walking off
    the ends.
    """
    if not (0 < q1 < 0.5 and 0 < q2 < 0.5):
        raise ParameterError("q1, q2 must be in (0, 0.5)")
    if not 1 < n1 < n2:
        raise ParameterError("need 1 < n1 < n2")
    n = n2
    P = np.zeros((n, n))
    P[0, 0] = 1.0 - q1
    P[0, 1] = q1
    for s in range(1, n1 - 1):
        P[s, s - 1] = 1.0 - q1
        P[s, s + 1] = q1
    P[n1 - 1, n1 - 2] = 0.5
    P[n1 - 1, n1] = 0.5
    for s in range(n1, n - 1):
        P[s, s + 1] = 1.0 - q2
        P[s, s - 1] = q2
    P[n - 1, n - 1] = 1.0 - q2
    P[n - 1, n - 2] = q2
    return FiniteChain(P)


def build_clique_cycle(n: int, k: int, eps: float) -> FiniteChain:
    """A k-clique joined to an (n-k+1)-cycle at node 0.

    Clique nodes (1..k-1) hold with probability 1/2, otherwise move to a
    uniform clique neighbour.  Cycle nodes (k..n-1) hold with probability
    1/2, otherwise advance along the cycle back towards node 0.  Node 0
    enters the cycle with probability ``eps``, moves to a uniform clique
    neighbour with probability 1/2, and holds with probability 1/2 - eps.
    """
    if not 2 < k < n:
        raise ParameterError("need 2 < k < n")
    if not 0 < eps < 0.5:
        raise ParameterError("eps must be in (0, 0.5)")
    P = np.zeros((n, n))
    for j in range(1, k):
        P[j, j] = 0.5
        for l in range(k):
            if l != j:
                P[j, l] = 0.5 / (k - 1)
    for c in range(k, n - 1):
        P[c, c] = 0.5
        P[c, c + 1] = 0.5
    P[n - 1, n - 1] = 0.5
    P[n - 1, 0] = 0.5
    P[0, 0] = 0.5 - eps
    P[0, k] = eps
    for l in range(1, k):
        P[0, l] = 0.5 / (k - 1)
    return FiniteChain(P)


def build_clique(n: int) -> FiniteChain:
    """Uniform walk on the complete graph: every state moves to a uniform
    one of the other ``n - 1`` states."""
    if n < 3:
        raise ParameterError("need n >= 3")
    P = np.full((n, n), 1.0 / (n - 1))
    np.fill_diagonal(P, 0.0)
    return FiniteChain(P)


def clique_cycle_return_time(n: int, k: int, eps: float) -> float:
    """Closed-form expected return time to the junction node of
    :func:`build_clique_cycle`."""
    return (1.0 - 2.0 * eps) * k + 2.0 * eps * n


def gen_config_model(n: int, exponent: float, min_degree: int, seed: int) -> Adjacency:
    """Directed configuration-model graph with power-law degrees.

    In- and out-degrees are drawn independently from ``P(d) ~ d**-exponent``
    truncated to ``[min_degree, n-1]``, stubs are matched uniformly at
    random, then self-loops are dropped and parallel edges collapsed.  Nodes
    left without out-edges are rewired to one uniform random other node, so
    the result always satisfies the Adjacency invariant.  Deterministic for
    a fixed seed.
    """
    if n < 10:
        raise ParameterError("need n >= 10")
    if exponent <= 1:
        raise ParameterError("exponent must be > 1")
    if min_degree < 1:
        raise ParameterError("min_degree must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    degrees = np.arange(min_degree, n)
    weights = degrees.astype(np.float64) ** (-exponent)
    weights /= weights.sum()
    out_deg = rng.choice(degrees, size=n, p=weights)
    in_deg = rng.choice(degrees, size=n, p=weights)
    # stub counts must match; top up the lighter side one stub at a time
    while out_deg.sum() != in_deg.sum():
        if out_deg.sum() < in_deg.sum():
            out_deg[rng.integers(n)] += 1
        else:
            in_deg[rng.integers(n)] += 1
    src = np.repeat(np.arange(n), out_deg)
    dst = np.repeat(np.arange(n), in_deg)
    rng.shuffle(dst)
    keep = src != dst
    codes = np.unique(src[keep].astype(np.int64) * n + dst[keep])
    lists = [[] for _ in range(n)]
    for c in codes:
        lists[int(c // n)].append(int(c % n))
    for i in range(n):
        if not lists[i]:
            t = int(rng.integers(n - 1))
            lists[i].append(t if t < i else t + 1)
    return adjacency_from_lists(lists)


def natural_walk(adj: Adjacency) -> FiniteChain:
    """Uniform random walk on the out-edges of ``adj``."""
    n = adj.n
    P = np.zeros((n, n))
    for r in range(n):
        t = adj.targets[r]
        P[r, t] = 1.0 / len(t)
    return FiniteChain(P, check_irreducible=False)
