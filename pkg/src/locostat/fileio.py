"""Text file formats for chains and adjacencies.

Chain file:      header line ``FINITE n`` followed by ``src dst prob`` triples.
Adjacency file:  ``n`` on the first line, then one line of space-separated
                 target ids per node.
"""

from __future__ import annotations

import numpy as np

from .chains import Adjacency, FiniteChain, adjacency_from_lists
from .errors import ChainError


def read_chain_file(path) -> FiniteChain:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ChainError(f"{path}: empty chain file")
    head = lines[0].split()
    if len(head) != 2 or head[0].upper() != "FINITE":
        raise ChainError(f"{path}: expected 'FINITE n' header, got {lines[0]!r}")
    n = int(head[1])
    P = np.zeros((n, n))
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise ChainError(f"{path}: expected 'src dst prob', got {ln!r}")
        s, d, p = int(parts[0]), int(parts[1]), float(parts[2])
        if not (0 <= s < n and 0 <= d < n):
            raise ChainError(f"{path}: state out of range in {ln!r}")
        P[s, d] += p
    return FiniteChain(P)


def write_chain_file(path, chain: FiniteChain) -> None:
    with open(path, "w") as fh:
        fh.write(f"FINITE {chain.n}\n")
        for s in range(chain.n):
            r = chain.row(s)
            for t, p in zip(r.targets, r.probs):
                fh.write(f"{s} {t} {p!r}\n")


def read_adjacency_file(path) -> Adjacency:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].strip():
        raise ChainError(f"{path}: missing node count")
    n = int(lines[0].strip())
    if len(lines) < n + 1:
        raise ChainError(f"{path}: expected {n} adjacency lines")
    lists = [[int(x) for x in lines[1 + i].split()] for i in range(n)]
    return adjacency_from_lists(lists)


def write_adjacency_file(path, adj: Adjacency) -> None:
    with open(path, "w") as fh:
        fh.write(f"{adj.n}\n")
        for t in adj.targets:
            fh.write(" ".join(str(int(x)) for x in t) + "\n")
