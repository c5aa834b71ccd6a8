"""Synchronous message-passing execution of a sampling batch.

Each walk is a token launched from the anchor; every round, every live token
is forwarded across one edge and increments its counter.  A token arriving
back at the anchor is never forwarded again; a token whose counter reaches
the horizon halts where it stands.  Tokens carry their walk id so that the
uniform draw for (walk, step) is exactly the one the sequential sampler
would use, which makes the aggregate equal to the sequential batch
bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chains import Chain
from .errors import ParameterError
from .sampling import CHUNK, BatchStats, chunk_uniforms


@dataclass
class TokenMessage:
    walk_id: int
    counter: int
    at: int


@dataclass
class NetworkSim:
    """Diagnostics of one run: per-round forwarded-message counts and where
    the truncated tokens halted."""

    rounds: int = 0
    messages_per_round: list = field(default_factory=list)
    halted_at: dict = field(default_factory=dict)

    @property
    def total_messages(self) -> int:
        return sum(self.messages_per_round)


def run_distributed_detailed(
    chain: Chain,
    anchor: int,
    theta: int,
    n_walks: int,
    observers,
    seed: int,
    iteration: int = 1,
):
    """Run the token protocol; returns (BatchStats, NetworkSim)."""
    if theta < 1 or n_walks < 1:
        raise ParameterError("theta and n_walks must be >= 1")
    watch = {int(j) for j in observers}
    visit_totals = {j: 0 for j in sorted(watch)}
    uniform_blocks: dict[int, np.ndarray] = {}

    def uniform_for(walk_id: int, step: int) -> float:
        c, r = divmod(walk_id, CHUNK)
        block = uniform_blocks.get(c)
        if block is None:
            rows = min(CHUNK, n_walks - c * CHUNK)
            block = chunk_uniforms(seed, iteration, c, rows, theta)
            uniform_blocks[c] = block
        return float(block[r, step])

    tokens = [TokenMessage(walk_id=k, counter=0, at=int(anchor)) for k in range(n_walks)]
    live = list(range(n_walks))
    total_steps = 0
    n_truncated = 0
    sim = NetworkSim()

    for _round in range(theta):
        forwarded = 0
        still_live = []
        for k in live:
            tok = tokens[k]
            assert tok.at != anchor or tok.counter == 0, "anchor never forwards a returned token"
            dest = chain.row(tok.at).sample(uniform_for(k, tok.counter))
            tok.counter += 1
            assert tok.counter <= theta
            tok.at = dest
            forwarded += 1
            total_steps += 1
            if dest in watch:
                visit_totals[dest] += 1
            if dest == anchor:
                continue  # returned: counter is the sampled length
            if tok.counter == theta:
                n_truncated += 1
                sim.halted_at.setdefault(dest, []).append(k)
                continue
            still_live.append(k)
        sim.messages_per_round.append(forwarded)
        sim.rounds += 1
        live = still_live
        if not live:
            break

    assert n_walks == n_truncated + sum(1 for t in tokens if t.at == anchor)
    stats = BatchStats(
        n=n_walks,
        n_truncated=n_truncated,
        total_steps=total_steps,
        visit_totals=visit_totals,
    )
    assert stats.total_steps == sim.total_messages
    return stats, sim


def run_distributed(
    chain: Chain,
    anchor: int,
    theta: int,
    n_walks: int,
    observers,
    seed: int,
    iteration: int = 1,
) -> BatchStats:
    """Drop-in for :func:`locostat.sampling.sample_batch` with the same
    substream contract, executed as the message-passing protocol."""
    stats, _ = run_distributed_detailed(chain, anchor, theta, n_walks, observers, seed, iteration)
    return stats


def broadcast_normalize(stats: BatchStats, observers) -> dict:
    """Turn observer visit totals into stationary estimates by dividing by
    the total number of steps, exactly as the estimator does."""
    return {int(j): stats.f_hat(int(j)) / stats.t_hat for j in observers}
