"""Iterative truncated Monte Carlo estimator for stationary probabilities.

The estimator samples return walks from an anchor state with a horizon that
doubles each iteration, picks sample counts so the mean walk length
concentrates multiplicatively, and stops either when the estimate falls
below the importance threshold (report 0) or when truncation no longer
matters at the threshold's scale (report 1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .chains import Chain
from .errors import ParameterError
from .sampling import BatchStats, sample_batch


class Termination(enum.Enum):
    CONDITION_A = "condition_a"  # estimate below threshold -> bit 0
    CONDITION_B = "condition_b"  # truncation negligible     -> bit 1
    CAP_REACHED = "cap_reached"  # defensive cap; not reachable in theory


class Decision(enum.Enum):
    STOP_0 = 0
    STOP_1 = 1
    CONTINUE = 2


@dataclass(frozen=True)
class EstimatorParams:
    """Run parameters: importance threshold ``delta``, relative accuracy
    ``eps``, failure probability ``alpha``, and the RNG seed."""

    delta: float
    eps: float
    alpha: float
    seed: int = 0
    hard_iteration_cap: int | None = None

    def __post_init__(self):
        for name in ("delta", "eps", "alpha"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ParameterError(f"{name} must be in (0, 1), got {v}")

    @property
    def iteration_cap(self) -> int:
        if self.hard_iteration_cap is not None:
            return self.hard_iteration_cap
        return default_iteration_cap(self.eps, self.delta)


def default_iteration_cap(eps: float, delta: float) -> int:
    """Two iterations past the point where the horizon must have crossed
    ``2 / (eps * delta)``, by which stop rule (b) fires deterministically."""
    return math.ceil(math.log2(2.0 / (eps * delta))) + 2


def initial_sample_count(eps: float, alpha: float) -> int:
    """Sample count for the first iteration (horizon 2)."""
    if not (0 < eps < 1 and 0 < alpha < 1):
        raise ParameterError("eps and alpha must be in (0, 1)")
    return math.ceil(6.0 * (1.0 + eps) * math.log(8.0 / alpha) / eps**2)


def next_sample_count(theta_next: int, t_hat_prev: float, eps: float, alpha: float) -> int:
    """Sample count for the next iteration, scaled by the doubled horizon
    and discounted by the mean walk length just observed."""
    if t_hat_prev < 1.0:
        raise ParameterError("t_hat_prev must be >= 1")
    return math.ceil(
        3.0 * (1.0 + eps) * theta_next * math.log(4.0 * theta_next / alpha) / (t_hat_prev * eps**2)
    )


def check_termination(pi_hat: float, p_hat: float, params: EstimatorParams) -> Decision:
    """Stop rules, checked in order: (a) estimate already below the
    reporting threshold; (b) truncated mass negligible at the target scale."""
    if pi_hat < params.delta / (1.0 + params.eps):
        return Decision.STOP_0
    if p_hat * pi_hat < params.eps * params.delta:
        return Decision.STOP_1
    return Decision.CONTINUE


@dataclass
class IterationRecord:
    t: int
    theta: int
    n: int
    t_hat: float
    p_hat: float
    pi_hat: float
    pi_tilde: dict
    steps: int

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "theta": self.theta,
            "N": self.n,
            "T_hat": self.t_hat,
            "p_hat": self.p_hat,
            "pi_hat": self.pi_hat,
            "pi_tilde": {str(k): v for k, v in sorted(self.pi_tilde.items())},
            "steps": self.steps,
        }


@dataclass
class EstimateReport:
    """Final output: the importance bit, the two estimates, and the full
    per-iteration trace."""

    anchor: int
    decision_bit: int
    pi_hat_final: float
    pi_tilde_final: dict
    t_max: int
    total_steps: int
    termination: Termination
    trace: list = field(default_factory=list)
    observers: tuple = ()
    params: EstimatorParams | None = None

    def pi_tilde(self, j: int):
        """Observer estimate plus a status flag: ``zero`` distinguishes a
        watched state that was never visited from one that was never
        watched (``unobserved``)."""
        if j not in self.pi_tilde_final:
            return None, "unobserved"
        v = self.pi_tilde_final[j]
        return v, ("zero" if v == 0.0 else "estimated")

    def as_dict(self) -> dict:
        return {
            "anchor": self.anchor,
            "decision_bit": self.decision_bit,
            "pi_hat": self.pi_hat_final,
            "pi_tilde": {str(k): v for k, v in sorted(self.pi_tilde_final.items())},
            "t_max": self.t_max,
            "total_steps": self.total_steps,
            "termination": self.termination.value,
            "observers": sorted(int(j) for j in self.observers),
            "params": {
                "delta": self.params.delta,
                "eps": self.params.eps,
                "alpha": self.params.alpha,
                "seed": self.params.seed,
            }
            if self.params
            else None,
            "trace": [r.as_dict() for r in self.trace],
        }


def run(
    chain: Chain,
    anchor: int,
    params: EstimatorParams,
    observers=(),
    batch_fn=None,
    workers: int = 1,
) -> EstimateReport:
    """Run the full estimation loop from ``anchor``.

    ``batch_fn`` supplies the batches (defaults to
    :func:`locostat.sampling.sample_batch`); any drop-in with the same
    signature and substream contract produces an identical report.  Fresh
    samples are drawn each iteration; nothing is reused.
    """
    chain.row(anchor)  # fail fast on an invalid anchor
    observers = tuple(sorted({int(j) for j in observers} | {int(anchor)}))
    if batch_fn is None:
        def batch_fn(chain, anchor, theta, n, observers, seed, iteration):
            return sample_batch(chain, anchor, theta, n, observers, seed, iteration, workers=workers)

    t = 1
    theta = 2
    n = initial_sample_count(params.eps, params.alpha)
    trace: list[IterationRecord] = []
    total_steps = 0
    termination = Termination.CAP_REACHED
    decision = Decision.CONTINUE

    while t <= params.iteration_cap:
        stats: BatchStats = batch_fn(chain, anchor, theta, n, observers, params.seed, t)
        t_hat = stats.t_hat
        p_hat = stats.p_hat
        pi_hat = 1.0 / t_hat
        pi_tilde = {j: stats.f_hat(j) / t_hat for j in observers}
        pi_tilde[anchor] = (1.0 - p_hat) * pi_hat
        steps = stats.total_steps
        total_steps += steps
        trace.append(
            IterationRecord(
                t=t, theta=theta, n=n, t_hat=t_hat, p_hat=p_hat,
                pi_hat=pi_hat, pi_tilde=pi_tilde, steps=steps,
            )
        )
        decision = check_termination(pi_hat, p_hat, params)
        if decision is Decision.STOP_0:
            termination = Termination.CONDITION_A
            break
        if decision is Decision.STOP_1:
            termination = Termination.CONDITION_B
            break
        theta *= 2
        n = next_sample_count(theta, t_hat, params.eps, params.alpha)
        t += 1
    else:
        t = params.iteration_cap

    last = trace[-1]
    # The horizon can never legitimately reach 2/(eps*delta): rule (b) fires
    # at the latest one doubling earlier.
    assert last.theta < 2.0 / (params.eps * params.delta) or termination is Termination.CAP_REACHED

    return EstimateReport(
        anchor=int(anchor),
        decision_bit=0 if termination is Termination.CONDITION_A else 1,
        pi_hat_final=last.pi_hat,
        pi_tilde_final=dict(last.pi_tilde),
        t_max=last.t,
        total_steps=total_steps,
        termination=termination,
        trace=trace,
        observers=observers,
        params=params,
    )
