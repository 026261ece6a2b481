"""Dispatch policies mapping an arriving task to a server id.

ECMP draws uniformly, WCMP draws proportionally to processor counts, LSQ
picks the shortest local queue, and SED picks the smallest (queue+1)/weight
score.  The learned balancer reuses the SED scoring rule with inferred
per-server speed weights that are refreshed only at step boundaries, while
the local ongoing counts update on every dispatch/completion.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass
class PolicyContext:
    """Per-LB view handed to a policy at dispatch time.

    ``ongoing`` counts this LB's own dispatched-but-uncompleted tasks per
    server; ``weights`` are processor counts for WCMP/SED or learned speeds
    for the RL balancer.  Both lists have one entry per server.
    """

    ongoing: list
    weights: list
    rng: Optional[np.random.Generator] = None

    @property
    def n(self) -> int:
        return len(self.ongoing)


def _argmin(scores, tie_break: str, rng) -> int:
    best = 0
    best_v = scores[0]
    for j in range(1, len(scores)):
        if scores[j] < best_v:
            best_v = scores[j]
            best = j
    if tie_break == "random":
        ties = [j for j, v in enumerate(scores) if v == best_v]
        if len(ties) > 1:
            return int(ties[int(rng.integers(len(ties)))])
    return best


def ecmp(ctx: PolicyContext) -> int:
    """Uniformly random server."""
    return int(ctx.rng.integers(ctx.n))


def wcmp(ctx: PolicyContext) -> int:
    """Server drawn with probability weight_j / sum(weights)."""
    w = ctx.weights
    total = 0.0
    for v in w:
        if v <= 0:
            raise ValueError(f"wcmp requires positive weights, got {w}")
        total += v
    u = ctx.rng.random() * total
    acc = 0.0
    for j in range(len(w) - 1):
        acc += w[j]
        if u < acc:
            return j
    return len(w) - 1


def lsq(ctx: PolicyContext, tie_break: str = "lowest") -> int:
    """Server with the fewest locally-ongoing tasks; ties go to the lowest id."""
    return _argmin(ctx.ongoing, tie_break, ctx.rng)


def sed(ctx: PolicyContext, tie_break: str = "lowest") -> int:
    """Server minimizing (ongoing + 1) / processors; ties go to the lowest id."""
    c = ctx.ongoing
    w = ctx.weights
    return _argmin([(c[j] + 1) / w[j] for j in range(len(c))], tie_break, ctx.rng)


def rlb_assign(ctx: PolicyContext, tie_break: str = "lowest") -> int:
    """Server minimizing (ongoing + 1) / inferred speed.

    Scale-invariant in the weights: multiplying every inferred speed by the
    same positive constant leaves the decision unchanged.  Counts move on
    every dispatch while the speeds stay frozen between step boundaries.
    """
    c = ctx.ongoing
    s = ctx.weights
    scores = []
    for j in range(len(c)):
        if s[j] <= 0:
            raise RuntimeError(f"inferred speed must be positive, got {s}")
        scores.append((c[j] + 1) / s[j])
    return _argmin(scores, tie_break, ctx.rng)


class Policy:
    """A dispatch policy bound to one load balancer.

    ``select`` is called on every arrival; ``on_step`` at each step boundary
    and may return a (reward, new_weights) pair; ``on_episode_end`` once per
    episode after the clock reaches the episode duration.

    Ties default to a seeded-random break: with integer processor counts the
    score-based policies hit exact ties constantly (every SED-balanced state
    is one), and always picking the lowest index starves small servers at
    light load.  Seeded streams keep runs bitwise reproducible; pass
    ``tie_break="lowest"`` for the index rule.
    """

    name = "base"
    wants_observations = False
    trains = False

    def __init__(self, tie_break: str = "random"):
        self.tie_break = tie_break
        self.rng: Optional[np.random.Generator] = None
        self.lb_id: Optional[int] = None

    def bind(self, topology, lb_id: int, rng: np.random.Generator) -> "Policy":
        self.lb_id = lb_id
        self.rng = rng
        return self

    def initial_weights(self, topology) -> list:
        return [float(p) for p, _ in topology.servers]

    def select(self, ctx: PolicyContext) -> int:
        raise NotImplementedError

    def on_step(self, view, now: float):
        return None, None

    def on_episode_end(self, view, now: float) -> None:
        return None


class EcmpPolicy(Policy):
    name = "ecmp"

    def select(self, ctx):
        return ecmp(ctx)


class WcmpPolicy(Policy):
    name = "wcmp"

    def select(self, ctx):
        return wcmp(ctx)


class LsqPolicy(Policy):
    name = "lsq"

    def select(self, ctx):
        return lsq(ctx, self.tie_break)


class SedPolicy(Policy):
    name = "sed"

    def select(self, ctx):
        return sed(ctx, self.tie_break)


BASELINE_POLICIES = {
    "ecmp": EcmpPolicy,
    "wcmp": WcmpPolicy,
    "lsq": LsqPolicy,
    "sed": SedPolicy,
}
