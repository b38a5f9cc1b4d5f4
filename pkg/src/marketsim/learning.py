"""Per-trader multi-armed bandit learning with upper-confidence-bound
arm selection.

Each trader keeps a running mean of the per-period returns observed under
each arm and picks the arm maximizing mean + c * sqrt(ln t / n_k), where
t counts the trader's selections so far and n_k the pulls of arm k.
Untried arms take absolute precedence, in uniformly random order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BanditState:
    """Value estimates and pull counts for one trader's arm set.

    ``t`` counts selections (incremented by :func:`select_arm`); after a
    full select/update cycle the pull counts sum to ``t``.
    """

    n_arms: int
    q: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)
    t: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self.q = np.zeros(self.n_arms)
        self.counts = np.zeros(self.n_arms, dtype=np.int64)


def pick_among(candidates: np.ndarray, u: float) -> int:
    """Uniform choice from an index array using one uniform draw in [0, 1)."""
    n = len(candidates)
    idx = min(int(u * n), n - 1)
    return int(candidates[idx])


def select_arm(state: BanditState, c: float, rng: np.random.Generator) -> int:
    """Pick the next arm, advancing the selection counter.

    Untried arms are chosen first, uniformly at random; otherwise the
    exact argmax of the UCB score, with ties broken uniformly at random.
    Exactly one uniform is consumed per call regardless of tie structure,
    which keeps a trader's random stream aligned with their period count.
    """
    if state.n_arms == 0:
        raise ValueError("empty arm set")
    state.t += 1
    u = float(rng.random())
    untried = np.flatnonzero(state.counts == 0)
    if len(untried) > 0:
        return pick_among(untried, u)
    log_t = math.log(state.t)
    scores = np.empty(state.n_arms)
    for k in range(state.n_arms):
        scores[k] = state.q[k] + c * math.sqrt(log_t / state.counts[k])
    best = np.flatnonzero(scores == scores.max())
    return pick_among(best, u)


def update_estimate(state: BanditState, arm: int, reward: float) -> BanditState:
    """Fold one observed reward into the arm's running mean."""
    state.counts[arm] += 1
    state.q[arm] += (reward - state.q[arm]) / state.counts[arm]
    return state
