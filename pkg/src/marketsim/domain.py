"""Core domain types: market configuration, trader strategies, the risky
payoff process, expectation formation and reservation prices.

The market trades two assets: a risk-free bond paying ``risk_free`` per
period and a risky asset whose per-period payoff follows a multiplicative
random walk, F <- F * (1 + r) with r ~ Normal(drift, vol). Traders either
buy the payoff signal for the period (informed) or extrapolate from the
historical mean change (uninformed), and commit a fraction alpha of their
wealth to the asset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

MODE_STRATEGIC = "strategic"
MODE_COMPETITIVE = "competitive"

# Default configuration used across the experiment batteries.
DEFAULT_ALPHA_GRID = (0.01, 0.25, 0.5, 0.75, 1.0)
DEFAULT_COST_GRID = (0.0, 0.02, 0.04, 0.06, 0.08, 2.0, 4.0, 6.0, 8.0, 10.0)

_MAX_REDRAWS = 1000


@dataclass(frozen=True)
class Strategy:
    """One arm of a trader's strategy set: informedness x wealth share."""

    informed: bool
    alpha: float

    @property
    def label(self) -> str:
        side = "inf" if self.informed else "uninf"
        return f"{side}_a{self.alpha:g}"


@dataclass(frozen=True)
class MarketParams:
    """Full simulation configuration.

    ``mode`` selects the strategy set: ``strategic`` gives the full
    informedness x alpha product, ``competitive`` restricts traders to
    alpha = 1 (informed or uninformed only).
    """

    num_traders: int = 100
    num_shares: float = 1000.0
    info_cost: float = 0.0
    initial_payoff: float = 30.0
    risk_free: float = 0.01 / 252
    payoff_drift: float = 0.1 / 252
    payoff_vol: float = 0.01
    horizon: int = 2500
    exploration: float = 0.001
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    mode: str = MODE_STRATEGIC
    initial_wealth_range: tuple[float, float] = (0.0, 1000.0)
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.num_traders < 1:
            raise ValueError("num_traders must be >= 1")
        if not self.num_shares > 0:
            raise ValueError("num_shares must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.info_cost < 0:
            raise ValueError("info_cost must be nonnegative")
        if self.payoff_vol < 0:
            raise ValueError("payoff_vol must be nonnegative")
        if self.exploration < 0:
            raise ValueError("exploration must be nonnegative")
        if self.risk_free <= -1:
            raise ValueError("risk_free must exceed -1")
        if not self.initial_payoff > 0:
            raise ValueError("initial_payoff must be positive")
        if not self.alpha_grid:
            raise ValueError("alpha_grid must be nonempty")
        if any(not (0 < a <= 1) for a in self.alpha_grid):
            raise ValueError("every alpha must lie in (0, 1]")
        if len(set(self.alpha_grid)) != len(self.alpha_grid):
            raise ValueError("alpha_grid entries must be distinct")
        if tuple(sorted(self.alpha_grid)) != tuple(self.alpha_grid):
            raise ValueError("alpha_grid must be sorted ascending")
        if self.mode not in (MODE_STRATEGIC, MODE_COMPETITIVE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_COMPETITIVE and 1.0 not in self.alpha_grid:
            raise ValueError("competitive mode requires alpha = 1 in the grid")
        low, high = self.initial_wealth_range
        if low < 0 or high <= low:
            raise ValueError("initial_wealth_range must satisfy 0 <= low < high")

    def with_updates(self, **kwargs) -> "MarketParams":
        return replace(self, **kwargs)


def strategy_set(params: MarketParams) -> tuple[Strategy, ...]:
    """Enumerate the arms available under the configured mode.

    Strategic mode yields the informedness x alpha product (informed arms
    first, alpha ascending within each block); competitive mode restricts
    to the two alpha = 1 arms. Arm indices elsewhere refer to positions in
    this tuple.
    """
    if params.mode == MODE_COMPETITIVE:
        return (Strategy(True, 1.0), Strategy(False, 1.0))
    return tuple(
        Strategy(informed, alpha)
        for informed in (True, False)
        for alpha in params.alpha_grid
    )


class PayoffState:
    """State of the risky payoff process: current level plus the history
    of realized per-period changes and their running mean.

    The running mean uses Neumaier-compensated summation so the cached
    value stays within an ulp of the batch mean over long horizons.
    """

    __slots__ = ("current", "returns", "_sum", "_comp")

    def __init__(self, current: float, returns: list[float] | None = None):
        if not current > 0:
            raise ValueError("payoff must be positive")
        self.current = current
        self.returns = []
        self._sum = 0.0
        self._comp = 0.0
        for r in returns or ():
            self.append_return(r)

    def append_return(self, r: float) -> None:
        self.returns.append(r)
        s = self._sum
        t = s + r
        if abs(s) >= abs(r):
            self._comp += (s - t) + r
        else:
            self._comp += (r - t) + s
        self._sum = t

    @property
    def mean_return(self) -> float:
        """Arithmetic mean of observed changes; 0 before any observation."""
        n = len(self.returns)
        if n == 0:
            return 0.0
        return (self._sum + self._comp) / n


def advance_payoff(
    state: PayoffState, params: MarketParams, rng: np.random.Generator
) -> tuple[PayoffState, float]:
    """Draw the next per-period change and advance the payoff level.

    Draws r ~ Normal(drift, vol), rejecting (and redrawing) any draw with
    1 + r <= 0 so the payoff stays strictly positive. Returns the mutated
    state together with the accepted draw. Callers that must not expose
    the current draw to uninformed expectations read ``mean_return``
    before calling this.
    """
    r = float(rng.normal(params.payoff_drift, params.payoff_vol))
    redraws = 0
    while 1.0 + r <= 0.0:
        redraws += 1
        if redraws > _MAX_REDRAWS:
            raise RuntimeError("payoff draw rejected too many times; check drift/vol")
        r = float(rng.normal(params.payoff_drift, params.payoff_vol))
    state.current = state.current * (1.0 + r)
    state.append_return(r)
    return state, r


def mean_historical_return(history) -> float:
    """Arithmetic mean of a sequence of per-period changes (0 if empty)."""
    seq = list(history)
    if not seq:
        return 0.0
    return math.fsum(seq) / len(seq)


def expected_payoff(
    informed: bool, f_current: float, f_previous: float, mean_return: float
) -> float:
    """A trader's expectation of the payoff about to be delivered.

    Informed traders observe it exactly; uninformed traders extrapolate
    the previous payoff by the historical mean change (which excludes the
    current period's draw).
    """
    if informed:
        return f_current
    return f_previous * (1.0 + mean_return)


def reservation_price(expected: float, risk_free: float) -> float:
    """Maximum price a risk-neutral trader pays: the discounted expectation."""
    return expected / (1.0 + risk_free)


@dataclass
class TraderState:
    """Per-trader view: wealth plus the bandit learning state."""

    trader_id: int
    wealth: float
    bandit: "BanditState" = None  # type: ignore[assignment]
    last_strategy: Strategy | None = None

    def __post_init__(self) -> None:
        if self.wealth < 0:
            raise ValueError("wealth must be nonnegative")
