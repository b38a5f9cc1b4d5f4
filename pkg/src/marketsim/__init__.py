"""Agent-based call-auction market simulator with bandit-learning traders."""

from .auction import ClearingResult, Order, clear_market, demand_at_price, two_trader_profit
from .domain import (
    MarketParams,
    PayoffState,
    Strategy,
    TraderState,
    advance_payoff,
    expected_payoff,
    mean_historical_return,
    reservation_price,
    strategy_set,
)
from .engine import RunLog, Simulation, StepRecord, run_simulation, settle_trader
from .learning import BanditState, select_arm, update_estimate
from .metrics import (
    ConvergenceReport,
    ScatterPoint,
    best_response_strategy,
    convergence_summary,
    delta_stat,
    mispricing,
    moving_average,
    run_average_mispricing,
    stickiness_count,
    strategy_scatter,
    wealth_split,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
