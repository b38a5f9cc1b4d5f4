"""Single-period call-auction clearing.

Traders submit budget orders: trader i commits B_i monetary units and
buys at any price up to their reservation R_i, so individual demand is
B_i / P for P <= R_i and 0 above. Supply is a fixed block of N shares
from a price-insensitive liquidity seeker. The auctioneer finds the price
where aggregate demand meets N; when demand at the binding reservation
level still exceeds N the price is capped at that reservation and the
participating traders are rationed pro rata by budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Order:
    """A budget-at-reservation demand schedule for one trader."""

    trader_id: int
    budget: float
    reservation: float

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise ValueError(f"order {self.trader_id}: budget must be nonnegative")
        if not self.reservation > 0:
            raise ValueError(f"order {self.trader_id}: reservation must be positive")


@dataclass(frozen=True)
class ClearingResult:
    """Outcome of one clearing: price, per-trader share allocations, and
    whether the price was capped at a reservation level. ``price`` is None
    when no budget was committed (no trade)."""

    price: float | None
    allocations: dict[int, float]
    capped: bool
    participating: frozenset[int]

    @property
    def traded(self) -> bool:
        return self.price is not None


def demand_at_price(orders: list[Order], price: float) -> float:
    """Aggregate share demand at a price: sum of B_i / P over traders whose
    reservation is at or above P (boundary inclusive)."""
    if not price > 0:
        raise ValueError("price must be positive")
    return math.fsum(o.budget for o in orders if o.reservation >= price) / price


def scan_levels(
    reservations: list[float], budgets: list[float], num_shares: float
) -> tuple[float, bool, int]:
    """Price search over aggregated reservation levels.

    ``reservations`` must be strictly descending with ``budgets`` holding
    the total budget committed at each level. Scans prefixes top-down: at
    level k the candidate price is (prefix budget) / N. A candidate above
    the level's reservation means demand still exceeds supply there, so
    the price is capped at that reservation and participants are rationed;
    a candidate above the next level's reservation clears within the
    current bracket. Returns (price, capped, cut) with ``cut`` the number
    of participating levels. Raises ValueError if total budget is 0.
    """
    total = 0.0
    nlev = len(reservations)
    for k in range(nlev):
        total = total + budgets[k]
        candidate = total / num_shares
        if candidate > reservations[k]:
            return reservations[k], True, k + 1
        if k == nlev - 1 or candidate > reservations[k + 1]:
            if total > 0.0:
                return candidate, False, k + 1
    raise ValueError("no budget committed")


def clear_market(orders: list[Order], num_shares: float) -> ClearingResult:
    """Clear a set of budget orders against N shares of supply.

    Reservation levels are grouped by exact equality, scanned from the
    highest down. Uncapped participants spend their full budget at the
    clearing price; capped (rationed) participants receive shares pro rata
    to budget, q_i = N * B_i / sum(B). Traders priced out receive 0.
    """
    if not num_shares > 0:
        raise ValueError("num_shares must be positive")
    for o in orders:
        # dataclass validation covers construction; re-check for callers
        # building orders by other means
        if o.budget < 0 or not o.reservation > 0:
            raise ValueError(f"invalid order for trader {o.trader_id}")

    allocations = {o.trader_id: 0.0 for o in orders}
    by_level: dict[float, list[Order]] = {}
    for o in orders:
        by_level.setdefault(o.reservation, []).append(o)
    levels = sorted(by_level, reverse=True)
    budgets = [math.fsum(o.budget for o in by_level[r]) for r in levels]

    if math.fsum(budgets) == 0.0:
        return ClearingResult(None, allocations, False, frozenset())

    price, capped, cut = scan_levels(levels, budgets, num_shares)
    participants = [o for r in levels[:cut] for o in by_level[r]]
    if capped:
        pool = math.fsum(o.budget for o in participants)
        factor = num_shares / pool
        for o in participants:
            allocations[o.trader_id] = o.budget * factor
    else:
        for o in participants:
            allocations[o.trader_id] = o.budget / price
    return ClearingResult(
        price, allocations, capped, frozenset(o.trader_id for o in participants)
    )


def two_trader_profit(
    payoff: float, num_shares: float, budget_a: float, budget_b: float
) -> float:
    """Closed-form trading profit of trader A in the two-trader uncapped
    market: (F - P*) * q_A with P* = (B_A + B_B) / N and pro-rata shares.

    Valid only while the implied price stays at or below the common
    reservation (uncapped regime); used as an independent check on the
    full clearing path.
    """
    total = budget_a + budget_b
    if total <= 0:
        raise ValueError("at least one committed budget must be positive")
    return payoff * num_shares * budget_a / total - budget_a
