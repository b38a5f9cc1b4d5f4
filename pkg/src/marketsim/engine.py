"""One simulation run: the per-period timeline, wealth settlement and
deterministic random-stream discipline.

A period unfolds as: draw the payoff change (the informed signal), let
every trader pick an arm, charge information costs, build budget orders
and reservation prices, clear the market together with the two
all-alpha-forced counterfactuals, settle wealth, feed percentage returns
to the bandits, and only then publish the period's draw to the observable
return history.

Randomness is forked from one master seed into one stream per trader plus
one for the payoff process, so per-trader tie-breaking never perturbs the
payoff path and vice versa. ``run_simulation`` executes on a compiled
kernel by default; ``Simulation.step`` is the equivalent pure-Python path
built from the public per-operation API (the two are asserted
bit-identical in the test suite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernel
from .domain import (
    MarketParams,
    PayoffState,
    Strategy,
    TraderState,
    advance_payoff,
    strategy_set,
)
from .learning import BanditState, select_arm, update_estimate
from .metrics import delta_stat, mispricing

_SPEND_SLACK = 1e-9


def settle_trader(
    wealth_pre: float,
    informed: bool,
    info_cost: float,
    budget: float,
    shares: float,
    price: float | None,
    payoff: float,
    risk_free: float,
) -> float:
    """Settle one trader's period: shares pay the risky payoff, everything
    not spent on them (including rationed-out budget) earns the risk-free
    rate. Wealth is floored at zero."""
    if wealth_pre < 0:
        raise ValueError("wealth_pre must be nonnegative")
    cost = min(wealth_pre, info_cost) if informed else 0.0
    wpost = wealth_pre - cost
    if price is None:
        wealth = wpost * (1.0 + risk_free)
    else:
        if shares * price > budget + _SPEND_SLACK:
            raise ValueError("allocation spend exceeds committed budget")
        wealth = shares * payoff + (wpost - shares * price) * (1.0 + risk_free)
    return wealth if wealth > 0.0 else 0.0


@dataclass
class StepRecord:
    """Observables of one simulated period.

    Per-trader arrays are aligned with trader ids 0..M-1; ``choices``
    holds arm indices into the run's strategy tuple. No-trade periods and
    degenerate counterfactual brackets are recorded as nan.
    """

    t: int
    payoff: float
    r_change: float
    r_bar: float
    price: float
    epsilon: float
    p_cf_alpha_min: float
    p_cf_alpha_max: float
    delta: float
    capped: bool
    n_informed: int
    n_alpha1: int
    wealth_informed: float
    wealth_uninformed: float
    wealth_total: float
    choices: np.ndarray
    budgets: np.ndarray
    allocations: np.ndarray
    wealth_after: np.ndarray

    @property
    def traded(self) -> bool:
        return not math.isnan(self.price)


class RunLog:
    """Columnar record of a full run plus the inputs that produced it."""

    def __init__(
        self,
        params: MarketParams,
        seed: int,
        arms: tuple[Strategy, ...],
        wealth0: np.ndarray,
        columns: dict[str, np.ndarray],
        redraws: int = 0,
    ):
        self.params = params
        self.seed = seed
        self.arms = arms
        self.wealth0 = wealth0
        self.redraws = redraws
        self.payoff = columns["payoff"]
        self.r_change = columns["r_change"]
        self.r_bar = columns["r_bar"]
        self.price = columns["price"]
        self.epsilon = columns["epsilon"]
        self.p_cf_alpha_min = columns["p_cf_alpha_min"]
        self.p_cf_alpha_max = columns["p_cf_alpha_max"]
        self.delta = columns["delta"]
        self.capped = columns["capped"]
        self.n_informed = columns["n_informed"]
        self.n_alpha1 = columns["n_alpha1"]
        self.wealth_informed = columns["wealth_informed"]
        self.wealth_uninformed = columns["wealth_uninformed"]
        self.wealth_total = columns["wealth_total"]
        self.choices = columns["choices"]
        self.budgets = columns["budgets"]
        self.allocations = columns["allocations"]
        self.wealth_after = columns["wealth_after"]

    def __len__(self) -> int:
        return len(self.payoff)

    def record(self, t: int) -> StepRecord:
        """Materialize the StepRecord of period ``t`` (1-based)."""
        ti = t - 1
        return StepRecord(
            t=t,
            payoff=float(self.payoff[ti]),
            r_change=float(self.r_change[ti]),
            r_bar=float(self.r_bar[ti]),
            price=float(self.price[ti]),
            epsilon=float(self.epsilon[ti]),
            p_cf_alpha_min=float(self.p_cf_alpha_min[ti]),
            p_cf_alpha_max=float(self.p_cf_alpha_max[ti]),
            delta=float(self.delta[ti]),
            capped=bool(self.capped[ti]),
            n_informed=int(self.n_informed[ti]),
            n_alpha1=int(self.n_alpha1[ti]),
            wealth_informed=float(self.wealth_informed[ti]),
            wealth_uninformed=float(self.wealth_uninformed[ti]),
            wealth_total=float(self.wealth_total[ti]),
            choices=self.choices[ti],
            budgets=self.budgets[ti],
            allocations=self.allocations[ti],
            wealth_after=self.wealth_after[ti],
        )

    def records(self):
        for t in range(1, len(self) + 1):
            yield self.record(t)

    def wealth_before(self, t: int) -> np.ndarray:
        """Trader wealth at the start of period ``t`` (1-based), before costs."""
        return self.wealth0 if t == 1 else self.wealth_after[t - 2]


def _prepare_streams(params: MarketParams, seed: int):
    """Initial wealths from the master stream, then one child stream per
    trader plus one for the payoff process."""
    ss = np.random.SeedSequence(seed)
    master = np.random.Generator(np.random.PCG64(ss))
    low, high = params.initial_wealth_range
    # 1 - u maps [0, 1) onto (0, 1], keeping the lower endpoint open
    wealth0 = low + (high - low) * (1.0 - master.random(params.num_traders))
    children = ss.spawn(params.num_traders + 1)
    payoff_rng = np.random.Generator(np.random.PCG64(children[0]))
    trader_rngs = [np.random.Generator(np.random.PCG64(c)) for c in children[1:]]
    return wealth0, payoff_rng, trader_rngs


def _draw_payoff_changes(params: MarketParams, rng: np.random.Generator):
    """Pre-draw the run's payoff changes; any draw with 1 + r <= 0 is
    replaced by further draws, in index order. Returns (draws, redraws)."""
    draws = rng.normal(params.payoff_drift, params.payoff_vol, params.horizon)
    redraws = 0
    for idx in np.flatnonzero(1.0 + draws <= 0.0):
        while 1.0 + draws[idx] <= 0.0:
            redraws += 1
            if redraws > 1000 * params.horizon:
                raise RuntimeError("payoff draws rejected persistently")
            draws[idx] = rng.normal(params.payoff_drift, params.payoff_vol)
    return draws, redraws


class Simulation:
    """Stateful pure-Python run, stepping one period at a time through the
    public domain/auction/learning operations. Used as the reference
    semantics for the compiled kernel and for inspecting single periods."""

    def __init__(self, params: MarketParams, seed: int | None = None):
        self.params = params
        self.seed = params.master_seed if seed is None else seed
        self.arms = strategy_set(params)
        wealth0, payoff_rng, trader_rngs = _prepare_streams(params, self.seed)
        self.wealth0 = wealth0
        self.wealth = [float(w) for w in wealth0]
        self.payoff_rng = payoff_rng
        self.trader_rngs = trader_rngs
        self.bandits = [BanditState(len(self.arms)) for _ in range(params.num_traders)]
        self.payoff_state = PayoffState(params.initial_payoff)
        self.f_prev = params.initial_payoff
        self.t = 0
        self.redraws = 0
        self._last_choices: np.ndarray | None = None

    def trader_states(self) -> list[TraderState]:
        """Per-trader view of the current wealth and learning state."""
        return [
            TraderState(
                trader_id=i,
                wealth=self.wealth[i],
                bandit=self.bandits[i],
                last_strategy=(
                    self.arms[self._last_choices[i]]
                    if self._last_choices is not None
                    else None
                ),
            )
            for i in range(self.params.num_traders)
        ]

    def step(self) -> StepRecord:
        p = self.params
        m = p.num_traders
        arms = self.arms
        self.t += 1
        t = self.t

        r_bar = self.payoff_state.mean_return
        f_before = self.payoff_state.current
        _, r_change = advance_payoff(self.payoff_state, p, self.payoff_rng)
        f_cur = self.payoff_state.current
        f_prev = f_before

        choices = np.empty(m, dtype=np.int16)
        for i in range(m):
            choices[i] = select_arm(self.bandits[i], p.exploration, self.trader_rngs[i])

        alpha_lo = p.alpha_grid[0]
        alpha_hi = p.alpha_grid[-1]
        budgets = np.empty(m)
        wpost = np.empty(m)
        b_inf = b_un = 0.0
        b_lo_inf = b_lo_un = b_hi_inf = b_hi_un = 0.0
        n_informed = n_alpha1 = 0
        for i in range(m):
            arm = arms[choices[i]]
            w_i = self.wealth[i]
            if arm.informed:
                cost = w_i if w_i < p.info_cost else p.info_cost
                wp = w_i - cost
            else:
                wp = w_i
            wpost[i] = wp
            b = arm.alpha * wp
            budgets[i] = b
            if arm.informed:
                b_inf += b
                b_lo_inf += alpha_lo * wp
                b_hi_inf += alpha_hi * wp
                n_informed += 1
            else:
                b_un += b
                b_lo_un += alpha_lo * wp
                b_hi_un += alpha_hi * wp
            if arm.alpha == 1.0:
                n_alpha1 += 1

        one_rf = 1.0 + p.risk_free
        res_inf = f_cur / one_rf
        res_un = (f_prev * (1.0 + r_bar)) / one_rf

        price, capped, inf_in, un_in, pool = _kernel.clear_informed_uninformed(
            res_inf, b_inf, res_un, b_un, p.num_shares
        )
        p_lo, _, _, _, _ = _kernel.clear_informed_uninformed(
            res_inf, b_lo_inf, res_un, b_lo_un, p.num_shares
        )
        p_hi, _, _, _, _ = _kernel.clear_informed_uninformed(
            res_inf, b_hi_inf, res_un, b_hi_un, p.num_shares
        )
        traded = price > 0.0
        factor = 0.0
        if traded:
            factor = p.num_shares / pool if capped else 1.0 / price

        allocations = np.empty(m)
        wealth_after = np.empty(m)
        w_inf_sum = w_un_sum = w_tot = 0.0
        for i in range(m):
            arm = arms[choices[i]]
            participates = inf_in if arm.informed else un_in
            q = budgets[i] * factor if traded and participates else 0.0
            wa = settle_trader(
                self.wealth[i],
                arm.informed,
                p.info_cost,
                budgets[i],
                q,
                price if traded and participates else None,
                f_cur,
                p.risk_free,
            )
            allocations[i] = q
            wealth_after[i] = wa
            w_pre = self.wealth[i]
            reward = (wa - w_pre) / w_pre if w_pre > 0.0 else 0.0
            update_estimate(self.bandits[i], int(choices[i]), reward)
            if arm.informed:
                w_inf_sum += wa
            else:
                w_un_sum += wa
            w_tot += wa
            self.wealth[i] = wa

        eps = mispricing(price if traded else None, f_cur, p.risk_free)
        delta = delta_stat(
            price if traded else None,
            p_lo if p_lo > 0.0 else None,
            p_hi if p_hi > 0.0 else None,
        )
        self.f_prev = f_cur
        self._last_choices = choices
        return StepRecord(
            t=t,
            payoff=f_cur,
            r_change=r_change,
            r_bar=r_bar,
            price=price if traded else math.nan,
            epsilon=eps if eps is not None else math.nan,
            p_cf_alpha_min=p_lo if p_lo > 0.0 else math.nan,
            p_cf_alpha_max=p_hi if p_hi > 0.0 else math.nan,
            delta=delta if delta is not None else math.nan,
            capped=bool(capped) if traded else False,
            n_informed=n_informed,
            n_alpha1=n_alpha1,
            wealth_informed=w_inf_sum,
            wealth_uninformed=w_un_sum,
            wealth_total=w_tot,
            choices=choices,
            budgets=budgets,
            allocations=allocations,
            wealth_after=wealth_after,
        )


def _log_from_records(params, seed, arms, wealth0, records, redraws) -> RunLog:
    horizon = len(records)
    m = params.num_traders
    columns = {
        "payoff": np.array([r.payoff for r in records]),
        "r_change": np.array([r.r_change for r in records]),
        "r_bar": np.array([r.r_bar for r in records]),
        "price": np.array([r.price for r in records]),
        "epsilon": np.array([r.epsilon for r in records]),
        "p_cf_alpha_min": np.array([r.p_cf_alpha_min for r in records]),
        "p_cf_alpha_max": np.array([r.p_cf_alpha_max for r in records]),
        "delta": np.array([r.delta for r in records]),
        "capped": np.array([r.capped for r in records], dtype=np.int8),
        "n_informed": np.array([r.n_informed for r in records], dtype=np.int32),
        "n_alpha1": np.array([r.n_alpha1 for r in records], dtype=np.int32),
        "wealth_informed": np.array([r.wealth_informed for r in records]),
        "wealth_uninformed": np.array([r.wealth_uninformed for r in records]),
        "wealth_total": np.array([r.wealth_total for r in records]),
        "choices": np.vstack([r.choices for r in records]).reshape(horizon, m),
        "budgets": np.vstack([r.budgets for r in records]).reshape(horizon, m),
        "allocations": np.vstack([r.allocations for r in records]).reshape(horizon, m),
        "wealth_after": np.vstack([r.wealth_after for r in records]).reshape(horizon, m),
    }
    return RunLog(params, seed, arms, wealth0, columns, redraws)


def run_simulation(
    params: MarketParams, seed: int | None = None, use_kernel: bool = True
) -> RunLog:
    """Run the full horizon and return the complete log.

    The kernel path and the step-by-step path are interchangeable; both
    are pure functions of (params, seed).
    """
    run_seed = params.master_seed if seed is None else seed
    if not use_kernel:
        sim = Simulation(params, run_seed)
        records = [sim.step() for _ in range(params.horizon)]
        return _log_from_records(
            params, run_seed, sim.arms, sim.wealth0, records, sim.redraws
        )

    arms = strategy_set(params)
    wealth0, payoff_rng, trader_rngs = _prepare_streams(params, run_seed)
    r_draws, redraws = _draw_payoff_changes(params, payoff_rng)
    sel_u = np.empty((params.horizon, params.num_traders))
    for i, rng in enumerate(trader_rngs):
        sel_u[:, i] = rng.random(params.horizon)
    arm_alpha = np.array([s.alpha for s in arms])
    arm_informed = np.array([s.informed for s in arms], dtype=np.bool_)

    out = _kernel.run_market(
        wealth0,
        r_draws,
        sel_u,
        arm_alpha,
        arm_informed,
        params.initial_payoff,
        params.num_shares,
        params.info_cost,
        params.risk_free,
        params.exploration,
        params.alpha_grid[0],
        params.alpha_grid[-1],
    )
    (
        f_out,
        rbar_out,
        price_out,
        eps_out,
        pmin_out,
        pmax_out,
        delta_out,
        capped_out,
        n_inf_out,
        n_a1_out,
        w_inf_out,
        w_un_out,
        w_tot_out,
        choices,
        budgets,
        allocs,
        wafter,
        _q_est,
        _counts,
    ) = out
    columns = {
        "payoff": f_out,
        "r_change": r_draws,
        "r_bar": rbar_out,
        "price": price_out,
        "epsilon": eps_out,
        "p_cf_alpha_min": pmin_out,
        "p_cf_alpha_max": pmax_out,
        "delta": delta_out,
        "capped": capped_out,
        "n_informed": n_inf_out,
        "n_alpha1": n_a1_out,
        "wealth_informed": w_inf_out,
        "wealth_uninformed": w_un_out,
        "wealth_total": w_tot_out,
        "choices": choices,
        "budgets": budgets,
        "allocations": allocs,
        "wealth_after": wafter,
    }
    return RunLog(params, run_seed, arms, wealth0, columns, redraws)
