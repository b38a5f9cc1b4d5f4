"""Run statistics: mispricing, counterfactual price position, wealth
splits, strategy scatter data, stickiness and the best-response audit.

All functions here are pure over completed run logs (or plain arrays), so
they can be recomputed from persisted artifacts and parallelized freely.
Skipped observations (no-trade periods, degenerate counterfactual
brackets, empty conditioning sets) are represented as None in scalar form
and nan in array form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernel

OPTIMALITY_REL_TOL = 1e-12


def mispricing(p_star: float | None, payoff: float, risk_free: float) -> float | None:
    """Absolute relative gap between the clearing price and the discounted
    payoff. None on no-trade periods."""
    if p_star is None or math.isnan(p_star):
        return None
    return abs(p_star / (payoff / (1.0 + risk_free)) - 1.0)


def run_average_mispricing(series) -> float:
    """Mean mispricing over a run's trading periods (nan entries skipped)."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("empty mispricing series")
    valid = ~np.isnan(x)
    if not valid.any():
        raise ValueError("no trading periods in mispricing series")
    return float(x[valid].mean())


def moving_average(series, window: int) -> np.ndarray:
    """Trailing mean with the given lookback; entries before the window
    fills use the partial prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    n = x.size
    cs = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(n)
    lo = np.maximum(0, idx - window + 1)
    return (cs[idx + 1] - cs[lo]) / (idx + 1 - lo)


def nan_moving_average(series, window: int) -> np.ndarray:
    """Like :func:`moving_average` but nan entries are excluded from each
    window's mean; windows with no valid entries stay nan."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    n = x.size
    valid = ~np.isnan(x)
    cs = np.concatenate(([0.0], np.cumsum(np.where(valid, x, 0.0))))
    counts = np.concatenate(([0], np.cumsum(valid)))
    idx = np.arange(n)
    lo = np.maximum(0, idx - window + 1)
    num = cs[idx + 1] - cs[lo]
    den = counts[idx + 1] - counts[lo]
    out = np.full(n, np.nan)
    filled = den > 0
    out[filled] = num[filled] / den[filled]
    return out


def delta_stat(
    p_star: float | None, p_all_min: float | None, p_all_max: float | None
) -> float | None:
    """Position of the clearing price between the all-alpha-forced
    counterfactual prices: 0 at the minimum-liquidity price, 1 at the
    maximum. None when either bound is missing or the bracket degenerates."""
    if any(v is None or math.isnan(v) for v in (p_star, p_all_min, p_all_max)):
        return None
    if p_all_max == p_all_min:
        return None
    return (p_star - p_all_min) / (p_all_max - p_all_min)


def wealth_split(log) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Aggregate end-of-period wealth of traders classified informed or
    uninformed by the arm they chose that period. Returns (informed,
    uninformed, total) series."""
    informed_arm = np.array([a.informed for a in log.arms])
    inf_mask = informed_arm[log.choices]
    informed = np.where(inf_mask, log.wealth_after, 0.0).sum(axis=1)
    uninformed = np.where(inf_mask, 0.0, log.wealth_after).sum(axis=1)
    return informed, uninformed, informed + uninformed


@dataclass(frozen=True)
class ScatterPoint:
    """Per-trader strategy usage: how often they were informed/uninformed
    and how often they provided full liquidity (alpha = 1) in each state.
    Fractions are None when the conditioning count is zero."""

    trader_id: int
    informed_rounds: int
    frac_alpha1_informed: float | None
    uninformed_rounds: int
    frac_alpha1_uninformed: float | None


def strategy_scatter(choices: np.ndarray, arms) -> list[ScatterPoint]:
    """Build the per-trader scatter data from a (T, M) choice matrix."""
    informed_arm = np.array([a.informed for a in arms])
    alpha1_arm = np.array([a.alpha == 1.0 for a in arms])
    inf_mat = informed_arm[choices]
    a1_mat = alpha1_arm[choices]
    informed_rounds = inf_mat.sum(axis=0)
    uninformed_rounds = (~inf_mat).sum(axis=0)
    inf_a1 = (inf_mat & a1_mat).sum(axis=0)
    un_a1 = (~inf_mat & a1_mat).sum(axis=0)
    points = []
    for i in range(choices.shape[1]):
        points.append(
            ScatterPoint(
                trader_id=i,
                informed_rounds=int(informed_rounds[i]),
                frac_alpha1_informed=(
                    float(inf_a1[i] / informed_rounds[i])
                    if informed_rounds[i] > 0
                    else None
                ),
                uninformed_rounds=int(uninformed_rounds[i]),
                frac_alpha1_uninformed=(
                    float(un_a1[i] / uninformed_rounds[i])
                    if uninformed_rounds[i] > 0
                    else None
                ),
            )
        )
    return points


def stickiness_count(
    choices: np.ndarray, t: int, window: int = 300, threshold: float = 0.8
) -> int:
    """Number of traders whose modal arm over the trailing min(window, t)
    choices accounts for at least ``threshold`` of them (period t 1-based)."""
    if t < 1:
        raise ValueError("t must be >= 1")
    wlen = min(window, t)
    tail = choices[t - wlen : t]
    count = 0
    for i in range(choices.shape[1]):
        freq = np.bincount(tail[:, i]).max()
        if freq / wlen >= threshold:
            count += 1
    return count


def stickiness_over_time(
    choices: np.ndarray, n_arms: int, window: int = 300, threshold: float = 0.8
) -> np.ndarray:
    """The full stickiness series, one count per period."""
    return _kernel.stickiness_series(
        np.ascontiguousarray(choices, dtype=np.int16), n_arms, window, threshold
    )


# ---------------------------------------------------------------------------
# best-response audit
# ---------------------------------------------------------------------------


def response_wealth_table(log, t: int) -> np.ndarray:
    """(M, K) table of next-period wealth had trader i played arm k in
    period t (1-based), holding everyone else at their realized orders."""
    arm_alpha = np.array([a.alpha for a in log.arms])
    arm_informed = np.array([a.informed for a in log.arms], dtype=np.bool_)
    ti = t - 1
    f_prev = log.params.initial_payoff if ti == 0 else float(log.payoff[ti - 1])
    return _kernel.response_tables(
        np.ascontiguousarray(log.wealth_before(t)),
        np.ascontiguousarray(log.choices[ti]),
        float(log.payoff[ti]),
        f_prev,
        float(log.r_bar[ti]),
        arm_alpha,
        arm_informed,
        log.params.info_cost,
        log.params.risk_free,
        log.params.num_shares,
    )


def is_arm_optimal(table_row: np.ndarray, arm: int, rel_tol: float = OPTIMALITY_REL_TOL) -> bool:
    """An arm counts as optimal when its payoff is within ``rel_tol``
    (relative) of the best entry; exact ties are therefore all optimal."""
    return bool(table_row[arm] >= table_row.max() * (1.0 - rel_tol))


def best_response_strategy(log, t: int, trader_id: int) -> tuple[int, np.ndarray]:
    """The arm that would have maximized trader ``trader_id``'s settled
    wealth in period t against the others' realized orders, plus the full
    payoff table over the arm set."""
    table = response_wealth_table(log, t)[trader_id]
    return int(np.argmax(table)), table


def arm_optimality_counts(
    log, tail: int, arms_to_check: np.ndarray, rel_tol: float = OPTIMALITY_REL_TOL
) -> np.ndarray:
    """Per trader, the number of the final ``tail`` periods in which
    ``arms_to_check[i]`` was within tolerance of the best response."""
    horizon = len(log)
    if horizon < tail:
        raise ValueError("tail longer than horizon")
    arm_alpha = np.array([a.alpha for a in log.arms])
    arm_informed = np.array([a.informed for a in log.arms], dtype=np.bool_)
    return _kernel.audit_arm_optimality(
        np.ascontiguousarray(log.wealth0),
        log.wealth_after,
        log.choices,
        log.payoff,
        log.r_bar,
        log.params.initial_payoff,
        arm_alpha,
        arm_informed,
        log.params.info_cost,
        log.params.risk_free,
        log.params.num_shares,
        horizon - tail,
        np.ascontiguousarray(arms_to_check, dtype=np.int64),
        rel_tol,
    )


def modal_arms(choices: np.ndarray, tail: int, n_arms: int) -> tuple[np.ndarray, np.ndarray]:
    """Modal arm and its frequency over the final ``tail`` periods, per
    trader. Ties resolve to the lowest arm index."""
    window = choices[len(choices) - tail :]
    counts = np.zeros((choices.shape[1], n_arms), dtype=np.int64)
    for k in range(n_arms):
        counts[:, k] = (window == k).sum(axis=0)
    modal = counts.argmax(axis=1)
    freq = counts.max(axis=1) / tail
    return modal, freq


@dataclass(frozen=True)
class RunConvergence:
    """Per-run convergence audit: which traders settled on one arm and
    whether that arm tracked the best response."""

    modal_arm: np.ndarray
    converged: np.ndarray
    optimal: np.ndarray

    @property
    def converged_count(self) -> int:
        return int(self.converged.sum())

    @property
    def optimal_fraction(self) -> float | None:
        c = self.converged_count
        if c == 0:
            return None
        return float((self.converged & self.optimal).sum() / c)


def run_convergence(
    log, tail: int = 2000, stick_frac: float = 0.8, opt_frac: float = 0.5
) -> RunConvergence:
    """Audit one run: a trader converged when one arm covers at least
    ``stick_frac`` of their final ``tail`` choices, and is optimal when
    that arm was a best response in at least ``opt_frac`` of those periods."""
    if len(log) < tail:
        raise ValueError(f"horizon {len(log)} shorter than audit tail {tail}")
    modal, freq = modal_arms(log.choices, tail, len(log.arms))
    converged = freq >= stick_frac
    opt_counts = arm_optimality_counts(log, tail, modal)
    optimal = (opt_counts / tail) >= opt_frac
    return RunConvergence(modal_arm=modal, converged=converged, optimal=optimal)


@dataclass(frozen=True)
class ConvergenceReport:
    """Cross-run convergence aggregates for one information-cost cell."""

    converged_counts: tuple[int, ...]
    optimal_fractions: tuple[float | None, ...]
    mean_converged: float
    std_converged: float
    weighted_optimal_fraction: float | None


def summarize_convergence(
    counts, fractions, num_traders: int
) -> ConvergenceReport:
    """Aggregate per-run convergence stats; the optimal fraction of each
    run is weighted by that run's converged share."""
    counts = tuple(int(c) for c in counts)
    fractions = tuple(fractions)
    arr = np.array(counts, dtype=float)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    weights = [c / num_traders for c, f in zip(counts, fractions) if f is not None]
    vals = [f for f in fractions if f is not None]
    weighted = (
        float(np.average(vals, weights=weights))
        if vals and sum(weights) > 0
        else None
    )
    return ConvergenceReport(counts, fractions, mean, std, weighted)


def convergence_summary(
    logs, tail: int = 2000, stick_frac: float = 0.8, opt_frac: float = 0.5
) -> ConvergenceReport:
    """Full convergence audit over the runs of one cost cell."""
    results = [run_convergence(log, tail, stick_frac, opt_frac) for log in logs]
    num_traders = logs[0].params.num_traders
    return summarize_convergence(
        [r.converged_count for r in results],
        [r.optimal_fraction for r in results],
        num_traders,
    )
