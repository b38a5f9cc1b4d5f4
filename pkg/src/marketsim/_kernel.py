"""Compiled hot loops: the per-run market kernel, the best-response audit
and the rolling strategy-stickiness counter.

The kernel mirrors the per-operation reference path in ``engine`` /
``learning`` / ``auction`` step for step; the test suite asserts that both
paths produce bit-identical runs. Scalar expressions here must therefore
stay textually in sync with their reference twins (same operation order,
``math.log``/``math.sqrt`` rather than their numpy variants, and plain
left-fold accumulation for budget sums).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NO_TRADE = -1.0  # price sentinel inside kernels; surfaced as nan/None


@njit(cache=True)
def clear_one_level(reservation, budget, num_shares):
    """Clearing with a single reservation level.

    Returns (price, capped, cut, pool): ``cut`` is the number of
    participating levels (0 on no trade) and ``pool`` the participating
    budget mass used for pro-rata rationing.
    """
    if budget == 0.0:
        return NO_TRADE, False, 0, 0.0
    candidate = budget / num_shares
    if candidate > reservation:
        return reservation, True, 1, budget
    return candidate, False, 1, budget


@njit(cache=True)
def clear_two_levels(res_hi, budget_hi, res_lo, budget_lo, num_shares):
    """Two-level variant of the reservation-level scan (res_hi > res_lo)."""
    total = budget_hi
    candidate = total / num_shares
    if candidate > res_hi:
        return res_hi, True, 1, total
    if candidate > res_lo and total > 0.0:
        return candidate, False, 1, total
    total = total + budget_lo
    candidate = total / num_shares
    if candidate > res_lo:
        return res_lo, True, 2, total
    if total > 0.0:
        return candidate, False, 2, total
    return NO_TRADE, False, 0, 0.0


@njit(cache=True)
def clear_informed_uninformed(res_inf, b_inf, res_un, b_un, num_shares):
    """Clear one period's two trader classes, merging equal reservations.

    Returns (price, capped, informed_in, uninformed_in, pool) where the
    *_in flags say whether that class participates.
    """
    if res_inf == res_un:
        price, capped, cut, pool = clear_one_level(res_inf, b_inf + b_un, num_shares)
        traded = cut > 0
        return price, capped, traded, traded, pool
    if res_inf > res_un:
        price, capped, cut, pool = clear_two_levels(
            res_inf, b_inf, res_un, b_un, num_shares
        )
        return price, capped, cut > 0, cut > 1, pool
    price, capped, cut, pool = clear_two_levels(
        res_un, b_un, res_inf, b_inf, num_shares
    )
    return price, capped, cut > 1, cut > 0, pool


@njit(cache=True)
def run_market(
    wealth0,
    r_draws,
    sel_u,
    arm_alpha,
    arm_informed,
    initial_payoff,
    num_shares,
    info_cost,
    risk_free,
    exploration,
    alpha_lo,
    alpha_hi,
):
    """Execute one full simulation run.

    Per period: draw the payoff change, let every trader pick an arm by
    UCB (untried arms first, one uniform consumed per trader per period),
    pay information costs, clear the market plus the two all-alpha-forced
    counterfactuals, settle wealth and feed percentage returns back into
    the bandit estimates. All randomness is pre-drawn by the caller.
    """
    horizon, num_traders = sel_u.shape
    n_arms = arm_alpha.shape[0]
    one_rf = 1.0 + risk_free

    q_est = np.zeros((num_traders, n_arms))
    counts = np.zeros((num_traders, n_arms), dtype=np.int64)
    wealth = wealth0.copy()

    f_out = np.empty(horizon)
    rbar_out = np.empty(horizon)
    price_out = np.empty(horizon)
    eps_out = np.empty(horizon)
    pmin_out = np.empty(horizon)
    pmax_out = np.empty(horizon)
    delta_out = np.empty(horizon)
    capped_out = np.zeros(horizon, dtype=np.int8)
    n_inf_out = np.zeros(horizon, dtype=np.int32)
    n_a1_out = np.zeros(horizon, dtype=np.int32)
    w_inf_out = np.empty(horizon)
    w_un_out = np.empty(horizon)
    w_tot_out = np.empty(horizon)
    choices = np.empty((horizon, num_traders), dtype=np.int16)
    budgets = np.empty((horizon, num_traders))
    allocs = np.empty((horizon, num_traders))
    wafter = np.empty((horizon, num_traders))

    scores = np.empty(n_arms)
    wpost = np.empty(num_traders)

    f_prev = initial_payoff
    rbar_sum = 0.0
    rbar_comp = 0.0
    rbar_n = 0

    for ti in range(horizon):
        t = ti + 1
        rbar = (rbar_sum + rbar_comp) / rbar_n if rbar_n > 0 else 0.0
        r = r_draws[ti]
        f_cur = f_prev * (1.0 + r)
        log_t = math.log(t)

        # --- arm selection -------------------------------------------------
        for i in range(num_traders):
            u = sel_u[ti, i]
            n_untried = 0
            for k in range(n_arms):
                if counts[i, k] == 0:
                    n_untried += 1
            arm = 0
            if n_untried > 0:
                rank = int(u * n_untried)
                if rank > n_untried - 1:
                    rank = n_untried - 1
                seen = 0
                for k in range(n_arms):
                    if counts[i, k] == 0:
                        if seen == rank:
                            arm = k
                            break
                        seen += 1
            else:
                best = -np.inf
                for k in range(n_arms):
                    s = q_est[i, k] + exploration * math.sqrt(log_t / counts[i, k])
                    scores[k] = s
                    if s > best:
                        best = s
                n_tied = 0
                for k in range(n_arms):
                    if scores[k] == best:
                        n_tied += 1
                rank = int(u * n_tied)
                if rank > n_tied - 1:
                    rank = n_tied - 1
                seen = 0
                for k in range(n_arms):
                    if scores[k] == best:
                        if seen == rank:
                            arm = k
                            break
                        seen += 1
            choices[ti, i] = arm

        # --- costs, budgets, reservation-level aggregates ------------------
        b_inf = 0.0
        b_un = 0.0
        b_lo_inf = 0.0
        b_lo_un = 0.0
        b_hi_inf = 0.0
        b_hi_un = 0.0
        n_informed = 0
        n_alpha1 = 0
        for i in range(num_traders):
            arm = choices[ti, i]
            alpha = arm_alpha[arm]
            w_i = wealth[i]
            if arm_informed[arm]:
                cost = w_i if w_i < info_cost else info_cost
                wp = w_i - cost
            else:
                wp = w_i
            wpost[i] = wp
            b = alpha * wp
            budgets[ti, i] = b
            if arm_informed[arm]:
                b_inf += b
                b_lo_inf += alpha_lo * wp
                b_hi_inf += alpha_hi * wp
                n_informed += 1
            else:
                b_un += b
                b_lo_un += alpha_lo * wp
                b_hi_un += alpha_hi * wp
            if alpha == 1.0:
                n_alpha1 += 1
        n_inf_out[ti] = n_informed
        n_a1_out[ti] = n_alpha1

        res_inf = f_cur / one_rf
        res_un = (f_prev * (1.0 + rbar)) / one_rf

        price, capped, inf_in, un_in, pool = clear_informed_uninformed(
            res_inf, b_inf, res_un, b_un, num_shares
        )
        p_lo, _, _, _, _ = clear_informed_uninformed(
            res_inf, b_lo_inf, res_un, b_lo_un, num_shares
        )
        p_hi, _, _, _, _ = clear_informed_uninformed(
            res_inf, b_hi_inf, res_un, b_hi_un, num_shares
        )

        # --- settlement, rewards, bandit update ----------------------------
        w_inf_sum = 0.0
        w_un_sum = 0.0
        w_tot = 0.0
        if price > 0.0:
            factor = num_shares / pool if capped else 1.0 / price
        else:
            factor = 0.0
        for i in range(num_traders):
            arm = choices[ti, i]
            informed = arm_informed[arm]
            participates = inf_in if informed else un_in
            if price > 0.0 and participates:
                q = budgets[ti, i] * factor
                wa = q * f_cur + (wpost[i] - q * price) * one_rf
            else:
                q = 0.0
                wa = wpost[i] * one_rf
            if wa < 0.0:
                wa = 0.0
            allocs[ti, i] = q
            w_pre = wealth[i]
            reward = (wa - w_pre) / w_pre if w_pre > 0.0 else 0.0
            counts[i, arm] += 1
            q_est[i, arm] += (reward - q_est[i, arm]) / counts[i, arm]
            wafter[ti, i] = wa
            wealth[i] = wa
            if informed:
                w_inf_sum += wa
            else:
                w_un_sum += wa
            w_tot += wa

        # --- period records -------------------------------------------------
        f_out[ti] = f_cur
        rbar_out[ti] = rbar
        w_inf_out[ti] = w_inf_sum
        w_un_out[ti] = w_un_sum
        w_tot_out[ti] = w_tot
        if price > 0.0:
            price_out[ti] = price
            eps_out[ti] = abs(price / (f_cur / one_rf) - 1.0)
            capped_out[ti] = 1 if capped else 0
        else:
            price_out[ti] = np.nan
            eps_out[ti] = np.nan
        pmin_out[ti] = p_lo if p_lo > 0.0 else np.nan
        pmax_out[ti] = p_hi if p_hi > 0.0 else np.nan
        if price > 0.0 and p_hi > 0.0 and p_lo > 0.0 and p_hi != p_lo:
            delta_out[ti] = (price - p_lo) / (p_hi - p_lo)
        else:
            delta_out[ti] = np.nan

        # the current draw becomes part of the observable history only
        # after trading settles
        s = rbar_sum
        tmp = s + r
        if abs(s) >= abs(r):
            rbar_comp += (s - tmp) + r
        else:
            rbar_comp += (r - tmp) + s
        rbar_sum = tmp
        rbar_n += 1
        f_prev = f_cur

    return (
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
        q_est,
        counts,
    )


@njit(cache=True)
def response_tables(
    wealth_pre,
    choices_row,
    f_cur,
    f_prev,
    rbar,
    arm_alpha,
    arm_informed,
    info_cost,
    risk_free,
    num_shares,
):
    """Next-period wealth for every trader under every alternative arm.

    Holds all other traders at their realized orders and re-clears the
    market for each (trader, arm) pair; entry [i, k] is trader i's settled
    wealth had they played arm k this period.
    """
    num_traders = wealth_pre.shape[0]
    n_arms = arm_alpha.shape[0]
    one_rf = 1.0 + risk_free
    res_inf = f_cur / one_rf
    res_un = (f_prev * (1.0 + rbar)) / one_rf

    realized_b = np.empty(num_traders)
    realized_informed = np.empty(num_traders, dtype=np.bool_)
    b_inf = 0.0
    b_un = 0.0
    for i in range(num_traders):
        arm = choices_row[i]
        w_i = wealth_pre[i]
        if arm_informed[arm]:
            cost = w_i if w_i < info_cost else info_cost
            wp = w_i - cost
        else:
            wp = w_i
        b = arm_alpha[arm] * wp
        realized_b[i] = b
        realized_informed[i] = arm_informed[arm]
        if arm_informed[arm]:
            b_inf += b
        else:
            b_un += b

    tables = np.empty((num_traders, n_arms))
    for i in range(num_traders):
        if realized_informed[i]:
            other_inf = b_inf - realized_b[i]
            other_un = b_un
        else:
            other_inf = b_inf
            other_un = b_un - realized_b[i]
        w_i = wealth_pre[i]
        cost = w_i if w_i < info_cost else info_cost
        wp_informed = w_i - cost
        for k in range(n_arms):
            if arm_informed[k]:
                wp = wp_informed
                res_own = res_inf
            else:
                wp = w_i
                res_own = res_un
            b_own = arm_alpha[k] * wp
            cand_inf = other_inf + b_own if arm_informed[k] else other_inf
            cand_un = other_un if arm_informed[k] else other_un + b_own
            price, capped, inf_in, un_in, pool = clear_informed_uninformed(
                res_inf, cand_inf, res_un, cand_un, num_shares
            )
            participates = inf_in if arm_informed[k] else un_in
            if price > 0.0 and participates:
                factor = num_shares / pool if capped else 1.0 / price
                q = b_own * factor
                wa = q * f_cur + (wp - q * price) * one_rf
            else:
                wa = wp * one_rf
            if wa < 0.0:
                wa = 0.0
            tables[i, k] = wa
    return tables


@njit(cache=True)
def audit_arm_optimality(
    wealth0,
    wafter,
    choices,
    f_arr,
    rbar_arr,
    initial_payoff,
    arm_alpha,
    arm_informed,
    info_cost,
    risk_free,
    num_shares,
    t_start,
    arms_to_check,
    rel_tol,
):
    """Count, per trader, the periods from ``t_start`` (0-based) on in which
    ``arms_to_check[i]`` was within ``rel_tol`` of the best-response payoff.
    """
    horizon, num_traders = choices.shape
    opt_counts = np.zeros(num_traders, dtype=np.int64)
    for ti in range(t_start, horizon):
        if ti == 0:
            wealth_pre = wealth0
            f_prev = initial_payoff
        else:
            wealth_pre = wafter[ti - 1]
            f_prev = f_arr[ti - 1]
        tables = response_tables(
            wealth_pre,
            choices[ti],
            f_arr[ti],
            f_prev,
            rbar_arr[ti],
            arm_alpha,
            arm_informed,
            info_cost,
            risk_free,
            num_shares,
        )
        for i in range(num_traders):
            best = tables[i, 0]
            for k in range(1, tables.shape[1]):
                if tables[i, k] > best:
                    best = tables[i, k]
            if tables[i, arms_to_check[i]] >= best * (1.0 - rel_tol):
                opt_counts[i] += 1
    return opt_counts


@njit(cache=True)
def stickiness_series(choices, n_arms, window, threshold):
    """Per period, the number of traders whose modal arm over the trailing
    ``min(window, t)`` choices has frequency >= ``threshold``."""
    horizon, num_traders = choices.shape
    out = np.zeros(horizon, dtype=np.int32)
    rolling = np.zeros((num_traders, n_arms), dtype=np.int32)
    for ti in range(horizon):
        for i in range(num_traders):
            rolling[i, choices[ti, i]] += 1
        if ti >= window:
            for i in range(num_traders):
                rolling[i, choices[ti - window, i]] -= 1
        wlen = window if ti + 1 >= window else ti + 1
        count = 0
        for i in range(num_traders):
            peak = 0
            for k in range(n_arms):
                if rolling[i, k] > peak:
                    peak = rolling[i, k]
            if peak / wlen >= threshold:
                count += 1
        out[ti] = count
    return out
