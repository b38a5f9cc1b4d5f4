import math

import numpy as np
import pytest

from marketsim.auction import (
    ClearingResult,
    Order,
    clear_market,
    demand_at_price,
    two_trader_profit,
)

from conftest import oracle_clear_price, random_orders


class TestDemandAtPrice:
    def test_only_first_participates(self):
        orders = [Order(0, 25000, 30), Order(1, 10000, 20)]
        assert demand_at_price(orders, 25) == pytest.approx(1000.0, rel=1e-15)

    def test_both_participate_at_boundary(self):
        orders = [Order(0, 25000, 30), Order(1, 10000, 20)]
        assert demand_at_price(orders, 20) == pytest.approx(1750.0, rel=1e-15)

    def test_above_all_reservations(self):
        orders = [Order(0, 25000, 30), Order(1, 10000, 20)]
        assert demand_at_price(orders, 31) == 0.0


class TestClearMarket:
    def test_single_level_uncapped(self):
        res = clear_market([Order(0, 10000, 30), Order(1, 10000, 30)], 1000)
        assert res.price == pytest.approx(20.0, rel=1e-12)
        assert res.allocations[0] == pytest.approx(500.0, rel=1e-12)
        assert res.allocations[1] == pytest.approx(500.0, rel=1e-12)
        assert not res.capped

    def test_upper_level_clears_alone(self):
        res = clear_market([Order(0, 25000, 30), Order(1, 10000, 20)], 1000)
        assert res.price == pytest.approx(25.0, rel=1e-12)
        assert res.allocations[0] == pytest.approx(1000.0, rel=1e-12)
        assert res.allocations[1] == 0.0
        assert not res.capped
        assert res.participating == {0}

    def test_cap_with_pro_rata_rationing(self):
        res = clear_market([Order(0, 15000, 30), Order(1, 10000, 20)], 1000)
        assert res.price == pytest.approx(20.0, rel=1e-12)
        assert res.capped
        assert res.allocations[0] == pytest.approx(600.0, rel=1e-12)
        assert res.allocations[1] == pytest.approx(400.0, rel=1e-12)

    def test_single_order_capped(self):
        res = clear_market([Order(0, 40000, 30)], 1000)
        assert res.price == pytest.approx(30.0, rel=1e-12)
        assert res.capped
        assert res.allocations[0] == pytest.approx(1000.0, rel=1e-12)

    def test_no_budget_is_no_trade(self):
        res = clear_market([Order(0, 0.0, 30), Order(1, 0.0, 20)], 1000)
        assert res.price is None
        assert not res.traded
        assert all(q == 0 for q in res.allocations.values())

    def test_rejects_invalid_orders(self):
        with pytest.raises(ValueError):
            Order(0, -1.0, 30)
        with pytest.raises(ValueError):
            Order(0, 10.0, 0.0)
        with pytest.raises(ValueError):
            clear_market([Order(0, 10.0, 30)], 0.0)

    def test_boundary_tie_resolves_uncapped(self):
        # candidate price exactly equals the level's reservation
        res = clear_market([Order(0, 30000, 30.0), Order(1, 1000, 15.0)], 1000)
        assert res.price == pytest.approx(30.0, rel=1e-15)
        assert not res.capped
        assert res.allocations[0] == pytest.approx(1000.0, rel=1e-12)


class TestOracleEquivalence:
    def test_thousand_randomized_instances(self):
        rng = np.random.default_rng(20240517)
        checked = 0
        for _ in range(1000):
            orders, num_shares = random_orders(rng)
            res = clear_market(orders, num_shares)
            expect = oracle_clear_price(orders, num_shares)
            if expect is None:
                assert res.price is None
                continue
            assert res.price == pytest.approx(expect, rel=1e-9)
            total_alloc = math.fsum(res.allocations.values())
            assert total_alloc == pytest.approx(num_shares, rel=1e-9)
            checked += 1
        assert checked > 900

    def test_participation_and_spend(self):
        rng = np.random.default_rng(99)
        for _ in range(300):
            orders, num_shares = random_orders(rng)
            res = clear_market(orders, num_shares)
            if not res.traded:
                continue
            for o in orders:
                q = res.allocations[o.trader_id]
                if o.reservation < res.price:
                    assert q == 0.0
                elif not res.capped and o.trader_id in res.participating:
                    # uncapped participants spend their full budget
                    assert q * res.price == pytest.approx(o.budget, rel=1e-9, abs=1e-12)
                if res.capped:
                    assert q * res.price <= o.budget * (1 + 1e-12)

    def test_monotonicity_in_budget(self):
        rng = np.random.default_rng(7)
        for _ in range(400):
            orders, num_shares = random_orders(rng, allow_zero_budget=False)
            res1 = clear_market(orders, num_shares)
            i = int(rng.integers(len(orders)))
            bumped = list(orders)
            bumped[i] = Order(
                orders[i].trader_id,
                orders[i].budget * float(rng.uniform(1.1, 10.0)) + 1.0,
                orders[i].reservation,
            )
            res2 = clear_market(bumped, num_shares)
            assert res2.price >= res1.price * (1 - 1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            orders, num_shares = random_orders(rng)
            res1 = clear_market(orders, num_shares)
            lam = float(rng.uniform(0.1, 10.0))
            scaled = [Order(o.trader_id, o.budget * lam, o.reservation) for o in orders]
            res2 = clear_market(scaled, num_shares * lam)
            if res1.price is None:
                assert res2.price is None
                continue
            assert res2.price == pytest.approx(res1.price, rel=1e-9)
            for o in orders:
                assert res2.allocations[o.trader_id] == pytest.approx(
                    res1.allocations[o.trader_id] * lam, rel=1e-9, abs=1e-9
                )


class TestTwoTraderProfit:
    def test_zero_profit_at_fair_price(self):
        assert two_trader_profit(30, 1000, 15000, 15000) == pytest.approx(0.0, abs=1e-9)

    def test_symmetric_uncapped(self):
        # price 20, 500 shares at a 10 MU margin
        profit = two_trader_profit(30, 1000, 10000, 10000)
        assert profit == pytest.approx(5000.0, rel=1e-12)
        res = clear_market([Order(0, 10000, 30), Order(1, 10000, 30)], 1000)
        assert res.price == pytest.approx(20.0, rel=1e-12)
        assert res.allocations[0] == pytest.approx(500.0, rel=1e-12)

    def test_vanishing_opponent_limit(self):
        profit = two_trader_profit(30, 1000, 10000, 1.0)
        assert profit == pytest.approx(30 * 1000 * 10000 / 10001 - 10000, rel=1e-12)
        assert profit < 30 * 1000 - 10000
        assert profit > 30 * 1000 - 10000 - 5

    def test_rejects_empty_market(self):
        with pytest.raises(ValueError):
            two_trader_profit(30, 1000, 0.0, 0.0)

    def test_matches_clearing_profit(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            payoff = float(rng.uniform(5, 100))
            num_shares = float(rng.uniform(10, 5000))
            b_a = float(rng.uniform(1, 1000))
            b_b = float(rng.uniform(1, 1000))
            if (b_a + b_b) / num_shares > payoff:
                continue  # stay in the uncapped regime
            res = clear_market(
                [Order(0, b_a, payoff), Order(1, b_b, payoff)], num_shares
            )
            assert not res.capped
            implied = (payoff - res.price) * res.allocations[0]
            assert implied == pytest.approx(
                two_trader_profit(payoff, num_shares, b_a, b_b), rel=1e-9, abs=1e-9
            )
