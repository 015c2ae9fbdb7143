"""Static bidder formulas and calibration against brute-force oracles."""

import json
import math

import numpy as np
import pytest

from bidlab import env
from bidlab.logstore import Impression, SynthSpec, make_episode, synth_log
from bidlab.strategies import (
    DEFAULT_ORTB_C_GRID,
    DEFAULT_ORTB_LAMBDA_GRID,
    LambdaSchedule,
    LinBidder,
    LinParams,
    OrtbBidder,
    OrtbParams,
    calibrate_lin,
    calibrate_ortb,
    lin_bid,
    load_params,
    load_schedule,
    ortb_bid,
    save_params,
    save_schedule,
    scheduled_lambda_bid,
)


def oracle_replay_clicks(episode, bids, budget, price_min=0, price_max=300):
    """Fresh re-implementation of the documented replay semantics.

    Slots of 1000 arrivals; slot allocation = even share of the daily
    budget until the first purchase, then round-half-up(cpm*1000), capped
    by the remaining day; wins need bid >= market and an affordable slot.
    """
    clicks = 0
    daily = budget
    wins = 0
    cost = 0
    n = len(episode.impressions)
    n_slots = math.ceil(n / 1000)
    for start in range(0, n, 1000):
        if wins == 0:
            boot = budget // n_slots
        else:
            boot = int(math.floor(cost * 1000 / wins + 0.5))
        slot = min(boot, daily)
        for imp in episode.impressions[start : start + 1000]:
            bid = min(max(int(bids[imp.seq]), price_min), price_max)
            if bid >= imp.market_price and slot >= imp.market_price:
                slot -= imp.market_price
                daily -= imp.market_price
                cost += imp.market_price
                wins += 1
                clicks += imp.click
    return clicks


def oracle_exhaustive_lin(episodes, budgets, price_max=300):
    pctr_all = [p for ep in episodes for p in ep.arrays[0]]
    avg = sum(pctr_all) / len(pctr_all)
    best_base, best_clicks = 1, -1
    for base in range(1, 301):
        clicks = 0
        for ep in episodes:
            bids = [
                int(math.floor(imp.pctr * base / avg + 0.5))
                for imp in ep.impressions
            ]
            clicks += oracle_replay_clicks(
                ep, bids, budgets[ep.period_id], price_max=price_max
            )
        if clicks > best_clicks:
            best_clicks, best_base = clicks, base
    return best_base


class TestLinBid:
    def test_ratio_one_returns_base(self):
        assert lin_bid(0.004, LinParams(100, 0.004)) == 100

    def test_zero_pctr(self):
        assert lin_bid(0.0, LinParams(100, 0.004)) == 0

    def test_hand_evaluated_rounding(self):
        # 0.002 * 111 / 0.0008 = 277.5 -> half-up -> 278
        assert lin_bid(0.002, LinParams(111, 0.0008)) == 278

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            LinParams(0, 0.001)
        with pytest.raises(ValueError):
            LinParams(301, 0.001)
        with pytest.raises(ValueError):
            LinParams(100, 0.0)

    def test_vectorized_matches_scalar(self):
        params = LinParams(87, 0.0013)
        pctr = np.linspace(0, 0.02, 57)
        bids = LinBidder(params).bids(pctr, np.zeros(57, dtype=np.int64))
        assert list(bids) == [lin_bid(float(p), params) for p in pctr]


class TestOrtbBid:
    def test_zero_pctr_is_zero(self):
        assert ortb_bid(0.0, OrtbParams(20.0, 1e-5)) == 0

    def test_hand_evaluated(self):
        # sqrt(20/1e-5 * 0.001 + 400) - 20 = sqrt(2400) - 20 -> 29
        assert ortb_bid(0.001, OrtbParams(20.0, 1e-5)) == 29

    def test_monotone_non_decreasing_on_random_pairs(self):
        rng = np.random.default_rng(4)
        params = OrtbParams(35.0, 2e-6)
        for _ in range(100):
            a, b = sorted(rng.uniform(0, 1, size=2))
            assert ortb_bid(a, params) <= ortb_bid(b, params)

    def test_vectorized_matches_scalar(self):
        params = OrtbParams(50.0, 1e-6)
        pctr = np.linspace(0, 0.05, 41)
        bids = OrtbBidder(params).bids(pctr, np.zeros(41, dtype=np.int64))
        assert list(bids) == [ortb_bid(float(p), params) for p in pctr]

    def test_bids_are_non_negative_integers(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            params = OrtbParams(
                float(rng.uniform(1, 100)), float(10 ** rng.uniform(-7, -3))
            )
            lin = LinParams(int(rng.integers(1, 301)), float(rng.uniform(1e-4, 1e-2)))
            p = float(rng.uniform(0, 1))
            for bid in (ortb_bid(p, params), lin_bid(p, lin)):
                assert isinstance(bid, int)
                assert bid >= 0


class TestScheduledLambda:
    def test_constant_schedule(self):
        sched = LambdaSchedule(1e-4, (0.0, 0.0, 0.0))
        for slot in range(4):
            assert scheduled_lambda_bid(0.001, slot, sched) == 10

    def test_hand_evaluated_slot_one(self):
        sched = LambdaSchedule(1e-4, (0.08,))
        assert scheduled_lambda_bid(0.001, 1, sched) == 9

    def test_decreasing_lambda_gives_non_decreasing_bids(self):
        sched = LambdaSchedule(1e-4, (-0.08,) * 30)
        lams = [sched.lambda_at(s) for s in range(31)]
        assert all(b < a for a, b in zip(lams, lams[1:]))
        bids = [scheduled_lambda_bid(0.002, s, sched) for s in range(31)]
        assert all(b2 >= b1 for b1, b2 in zip(bids, bids[1:]))

    def test_out_of_range_slot(self):
        sched = LambdaSchedule(1e-4, (0.01,))
        with pytest.raises(IndexError):
            scheduled_lambda_bid(0.001, 2, sched)

    def test_rates_restricted_to_menu(self):
        with pytest.raises(ValueError):
            LambdaSchedule(1e-4, (0.05,))

    def test_schedule_json_round_trip(self, tmp_path):
        sched = LambdaSchedule(2e-4, (0.08, -0.03, 0.0))
        path = tmp_path / "sched.json"
        save_schedule(sched, path)
        assert load_schedule(path) == sched


class TestCalibrateLin:
    def test_uniform_market_unlimited_budget_smallest_winning_base(self):
        # constant pctr makes the bid equal the base; market 50 everywhere
        imps = [Impression(i, 0.004, 50, 1, "d") for i in range(40)]
        ep = make_episode("d", imps)
        params = calibrate_lin([ep], {"d": 10**9})
        assert params.base_bid == 50

    def test_unwinnable_market_ties_break_to_one(self):
        ep = make_episode("d", [Impression(0, 0.004, 301, 1, "d")])
        params = calibrate_lin([ep], {"d": 10**9})
        assert params.base_bid == 1

    def test_matches_exhaustive_oracle_on_random_logs(self):
        for seed in (0, 1, 2):
            episodes = synth_log(
                SynthSpec(imps=1200, periods=2, price_scale=60.0), seed=seed
            )
            budgets = {ep.period_id: ep.actual_cost // 4 for ep in episodes}
            params = calibrate_lin(episodes, budgets)
            assert params.base_bid == oracle_exhaustive_lin(episodes, budgets)

    def test_empty_train_rejected(self):
        with pytest.raises(ValueError):
            calibrate_lin([], {})


class TestCalibrateOrtb:
    def test_matches_exhaustive_grid_oracle(self):
        episodes = synth_log(SynthSpec(imps=800, periods=1), seed=3)
        budgets = {ep.period_id: ep.actual_cost // 8 for ep in episodes}
        c_grid = (10.0, 40.0, 80.0)
        l_grid = (1e-6, 1e-5, 1e-4)
        params = calibrate_ortb(
            episodes, budgets, c_grid=c_grid, lambda_grid=l_grid
        )

        best = None
        best_clicks = -1
        for lam in sorted(l_grid):
            for c in sorted(c_grid):
                clicks = 0
                for ep in episodes:
                    bids = [
                        max(
                            0,
                            int(
                                math.floor(
                                    math.sqrt(c / lam * imp.pctr + c * c) - c + 0.5
                                )
                            ),
                        )
                        for imp in ep.impressions
                    ]
                    clicks += oracle_replay_clicks(ep, bids, budgets[ep.period_id])
                if clicks > best_clicks:
                    best_clicks, best = clicks, (c, lam)
        assert (params.c, params.lam) == best

    def test_unlimited_budget_prefers_smallest_lambda_then_c(self):
        # everything winnable by every grid point -> pure tie-break
        imps = [Impression(i, 0.9, 0, 1, "d") for i in range(5)]
        ep = make_episode("d", imps)
        params = calibrate_ortb([ep], {"d": 10**9})
        assert params.lam == min(DEFAULT_ORTB_LAMBDA_GRID)
        assert params.c == min(DEFAULT_ORTB_C_GRID)

    def test_default_grids_documented_shape(self):
        assert DEFAULT_ORTB_C_GRID[0] == 5
        assert DEFAULT_ORTB_C_GRID[-1] == 100
        assert len(DEFAULT_ORTB_LAMBDA_GRID) == 17
        assert DEFAULT_ORTB_LAMBDA_GRID[0] == pytest.approx(1e-7)
        assert DEFAULT_ORTB_LAMBDA_GRID[-1] == pytest.approx(1e-3)


class TestParamsSerialization:
    def test_lin_round_trip_with_metadata(self, tmp_path):
        path = tmp_path / "lin.json"
        save_params(LinParams(42, 0.0009), path, {"fraction": "1/2"})
        loaded = load_params(path)
        assert loaded == LinParams(42, 0.0009)
        doc = json.loads(path.read_text())
        assert doc["metadata"]["fraction"] == "1/2"

    def test_ortb_round_trip(self, tmp_path):
        path = tmp_path / "ortb.json"
        save_params(OrtbParams(25.0, 3.16e-6), path)
        assert load_params(path) == OrtbParams(25.0, 3.16e-6)

    def test_unknown_strategy_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"strategy": "mystery"}')
        with pytest.raises(ValueError):
            load_params(path)
