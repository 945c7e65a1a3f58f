import math

import numpy as np
import pytest

from app.errors import OutOfCalendar, UnsupportedPair
from app.models import presets
from app.models.domain import RollCalendar
from app.services.diffusion import build_model
from app.services.pricing import price_futures
from app.services.simulate import grid_from_dt, make_grid, simulate_batch, simulate_from_increments
from app.services.vxx import (
    evolve_rolling_tracker,
    evolve_vxx,
    implied_exposure,
    local_beta_regression,
    realized_qv,
    return_slope,
    run_vxx,
    vxx_frame,
    vxx_weights,
)

from .helpers import index_futures


@pytest.fixture
def calendar():
    return RollCalendar.covering(0.5)


class TestCalendar:
    def test_covering_reaches_past_the_horizon(self, calendar):
        assert len(calendar.maturities) == 7
        assert calendar.maturities[0] == pytest.approx(1 / 12)
        assert calendar.maturities[-1] == pytest.approx(7 / 12)

    def test_cycle_index(self, calendar):
        assert calendar.cycle_index(0.0) == 1
        assert calendar.cycle_index(calendar.maturities[0]) == 1
        assert calendar.cycle_index(calendar.maturities[0] + 1e-9) == 2
        assert calendar.bounds(2) == pytest.approx((1 / 12, 2 / 12))
        with pytest.raises(OutOfCalendar):
            calendar.cycle_index(1.0)

    @pytest.mark.parametrize("maturities", [(), (0.2, 0.1), (0.0, 0.1), (0.1, 0.1)])
    def test_invalid_calendars(self, maturities):
        with pytest.raises(OutOfCalendar):
            RollCalendar(maturities)


class TestRollWeights:
    def test_front_weight_falls_linearly(self, calendar):
        assert vxx_weights(0.0, calendar) == pytest.approx((1.0, 0.0))
        assert vxx_weights(1 / 24, calendar) == pytest.approx((0.5, 0.5))
        assert vxx_weights(1 / 12, calendar) == pytest.approx((0.0, 1.0), abs=1e-12)
        front, nxt = vxx_weights(np.array([0.0, 1 / 48, 1 / 12 + 1 / 48]), calendar)
        np.testing.assert_allclose(front, [1.0, 0.75, 0.75])
        np.testing.assert_allclose(front + nxt, 1.0)

    def test_implied_exposure_at_cycle_start(self, calendar, cir_model):
        alpha, beta = implied_exposure(0.0, 0.2, calendar, cir_model)
        assert beta == pytest.approx(math.exp(-5 / 3), rel=1e-12)
        assert alpha == pytest.approx(0.0, abs=1e-15)

    def test_implied_exposure_mid_cycle(self, calendar, cir_model):
        S, t = 0.25, 1 / 24
        tau1, tau2 = 1 / 24, 1 / 8
        f1 = 0.05 * math.exp(-20 * tau1) + 0.2
        f2 = 0.05 * math.exp(-20 * tau2) + 0.2
        expected = S * (0.5 * math.exp(-20 * tau1) / f1 + 0.5 * math.exp(-20 * tau2) / f2)
        alpha, beta = implied_exposure(t, S, calendar, cir_model)
        assert beta == pytest.approx(expected, rel=1e-12)
        assert alpha == pytest.approx(expected * 20 * (1 - 0.2 / S), rel=1e-12)

    def test_cycle_average_at_the_mean_level(self, calendar, cir_model):
        t = np.linspace(0.0, 1 / 12, 2001)
        _, beta = implied_exposure(t, np.full(t.shape, 0.2), calendar, cir_model)
        assert np.mean(beta) == pytest.approx(0.237, abs=5e-3)
        assert np.all(beta < 1.0)

    def test_needs_the_next_contract(self, cir_model):
        with pytest.raises(OutOfCalendar):
            implied_exposure(0.05, 0.2, RollCalendar.monthly(1), cir_model)

    def test_cir_only(self, calendar, heston_model):
        with pytest.raises(UnsupportedPair):
            implied_exposure(0.0, 100.0, calendar, heston_model)


class TestEvolution:
    def test_constant_index_earns_the_rate(self):
        model = build_model({**presets.CIR_VXX["model"], "r": 0.03})
        grid = make_grid(0.0, 0.25, 30)
        batch = simulate_from_increments(model, grid, np.zeros((30, 1)))
        values = evolve_vxx(batch, model, RollCalendar.covering(0.25), 100.0)
        assert values[0, -1] == pytest.approx(100.0 * (1 + 0.03 * grid.dt) ** 30, rel=1e-12)

    def test_first_step_follows_the_front_contract(self, calendar, cir_model):
        batch = simulate_batch(cir_model, make_grid(0.0, 0.5, 120), 3, seed=41)
        values = evolve_vxx(batch, cir_model, calendar, 100.0)
        front = index_futures(1 / 12)
        f0 = price_futures(cir_model, 0.0, batch.m[:, 0], front)
        f1 = price_futures(cir_model, batch.grid.dt, batch.m[:, 1], front)
        np.testing.assert_allclose(values[:, 1], 100.0 * (1.0 + (f1 - f0) / f0), rtol=1e-12)

    def test_calendar_must_cover_the_roll(self, cir_model):
        batch = simulate_batch(cir_model, make_grid(0.0, 1 / 12, 10), 1, seed=1)
        with pytest.raises(OutOfCalendar):
            evolve_vxx(batch, cir_model, RollCalendar.monthly(1), 100.0)
        with pytest.raises(OutOfCalendar):
            evolve_rolling_tracker(batch, cir_model, RollCalendar.monthly(1), 1.0, 100.0)

    def test_rolling_tracker_holds_the_front_or_second_contract(self, calendar, cir_model):
        batch = simulate_from_increments(cir_model, make_grid(0.0, 0.5, 60), np.zeros((60, 1)))
        values, weights = evolve_rolling_tracker(batch, cir_model, calendar, 1.0, 100.0)
        assert weights[0, 0] == pytest.approx(math.exp(20 / 12), rel=1e-12)
        np.testing.assert_allclose(values, 100.0)
        _, second = evolve_rolling_tracker(batch, cir_model, RollCalendar.monthly(8), 1.0, 100.0, contract="second")
        assert second[0, 0] == pytest.approx(math.exp(40 / 12), rel=1e-12)

    def test_unknown_contract(self, calendar, cir_model):
        batch = simulate_batch(cir_model, make_grid(0.0, 0.1, 5), 1, seed=1)
        with pytest.raises(UnsupportedPair):
            evolve_rolling_tracker(batch, cir_model, calendar, 1.0, 100.0, contract="third")

    def test_cir_only(self, calendar, heston_model):
        batch = simulate_batch(heston_model, make_grid(0.0, 0.1, 5), 1, seed=1)
        with pytest.raises(UnsupportedPair):
            run_vxx(batch, heston_model, calendar, 100.0)


class TestDiagnostics:
    def test_realized_qv(self):
        assert realized_qv(np.array([1.0, 2.0, 1.0])) == pytest.approx(1.25)
        np.testing.assert_allclose(realized_qv(np.array([[1.0, 1.0], [1.0, 1.1]])), [0.0, 0.01])

    def test_return_slope(self):
        reference = np.array([1.0, 1.1, 1.0, 1.2, 1.15])
        returns = np.diff(reference) / reference[:-1]
        values = np.concatenate([[1.0], np.cumprod(1.0 + 2.0 * returns)])
        assert return_slope(reference, values) == pytest.approx(2.0)
        local = local_beta_regression(reference, values, window=3)
        assert np.isnan(local[0]) and np.isnan(local[-1])
        np.testing.assert_allclose(local[1:-1], 2.0)


class TestRollStrategyPaths:
    @pytest.fixture(scope="class")
    def run(self):
        model = build_model(presets.CIR_VXX["model"])
        grid = grid_from_dt(0.0, 0.5, 1.0 / 2520.0)
        batch = simulate_batch(model, grid, 200, seed=20240502)
        return run_vxx(batch, model, RollCalendar.covering(grid.T), 100.0)

    def test_note_is_calmer_than_the_index(self, run):
        assert np.all(run.qv_vxx < run.qv_vix)

    def test_average_exposure_is_low(self, run):
        assert np.all((run.average_beta > 0.1) & (run.average_beta < 0.4))
        assert run.average_beta.mean() == pytest.approx(0.237, abs=0.03)

    def test_slopes(self, run):
        dynamic = return_slope(run.vix, run.dynamic)
        static = return_slope(run.vix, run.vxx)
        assert np.all((dynamic > 0.9) & (dynamic < 1.1))
        assert np.all(static < 0.5)

    def test_local_regression_recovers_implied_beta(self, run):
        local = local_beta_regression(run.vix[0], run.vxx[0])
        gap = np.abs(local - run.beta[0, :-1])
        assert np.nanmedian(gap) < 0.05

    def test_frame(self, run):
        frame = vxx_frame(run, path=3)
        assert list(frame.columns) == ["t", "VIX", "VXX", "dynamic", "alpha_V", "beta_V"]
        assert len(frame) == run.times.size
        assert frame["VXX"].iloc[0] == 100.0
