import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.errors import (
    ConfigError,
    ExpiredContract,
    InsufficientQuotes,
    IoError,
    MissingParameter,
    UnsupportedPair,
)
from app.models import presets
from app.models.domain import DerivativeSpec, FuturesQuote, InstrumentKind
from app.services.diffusion import build_model
from app.services.pricing import (
    calibrate_cir,
    cir_term_structure,
    gradient,
    greeks_fd,
    load_quotes,
    norm_cdf,
    price,
    price_bs_call,
    price_futures,
)

from .helpers import call, factor_futures, index_futures


def textbook_call(S, K, r, sigma, tau):
    cdf = lambda x: 0.5 * math.erfc(-x / math.sqrt(2.0))  # noqa: E731
    d1 = (math.log(S / K) + (r + 0.5 * sigma**2) * tau) / (sigma * math.sqrt(tau))
    d2 = d1 - sigma * math.sqrt(tau)
    return S * cdf(d1) - K * math.exp(-r * tau) * cdf(d2)


class TestCall:
    def test_at_the_money(self, bs_model):
        value = price_bs_call(0.5, 50.0, bs_model, call(50.0, 1.0))
        assert value == pytest.approx(3.4447, abs=1e-3)
        assert value == pytest.approx(textbook_call(50.0, 50.0, 0.05, 0.2, 0.5), abs=1e-10)

    def test_payoff_at_expiry(self, bs_model):
        spec = call(50.0, 1.0)
        assert price_bs_call(1.0, 55.0, bs_model, spec) == pytest.approx(5.0)
        assert price_bs_call(1.0, 45.0, bs_model, spec) == 0.0

    def test_expired(self, bs_model):
        with pytest.raises(ExpiredContract):
            price(bs_model, 1.5, np.array([50.0]), call(50.0, 1.0))

    def test_strike_required(self):
        with pytest.raises(MissingParameter):
            DerivativeSpec(InstrumentKind.CALL, 1.0)

    def test_delta_is_n_of_d_plus(self, bs_model):
        grad = gradient(bs_model, 0.0, np.array([55.0]), call(50.0, 1.0))
        d1 = (math.log(55 / 50) + (0.05 + 0.02) * 1.0) / 0.2
        assert grad[0] == pytest.approx(0.5 * math.erfc(-d1 / math.sqrt(2.0)), rel=1e-12)

    def test_norm_cdf_accuracy(self):
        xs = np.linspace(-8.0, 8.0, 33)
        exact = np.array([0.5 * math.erfc(-x / math.sqrt(2.0)) for x in xs])
        np.testing.assert_allclose(norm_cdf(xs), exact, rtol=1e-12, atol=1e-300)


@settings(max_examples=60, deadline=None)
@given(
    S=st.floats(min_value=5.0, max_value=200.0),
    K=st.floats(min_value=5.0, max_value=200.0),
    t=st.floats(min_value=0.0, max_value=0.99),
)
def test_call_within_no_arbitrage_bounds(S, K, t):
    model = build_model(presets.BS_TRACKING["model"])
    value = price_bs_call(t, S, model, call(K, 1.0))
    lower = max(S - K * math.exp(-model.r * (1.0 - t)), 0.0)
    assert lower - 1e-9 <= value <= S + 1e-9


class TestFutures:
    def test_cir_one_month(self, cir_model):
        spec = index_futures(1 / 12)
        f = price_futures(cir_model, 0.0, np.array([0.25]), spec)
        assert f == pytest.approx(0.05 * math.exp(-5 / 3) + 0.2, rel=1e-12)
        assert f == pytest.approx(0.209444, abs=1e-6)
        grad = gradient(cir_model, 0.0, np.array([0.25]), spec)
        assert grad[0] == pytest.approx(math.exp(-5 / 3), rel=1e-12)
        assert grad[0] == pytest.approx(0.18888, abs=1e-5)

    def test_bs_carry(self, bs_model):
        f = price(bs_model, 0.25, np.array([50.0]), index_futures(1.0))
        assert f == pytest.approx(50.0 * math.exp(0.05 * 0.75))

    def test_heston_index_futures_ignore_variance(self, heston_model):
        grad = gradient(heston_model, 0.0, np.array([100.0, 0.09]), index_futures(1.0))
        assert grad[1] == 0.0
        assert grad[0] == pytest.approx(math.exp(0.02))

    def test_heston_variance_futures(self, heston_model):
        spec = factor_futures(0.5)
        state = np.array([100.0, 0.09])
        decay = math.exp(-3.0 * 0.5)
        assert price(heston_model, 0.0, state, spec) == pytest.approx(0.09 * decay + 0.04 * (1 - decay))
        np.testing.assert_allclose(gradient(heston_model, 0.0, state, spec), [0.0, decay])

    def test_settles_at_the_state(self, csqr_model, heston_model):
        state = np.array([0.31, 0.17])
        assert price(csqr_model, 1.0, state, index_futures(1.0)) == pytest.approx(0.31)
        assert price(csqr_model, 1.0, state, factor_futures(1.0)) == pytest.approx(0.17)

    def test_csqr_equal_speed_limit_is_continuous(self):
        state = np.array([0.3, 0.15])
        spec = index_futures(0.75)
        equal = build_model({**presets.CSQR, "gamma": 1.0})
        near = build_model({**presets.CSQR, "gamma": 1.0 + 1e-6})
        f_equal = price(equal, 0.0, state, spec)
        f_near = price(near, 0.0, state, spec)
        assert f_equal == pytest.approx(f_near, rel=1e-5)
        np.testing.assert_allclose(
            gradient(equal, 0.0, state, spec), gradient(near, 0.0, state, spec), rtol=1e-5
        )

    def test_csqr_long_run_level(self, csqr_model):
        assert price(csqr_model, 0.0, np.array([0.3, 0.1]), index_futures(60.0)) == pytest.approx(0.2, abs=1e-12)

    def test_unsupported_pairs(self, cir_model, heston_model, bs_model):
        with pytest.raises(UnsupportedPair):
            price(cir_model, 0.0, np.array([0.2]), call(0.2, 1.0))
        with pytest.raises(UnsupportedPair):
            price(heston_model, 0.0, np.array([100.0, 0.04]), call(100.0, 1.0))
        with pytest.raises(UnsupportedPair):
            price(bs_model, 0.0, np.array([50.0]), factor_futures(1.0))

    def test_batched_states(self, csqr_model):
        states = np.array([[0.1, 0.2], [0.2, 0.3], [0.3, 0.1]])
        t = np.array([0.0, 0.2, 0.4])
        spec = index_futures(1.0)
        batched = price(csqr_model, t, states, spec)
        single = [price(csqr_model, t[i], states[i], spec) for i in range(3)]
        np.testing.assert_allclose(batched, single, rtol=1e-14)


class TestFiniteDifferences:
    @pytest.mark.parametrize(
        "name,spec,state,t",
        [
            ("bs", call(50.0, 1.0), [52.0], 0.3),
            ("bs", index_futures(1.0), [52.0], 0.3),
            ("heston", index_futures(1.0), [95.0, 0.05], 0.1),
            ("heston", factor_futures(1.0), [95.0, 0.05], 0.1),
            ("cir", index_futures(0.25), [0.3], 0.1),
            ("csqr", index_futures(1.0), [0.25, 0.15], 0.2),
            ("csqr", factor_futures(1.0), [0.25, 0.15], 0.2),
        ],
    )
    def test_matches_analytic_gradient(self, name, spec, state, t):
        model = {
            "bs": lambda: build_model(presets.BS_TRACKING["model"]),
            "heston": lambda: build_model(presets.HESTON),
            "cir": lambda: build_model(presets.CIR_VXX["model"]),
            "csqr": lambda: build_model(presets.CSQR),
        }[name]()
        state = np.array(state)
        fd = greeks_fd(model, t, state, spec)
        exact = gradient(model, t, state, spec)
        np.testing.assert_allclose(fd, exact, rtol=1e-6, atol=1e-10)

    @pytest.mark.parametrize("bump", [0.0, -1e-4, 0.05])
    def test_bump_range(self, bs_model, bump):
        with pytest.raises(ConfigError):
            greeks_fd(bs_model, 0.0, np.array([50.0]), call(50.0, 1.0), bump)


class TestCalibration:
    maturities = np.array([1, 2, 3, 6]) / 12.0

    def test_round_trip(self):
        prices = cir_term_structure(20.0, 0.2, 0.25, self.maturities)
        fit = calibrate_cir([FuturesQuote(T, p) for T, p in zip(self.maturities, prices)], 0.25)
        assert fit.kappa == pytest.approx(20.0, rel=1e-6)
        assert fit.theta == pytest.approx(0.2, rel=1e-6)
        assert fit.residual_norm < 1e-8
        assert fit.n_quotes == 4
        assert not fit.degenerate_flat

    def test_round_trip_from_below(self):
        prices = cir_term_structure(8.0, 0.3, 0.22, self.maturities)
        fit = calibrate_cir([FuturesQuote(T, p) for T, p in zip(self.maturities, prices)], 0.22)
        assert fit.kappa == pytest.approx(8.0, rel=1e-6)
        assert fit.theta == pytest.approx(0.3, rel=1e-6)

    def test_curve_shapes(self):
        grid = np.linspace(0.01, 1.0, 50)
        below = cir_term_structure(20.0, 0.2, 0.15, grid)
        above = cir_term_structure(20.0, 0.2, 0.25, grid)
        assert np.all(np.diff(below) > 0) and np.all(np.diff(below, 2) < 0)
        assert np.all(np.diff(above) < 0) and np.all(np.diff(above, 2) > 0)

    def test_flat_curve_leaves_kappa_unidentified(self):
        quotes = [FuturesQuote(T, 0.2) for T in self.maturities]
        fit = calibrate_cir(quotes, 0.2)
        assert fit.kappa is None
        assert fit.theta == 0.2
        assert fit.degenerate_flat

    def test_needs_two_maturities(self):
        with pytest.raises(InsufficientQuotes):
            calibrate_cir([FuturesQuote(0.25, 0.21)], 0.25)
        with pytest.raises(InsufficientQuotes):
            calibrate_cir([FuturesQuote(0.25, 0.21), FuturesQuote(0.25, 0.22)], 0.25)

    def test_load_quotes(self, tmp_path):
        path = tmp_path / "quotes.csv"
        path.write_text("maturity_years,price\n0.0833333333,0.2094438\n0.25,0.2003369\n")
        quotes = load_quotes(path)
        assert [q.maturity for q in quotes] == pytest.approx([0.0833333333, 0.25])
        assert quotes[1].price == pytest.approx(0.2003369)

    def test_load_quotes_errors(self, tmp_path):
        with pytest.raises(IoError):
            load_quotes(tmp_path / "missing.csv")
        bad = tmp_path / "bad.csv"
        bad.write_text("T,price\n0.1,0.2\n")
        with pytest.raises(ConfigError):
            load_quotes(bad)
