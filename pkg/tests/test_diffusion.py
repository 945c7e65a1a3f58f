import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.errors import ConfigError, FellerViolation, MissingParameter, NonPositiveParameter
from app.models import presets
from app.models.domain import Measure, ModelKind, StateVector
from app.models.experiment import ModelBlock
from app.services.diffusion import build_model, drift_vol, feller_holds, relative_vol


class TestBuildModel:
    def test_cir_roll_parameters_satisfy_feller(self, cir_model):
        assert cir_model.kind == ModelKind.CIR
        assert cir_model.d == 0
        assert cir_model.feller is True
        assert cir_model.m0 == (0.2,)

    def test_bs_has_no_factor(self):
        model = build_model({"kind": "bs", "sigma": 0.2, "r": 0.05})
        assert model.d == 0
        assert model.dim == 1
        assert model.feller is None
        assert model.m0 == (1.0,)

    def test_factor_models_default_y0_to_theta(self, heston_model):
        model = build_model({k: v for k, v in presets.HESTON.items() if k != "y0"})
        assert model.m0[1] == heston_model["theta"]
        assert heston_model.dim == 2

    def test_feller_violation_only_in_strict_mode(self):
        params = {"kind": "cir", "kappa": 1.0, "theta": 0.01, "sigma": 1.0}
        with pytest.raises(FellerViolation):
            build_model(params, strict=True)
        with pytest.raises(FellerViolation):
            build_model({**params, "strict": True})
        relaxed = build_model(params)
        assert relaxed.feller is False
        assert not feller_holds(relaxed)

    def test_missing_parameter(self):
        with pytest.raises(MissingParameter):
            build_model({"kind": "heston", "kappa": 1.0, "theta": 0.04, "nu": 0.3})
        with pytest.raises(MissingParameter):
            build_model({"sigma": 0.2})

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            build_model({"kind": "sabr", "sigma": 0.2})

    @pytest.mark.parametrize("field,value", [("sigma", 0.0), ("sigma", -0.1), ("r", -0.01)])
    def test_nonpositive_parameters(self, field, value):
        params = {"kind": "bs", "sigma": 0.2, "r": 0.05, field: value}
        with pytest.raises(NonPositiveParameter):
            build_model(params)

    def test_nonpositive_initial_state(self):
        with pytest.raises(NonPositiveParameter):
            build_model({"kind": "bs", "sigma": 0.2, "s0": 0.0})

    def test_correlation_must_be_inside_unit_interval(self):
        with pytest.raises(ConfigError):
            build_model({**presets.HESTON, "rho": 1.0})

    def test_market_price_of_risk_length(self):
        with pytest.raises(ConfigError):
            build_model({**presets.HESTON, "mpr": [0.1]})
        model = build_model({**presets.HESTON, "mpr": [0.1, 0.2]})
        assert model.mpr == (0.1, 0.2)

    def test_accepts_config_block(self):
        block = ModelBlock(kind="CIR", kappa=20.0, theta=0.2, sigma=0.4)
        model = build_model(block)
        assert model.kind == ModelKind.CIR
        assert model.m0 == (0.2,)

    def test_model_is_immutable(self, bs_model):
        with pytest.raises(dataclasses.FrozenInstanceError):
            bs_model.r = 0.1
        with pytest.raises(TypeError):
            bs_model.params["sigma"] = 0.3


class TestDriftVol:
    def test_bs_at_fifty(self, bs_model):
        drift, vol = drift_vol(bs_model, np.array([50.0]))
        np.testing.assert_allclose(drift, [2.5])
        np.testing.assert_allclose(vol, [[10.0]])

    def test_cir_drift_vanishes_at_mean_level(self, cir_model):
        drift, _ = drift_vol(cir_model, StateVector(0.0, np.array([0.2])))
        assert drift[0] == 0.0

    def test_csqr_index_drift_vanishes_at_factor_level(self, csqr_model):
        drift, _ = drift_vol(csqr_model, np.array([0.3, 0.3]))
        assert drift[0] == 0.0
        assert drift[1] == pytest.approx(csqr_model["kappa"] * (csqr_model["theta"] - 0.3))

    def test_heston_factor_row(self, heston_model):
        S, Y = 100.0, 0.05
        _, vol = drift_vol(heston_model, np.array([S, Y]))
        nu, rho = heston_model["nu"], heston_model["rho"]
        np.testing.assert_allclose(vol[1], [nu * rho * np.sqrt(Y), nu * np.sqrt(1 - rho**2) * np.sqrt(Y)])
        assert vol[0, 0] == pytest.approx(np.sqrt(Y) * S)
        assert vol[0, 1] == 0.0

    def test_square_root_scaling(self, cir_model, csqr_model):
        _, low = drift_vol(cir_model, np.array([0.1]))
        _, high = drift_vol(cir_model, np.array([0.4]))
        assert high[0, 0] == pytest.approx(2.0 * low[0, 0])

        _, low = drift_vol(csqr_model, np.array([0.1, 0.1]))
        _, high = drift_vol(csqr_model, np.array([0.4, 0.4]))
        np.testing.assert_allclose(high, 2.0 * low)

    def test_batched_states(self, heston_model):
        states = np.array([[90.0, 0.03], [110.0, 0.05], [100.0, 0.04]])
        drift, vol = drift_vol(heston_model, states)
        assert drift.shape == (3, 2)
        assert vol.shape == (3, 2, 2)
        single_drift, single_vol = drift_vol(heston_model, states[1])
        np.testing.assert_array_equal(drift[1], single_drift)
        np.testing.assert_array_equal(vol[1], single_vol)

    def test_physical_measure_shifts_by_vol_times_mpr(self):
        model = build_model({**presets.HESTON, "mpr": [0.1, -0.2]})
        state = np.array([100.0, 0.04])
        q_drift, vol = drift_vol(model, state)
        p_drift, _ = drift_vol(model, state, Measure.P)
        np.testing.assert_allclose(p_drift - q_drift, vol @ np.array([0.1, -0.2]))

    def test_relative_vol(self, bs_model):
        rel = relative_vol(bs_model, np.array([[40.0], [60.0]]))
        np.testing.assert_allclose(rel[..., 0, 0], [0.2, 0.2])


@settings(max_examples=50, deadline=None)
@given(
    S=st.floats(min_value=0.01, max_value=500.0),
    Y=st.floats(min_value=0.001, max_value=2.0),
    kind=st.sampled_from(["heston", "csqr"]),
)
def test_vol_matrix_is_lower_triangular_and_deterministic(S, Y, kind):
    model = build_model(presets.HESTON if kind == "heston" else presets.CSQR)
    state = np.array([S, Y])
    drift, vol = drift_vol(model, state)
    again_drift, again_vol = drift_vol(model, state.copy())
    assert vol[0, 1] == 0.0
    np.testing.assert_array_equal(drift, again_drift)
    np.testing.assert_array_equal(vol, again_vol)
