"""
Diffusion models for the index S and its factors Y1..Yd under the pricing
measure, all written as dM = drift(M) dt + vol(M) dB with a lower-triangular
volatility matrix:

    bs      dS = r S dt + sigma S dB0
    heston  dS = r S dt + sqrt(Y) S dB0
            dY = kappa (theta - Y) dt + nu sqrt(Y) (rho dB0 + sqrt(1 - rho^2) dB1)
    cir     dS = kappa (theta - S) dt + sigma sqrt(S) dB0
    csqr    dS = gamma (Y - S) dt + sigma sqrt(S) dB0
            dY = kappa (theta - Y) dt + nu sqrt(Y) (rho dB0 + sqrt(1 - rho^2) dB1)
"""

import logging
from dataclasses import replace
from typing import Any, Mapping, Tuple, Union

import numpy as np

from ..config import get_settings
from ..errors import ConfigError, FellerViolation, MissingParameter, NonPositiveParameter
from ..models.domain import (
    FACTOR_COUNT,
    REQUIRED_PARAMS,
    Measure,
    ModelKind,
    ModelSpec,
    StateVector,
)

logger = logging.getLogger(__name__)

_POSITIVE_PARAMS = ("sigma", "nu", "kappa", "theta", "gamma")


def _as_state(state: Union[StateVector, np.ndarray, Any]) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.m
    return np.asarray(state, dtype=float)


def feller_holds(model: ModelSpec) -> bool:
    """2 kappa theta >= vol^2 for the square-root leg, True where no condition applies"""
    if model.kind == ModelKind.HESTON:
        return 2.0 * model["kappa"] * model["theta"] >= model["nu"] ** 2
    if model.kind == ModelKind.CIR:
        return 2.0 * model["kappa"] * model["theta"] >= model["sigma"] ** 2
    return True


def build_model(config: Mapping[str, Any], strict: bool = None) -> ModelSpec:
    """
    Validate a parameter record and build an immutable ModelSpec.

    The record names the model in ``kind`` and carries ``r`` plus the model's
    parameters; ``s0``/``y0`` give the initial state, ``mpr`` an optional
    market-price-of-risk vector of length d + 1 and ``strict`` turns Feller
    enforcement on.
    """
    if hasattr(config, "model_dump"):
        config = config.model_dump(exclude_none=True)
    config = dict(config)

    if "kind" not in config:
        raise MissingParameter("model config must name a kind (bs, heston, cir, csqr)")
    try:
        kind = ModelKind(str(config["kind"]).lower())
    except ValueError:
        raise ConfigError(f"unknown model kind {config['kind']!r}")

    missing = [name for name in REQUIRED_PARAMS[kind] if config.get(name) is None]
    if missing:
        raise MissingParameter(f"{kind.value} model is missing parameters: {', '.join(missing)}")

    params = {name: float(config[name]) for name in REQUIRED_PARAMS[kind]}
    r = float(config.get("r", 0.0))

    if r < 0:
        raise NonPositiveParameter(f"r must be >= 0, got {r}")
    for name in _POSITIVE_PARAMS:
        if name in params and not params[name] > 0:
            raise NonPositiveParameter(f"{name} must be > 0, got {params[name]}")
    if "rho" in params and not -1.0 < params["rho"] < 1.0:
        raise ConfigError(f"rho must lie in (-1, 1), got {params['rho']}")

    d = FACTOR_COUNT[kind]

    if kind in (ModelKind.CIR, ModelKind.CSQR):
        s0 = float(config.get("s0", params["theta"]))
    else:
        s0 = float(config.get("s0", 1.0))
    m0 = [s0]
    if d == 1:
        m0.append(float(config.get("y0", params["theta"])))
    if any(not x > 0 for x in m0):
        raise NonPositiveParameter(f"initial state must be strictly positive, got {m0}")

    mpr = config.get("mpr")
    if mpr is not None:
        mpr = tuple(float(x) for x in mpr)
        if len(mpr) != d + 1:
            raise ConfigError(f"mpr must have length {d + 1} for {kind.value}, got {len(mpr)}")

    if strict is None:
        strict = bool(config.get("strict", get_settings().strict_feller))

    model = ModelSpec(kind=kind, r=r, params=params, d=d, m0=tuple(m0), mpr=mpr, strict=strict)

    feller = None
    if kind in (ModelKind.HESTON, ModelKind.CIR):
        feller = feller_holds(model)
        if not feller:
            if strict:
                raise FellerViolation(
                    f"{kind.value}: 2*kappa*theta = {2 * params['kappa'] * params['theta']:g} "
                    f"is below the squared volatility of the square-root leg"
                )
            logger.warning(f"{kind.value} parameters violate the Feller condition; simulation will truncate")
    return replace(model, feller=feller)


def drift_vol(
    model: ModelSpec,
    state: Union[StateVector, np.ndarray],
    measure: Measure = Measure.Q,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Drift vector (..., d+1) and volatility matrix (..., d+1, d+1) at ``state``.

    ``state`` may carry leading batch axes. Under ``Measure.P`` the drift is
    shifted by vol @ mpr.
    """
    m = _as_state(state)
    S = m[..., 0]
    shape = m.shape[:-1]
    k = model.dim
    drift = np.zeros(shape + (k,))
    vol = np.zeros(shape + (k, k))
    p = model.params

    if model.kind == ModelKind.BS:
        drift[..., 0] = model.r * S
        vol[..., 0, 0] = p["sigma"] * S
    elif model.kind == ModelKind.CIR:
        drift[..., 0] = p["kappa"] * (p["theta"] - S)
        vol[..., 0, 0] = p["sigma"] * np.sqrt(S)
    else:
        Y = m[..., 1]
        sqrt_y = np.sqrt(Y)
        drift[..., 1] = p["kappa"] * (p["theta"] - Y)
        vol[..., 1, 0] = p["nu"] * p["rho"] * sqrt_y
        vol[..., 1, 1] = p["nu"] * np.sqrt(1.0 - p["rho"] ** 2) * sqrt_y
        if model.kind == ModelKind.HESTON:
            drift[..., 0] = model.r * S
            vol[..., 0, 0] = sqrt_y * S
        else:
            drift[..., 0] = p["gamma"] * (Y - S)
            vol[..., 0, 0] = p["sigma"] * np.sqrt(S)

    if measure == Measure.P and model.mpr is not None:
        drift = drift + vol @ np.asarray(model.mpr)

    return drift, vol


def relative_vol(model: ModelSpec, state: Union[StateVector, np.ndarray]) -> np.ndarray:
    """Rows of the volatility matrix divided by the matching state entry (sigma_ij / M_i)"""
    m = _as_state(state)
    _, vol = drift_vol(model, m)
    return vol / m[..., :, None]
