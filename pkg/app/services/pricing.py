"""
Closed-form prices and state partials for every supported model/contract
pair, plus CIR term-structure calibration.

Supported pairs:
    bs      call, index futures
    heston  index futures, variance (factor) futures
    cir     index futures
    csqr    index futures, factor futures
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.optimize import least_squares

from ..errors import (
    ConfigError,
    ExpiredContract,
    FitDiverged,
    InsufficientQuotes,
    IoError,
    NonPositiveParameter,
    UnsupportedPair,
)
from ..models.domain import (
    DerivativeSpec,
    FuturesQuote,
    InstrumentKind,
    ModelKind,
    ModelSpec,
    StateVector,
)

logger = logging.getLogger(__name__)

# Relative gap below which the two csqr mean-reversion speeds are treated as equal
EQUAL_SPEED_TOL = 1e-8

KAPPA_STARTS = (1.0, 5.0, 20.0, 50.0)
KAPPA_MAX = 1e4

_SUPPORTED = {
    ModelKind.BS: {InstrumentKind.CALL, InstrumentKind.FUTURES_INDEX},
    ModelKind.HESTON: {InstrumentKind.FUTURES_INDEX, InstrumentKind.FUTURES_FACTOR},
    ModelKind.CIR: {InstrumentKind.FUTURES_INDEX},
    ModelKind.CSQR: {InstrumentKind.FUTURES_INDEX, InstrumentKind.FUTURES_FACTOR},
}


def _state(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.m
    return np.asarray(state, dtype=float)


def _tau(t, maturity: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t > maturity + 1e-12):
        raise ExpiredContract(f"contract with maturity {maturity:g} evaluated at t={np.max(t):g}")
    return np.maximum(maturity - t, 0.0)


def check_pair(model: ModelSpec, spec: DerivativeSpec) -> None:
    if spec.kind not in _SUPPORTED[model.kind]:
        raise UnsupportedPair(f"{spec.kind.value} is not priced under the {model.kind.value} model")
    if spec.kind == InstrumentKind.FUTURES_FACTOR and spec.leg > model.d:
        raise UnsupportedPair(f"{model.kind.value} has no factor leg {spec.leg}")


def norm_cdf(x):
    """Standard normal CDF (erfc-based, accurate to double precision)"""
    return stats.norm.cdf(x)


def bs_d_plus(tau, S, K: float, r: float, sigma: float) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    S = np.asarray(S, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (np.log(S / K) + (r + 0.5 * sigma**2) * tau) / (sigma * np.sqrt(tau))
    # At expiry d+ is +/- infinity, so N(d+) becomes the payoff indicator
    return np.where(tau > 0, d, np.where(S > K, np.inf, -np.inf))


def price_bs_call(t, S, model: ModelSpec, spec: DerivativeSpec):
    """S N(d+) - K e^{-r tau} N(d-), reducing to the payoff at expiry"""
    if model.kind != ModelKind.BS or spec.kind != InstrumentKind.CALL:
        raise UnsupportedPair("price_bs_call needs a bs model and a call contract")
    tau = _tau(t, spec.maturity)
    S = np.asarray(S, dtype=float)
    r, sigma, K = model.r, model["sigma"], spec.strike
    d_plus = bs_d_plus(tau, S, K, r, sigma)
    d_minus = d_plus - sigma * np.sqrt(tau)
    price = S * norm_cdf(d_plus) - K * np.exp(-r * tau) * norm_cdf(d_minus)
    price = np.where(tau > 0, price, np.maximum(S - K, 0.0))
    return price[()]


def _csqr_bridge(gamma: float, kappa: float, tau: np.ndarray) -> np.ndarray:
    """(e^{-kappa tau} - e^{-gamma tau}) / (gamma - kappa), tau e^{-gamma tau} at equal speeds"""
    gap = gamma - kappa
    if abs(gap) < EQUAL_SPEED_TOL * max(gamma, kappa):
        return tau * np.exp(-gamma * tau)
    return np.exp(-kappa * tau) * (-np.expm1(-gap * tau)) / gap


def price_futures(model: ModelSpec, t, state, spec: DerivativeSpec):
    if not spec.is_futures:
        raise UnsupportedPair("price_futures prices futures contracts only")
    check_pair(model, spec)
    m = _state(state)
    tau = _tau(t, spec.maturity)
    S = m[..., 0]
    p = model.params

    if spec.kind == InstrumentKind.FUTURES_FACTOR:
        Y = m[..., spec.leg]
        decay = np.exp(-p["kappa"] * tau)
        return (Y * decay + p["theta"] * (1.0 - decay))[()]

    if model.kind in (ModelKind.BS, ModelKind.HESTON):
        return (S * np.exp(model.r * tau))[()]
    if model.kind == ModelKind.CIR:
        return ((S - p["theta"]) * np.exp(-p["kappa"] * tau) + p["theta"])[()]

    gamma, kappa, theta = p["gamma"], p["kappa"], p["theta"]
    Y = m[..., 1]
    f = theta + (S - theta) * np.exp(-gamma * tau) + gamma * (Y - theta) * _csqr_bridge(gamma, kappa, tau)
    return f[()]


def price(model: ModelSpec, t, state, spec: DerivativeSpec):
    """Price any supported contract"""
    check_pair(model, spec)
    if spec.kind == InstrumentKind.CALL:
        return price_bs_call(t, _state(state)[..., 0], model, spec)
    return price_futures(model, t, state, spec)


def gradient(model: ModelSpec, t, state, spec: DerivativeSpec) -> np.ndarray:
    """Analytic partials of the price with respect to (S, Y1..Yd), shaped (..., d+1)"""
    check_pair(model, spec)
    m = _state(state)
    tau = _tau(t, spec.maturity)
    p = model.params
    grad = np.zeros(np.broadcast_shapes(m.shape, np.shape(tau) + (model.dim,)))

    if spec.kind == InstrumentKind.CALL:
        grad[..., 0] = norm_cdf(bs_d_plus(tau, m[..., 0], spec.strike, model.r, p["sigma"]))
    elif spec.kind == InstrumentKind.FUTURES_FACTOR:
        grad[..., spec.leg] = np.exp(-p["kappa"] * tau)
    elif model.kind in (ModelKind.BS, ModelKind.HESTON):
        grad[..., 0] = np.exp(model.r * tau)
    elif model.kind == ModelKind.CIR:
        grad[..., 0] = np.exp(-p["kappa"] * tau)
    else:
        grad[..., 0] = np.exp(-p["gamma"] * tau)
        grad[..., 1] = p["gamma"] * _csqr_bridge(p["gamma"], p["kappa"], tau)
    return grad


def greeks_fd(model: ModelSpec, t, state, spec: DerivativeSpec, bump: float = 1e-4) -> np.ndarray:
    """Central differences of the price in each state entry, with step bump * entry"""
    if not 0.0 < bump <= 1e-2:
        raise ConfigError(f"bump must lie in (0, 1e-2], got {bump}")
    m = _state(state)
    out = np.empty(m.shape)
    for i in range(m.shape[-1]):
        h = bump * m[..., i]
        up = m.copy()
        down = m.copy()
        up[..., i] += h
        down[..., i] -= h
        out[..., i] = (np.asarray(price(model, t, up, spec)) - np.asarray(price(model, t, down, spec))) / (2.0 * h)
    return out


def cir_term_structure(kappa: float, theta: float, s: float, maturities) -> np.ndarray:
    """CIR futures curve seen from spot level ``s``"""
    maturities = np.asarray(maturities, dtype=float)
    return (s - theta) * np.exp(-kappa * maturities) + theta


@dataclass
class CalibrationResult:
    kappa: Optional[float]
    theta: float
    residual_norm: float
    s_now: float
    n_quotes: int
    degenerate_flat: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate_cir(quotes: Sequence[FuturesQuote], s_now: float) -> CalibrationResult:
    """
    Fit (kappa, theta) of the CIR futures curve to quotes by bounded least
    squares on relative price errors, restarting from several kappa guesses.
    """
    if not s_now > 0:
        raise NonPositiveParameter(f"spot level must be > 0, got {s_now}")
    maturities = np.array([q.maturity for q in quotes], dtype=float)
    prices = np.array([q.price for q in quotes], dtype=float)
    if len(np.unique(maturities)) < 2:
        raise InsufficientQuotes(f"need at least 2 quotes with distinct maturities, got {len(quotes)}")

    if np.allclose(prices, s_now, rtol=1e-12, atol=0.0):
        logger.warning("Flat term structure at the spot level: theta = spot, kappa is not identified")
        return CalibrationResult(
            kappa=None, theta=float(s_now), residual_norm=0.0, s_now=float(s_now),
            n_quotes=len(quotes), degenerate_flat=True,
        )

    def residuals(x: np.ndarray) -> np.ndarray:
        return cir_term_structure(x[0], x[1], s_now, maturities) / prices - 1.0

    theta0 = float(prices[np.argmax(maturities)])
    best = None
    for kappa0 in KAPPA_STARTS:
        try:
            fit = least_squares(
                residuals,
                x0=[kappa0, theta0],
                bounds=([1e-8, 1e-12], [KAPPA_MAX, np.inf]),
                method="trf",
                x_scale="jac",
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
                max_nfev=2000,
            )
        except (ValueError, FloatingPointError) as exc:
            logger.warning(f"CIR fit from kappa0={kappa0} failed: {exc}")
            continue
        if not np.all(np.isfinite(fit.x)):
            continue
        if best is None or fit.cost < best.cost:
            best = fit

    if best is None or best.status <= 0:
        raise FitDiverged("CIR term-structure fit did not converge from any start")
    kappa, theta = (float(x) for x in best.x)
    if kappa >= KAPPA_MAX * (1 - 1e-9):
        raise FitDiverged(f"CIR fit ran to the kappa bound ({KAPPA_MAX:g})")

    residual_norm = float(np.linalg.norm(cir_term_structure(kappa, theta, s_now, maturities) - prices))
    logger.info(f"Calibrated CIR to {len(quotes)} quotes: kappa={kappa:.6g}, theta={theta:.6g}, residual={residual_norm:.3g}")
    return CalibrationResult(
        kappa=kappa, theta=theta, residual_norm=residual_norm, s_now=float(s_now), n_quotes=len(quotes)
    )


def load_quotes(path: Union[str, Path]) -> List[FuturesQuote]:
    """Read a quote CSV with header ``maturity_years,price``"""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IoError(f"cannot read quotes from {path}: {exc}")
    missing = {"maturity_years", "price"} - set(frame.columns)
    if missing:
        raise ConfigError(f"quote file {path} lacks columns: {', '.join(sorted(missing))}")
    return [FuturesQuote(float(row.maturity_years), float(row.price)) for row in frame.itertuples(index=False)]
