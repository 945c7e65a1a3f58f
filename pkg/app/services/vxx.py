"""
Volatility ETN roll strategy under CIR: within each futures cycle
(T_{i-1}, T_i] the note moves linearly from the front contract into the
next one. Also the constant-beta tracker on the rolling front contract used
as its comparison, and return diagnostics for both.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from ..errors import OutOfCalendar, UnsupportedPair
from ..models.domain import DerivativeSpec, InstrumentKind, ModelKind, ModelSpec, PathBatch, RollCalendar
from .exposure import strategy_cir_futures
from .pricing import price_futures

logger = logging.getLogger(__name__)

REGRESSION_WINDOW = 5


def _require_cir(model: ModelSpec) -> None:
    if model.kind != ModelKind.CIR:
        raise UnsupportedPair(f"the roll strategy is defined under cir, got {model.kind.value}")


def _cycles(t, calendar: RollCalendar) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized cycle lookup: (1-based index, cycle start, cycle end)"""
    mats = np.asarray(calendar.maturities)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > mats[-1]):
        raise OutOfCalendar(f"times outside calendar [0, {mats[-1]:g}]")
    idx = np.searchsorted(mats, t, side="left")
    starts = np.concatenate([[0.0], mats])[idx]
    return idx + 1, starts, mats[idx]


def _futures(maturity: float) -> DerivativeSpec:
    return DerivativeSpec(InstrumentKind.FUTURES_INDEX, float(maturity))


def vxx_weights(t, calendar: RollCalendar):
    """(front weight, next weight) at t; the front weight falls linearly from 1 to 0 over a cycle"""
    _, start, end = _cycles(t, calendar)
    u = (end - np.asarray(t, dtype=float)) / (end - start)
    return u[()], (1.0 - u)[()]


def _next_maturity(calendar: RollCalendar, i: int) -> float:
    if i >= len(calendar.maturities):
        raise OutOfCalendar(f"no contract after the one maturing at {calendar.maturities[i - 1]:g}")
    return calendar.maturities[i]


def _settle_price(model: ModelSpec, t: float, m: np.ndarray, maturity: float) -> np.ndarray:
    # A contract that matured inside the step settles at the index level
    return np.asarray(price_futures(model, min(t, maturity), m, _futures(maturity)))


def evolve_vxx(batch, model: ModelSpec, calendar: RollCalendar, v0: float) -> np.ndarray:
    """Values of the roll strategy along each path, shaped like the path's time axis"""
    _require_cir(model)
    m = np.asarray(batch.m, dtype=float)
    times, dt = batch.grid.times, batch.grid.dt
    values = np.empty(m.shape[:-1])
    values[..., 0] = v0

    for k in range(len(times) - 1):
        t = float(times[k])
        i = int(calendar.cycle_index(t))
        front, nxt = calendar.maturities[i - 1], _next_maturity(calendar, i)
        u, _ = vxx_weights(t, calendar)
        V = values[..., k]
        now, later = m[..., k, :], m[..., k + 1, :]
        gain = 0.0
        for weight, maturity in ((u, front), (1.0 - u, nxt)):
            if weight == 0.0:
                continue
            f_now = _settle_price(model, t, now, maturity)
            f_next = _settle_price(model, float(times[k + 1]), later, maturity)
            gain = gain + weight * V * (f_next - f_now) / f_now
        values[..., k + 1] = V * (1.0 + model.r * dt) + gain
    return values


def implied_exposure(t, S, calendar: RollCalendar, model: ModelSpec):
    """
    (alpha_V, beta_V) read off the roll strategy's return dynamics:

        beta_V  = S [u e^{-kappa tau1} / f1 + (1 - u) e^{-kappa tau2} / f2]
        alpha_V = r + beta_V kappa (1 - theta / S)
    """
    _require_cir(model)
    kappa, theta = model["kappa"], model["theta"]
    t = np.asarray(t, dtype=float)
    S = np.asarray(S, dtype=float)
    i, start, end = _cycles(t, calendar)
    mats = np.asarray(calendar.maturities)
    if np.any(i >= len(mats)):
        raise OutOfCalendar("implied exposure needs the contract after the current cycle")
    after = mats[i]
    u = (end - t) / (end - start)

    tau1, tau2 = end - t, after - t
    f1 = (S - theta) * np.exp(-kappa * tau1) + theta
    f2 = (S - theta) * np.exp(-kappa * tau2) + theta
    beta = S * (u * np.exp(-kappa * tau1) / f1 + (1.0 - u) * np.exp(-kappa * tau2) / f2)
    alpha = model.r + beta * kappa * (1.0 - theta / S)
    return alpha[()], beta[()]


def evolve_rolling_tracker(
    batch,
    model: ModelSpec,
    calendar: RollCalendar,
    beta: float,
    v0: float,
    contract: str = "front",
):
    """
    Constant-beta portfolio in one CIR futures, always the first (or, with
    contract="second", the second) maturity strictly after t. Returns
    (values, weights); the weight jumps when the held contract rolls.
    """
    _require_cir(model)
    if contract not in ("front", "second"):
        raise UnsupportedPair(f"contract must be 'front' or 'second', got {contract!r}")
    offset = 0 if contract == "front" else 1
    m = np.asarray(batch.m, dtype=float)
    times, dt = batch.grid.times, batch.grid.dt
    mats = np.asarray(calendar.maturities)
    values = np.empty(m.shape[:-1])
    weights = np.empty(m.shape[:-1])
    values[..., 0] = v0

    for k in range(len(times)):
        t = float(times[k])
        j = int(np.searchsorted(mats, t, side="right")) + offset
        if j >= len(mats):
            raise OutOfCalendar(f"calendar has no {contract} contract after t={t:g}")
        spec = _futures(mats[j])
        S = m[..., k, 0]
        weights[..., k] = strategy_cir_futures(t, S, spec, model, beta)
        if k == len(times) - 1:
            break
        f_now = _settle_price(model, t, m[..., k, :], spec.maturity)
        f_next = _settle_price(model, float(times[k + 1]), m[..., k + 1, :], spec.maturity)
        V = values[..., k]
        values[..., k + 1] = V * (1.0 + model.r * dt) + weights[..., k] * V * (f_next - f_now) / f_now
    return values, weights


def _returns(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.diff(values, axis=-1) / values[..., :-1]


def realized_qv(values) -> np.ndarray:
    """Sum of squared simple returns along the last axis"""
    return np.sum(_returns(values) ** 2, axis=-1)[()]


def return_slope(reference, values) -> np.ndarray:
    """OLS slope of the returns of ``values`` on the returns of ``reference``, per path"""
    x, y = _returns(reference), _returns(values)
    x_c = x - x.mean(axis=-1, keepdims=True)
    y_c = y - y.mean(axis=-1, keepdims=True)
    return (np.sum(x_c * y_c, axis=-1) / np.sum(x_c**2, axis=-1))[()]


def local_beta_regression(reference, values, window: int = REGRESSION_WINDOW) -> np.ndarray:
    """Slope of returns on reference returns over a centered rolling window, one value per step"""
    x = pd.Series(_returns(reference))
    y = pd.Series(_returns(values))
    roll = y.rolling(window, center=True)
    return (roll.cov(x) / x.rolling(window, center=True).var()).to_numpy()


@dataclass
class VxxRun:
    times: np.ndarray
    vix: np.ndarray  # (P, n+1)
    vxx: np.ndarray
    dynamic: np.ndarray
    dynamic_weight: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def qv_vxx(self) -> np.ndarray:
        return np.asarray(realized_qv(self.vxx))

    @property
    def qv_vix(self) -> np.ndarray:
        return np.asarray(realized_qv(self.vix))

    @property
    def average_beta(self) -> np.ndarray:
        return self.beta.mean(axis=-1)


def run_vxx(
    batch: PathBatch,
    model: ModelSpec,
    calendar: RollCalendar,
    v0: float,
    beta: float = 1.0,
    contract: str = "front",
) -> VxxRun:
    """Roll strategy, rolling beta tracker and implied exposures on a batch of CIR paths"""
    vxx = evolve_vxx(batch, model, calendar, v0)
    dynamic, weight = evolve_rolling_tracker(batch, model, calendar, beta, v0, contract)
    S = batch.m[..., 0]
    alpha, implied_beta = implied_exposure(batch.times[None, :], S, calendar, model)
    run = VxxRun(
        times=batch.times,
        vix=S,
        vxx=vxx,
        dynamic=dynamic,
        dynamic_weight=weight,
        alpha=np.asarray(alpha),
        beta=np.asarray(implied_beta),
    )
    logger.info(
        f"Roll strategy on {len(batch)} paths: mean implied beta {float(run.average_beta.mean()):.3f}, "
        f"QV(VXX) < QV(VIX) on {int(np.sum(run.qv_vxx < run.qv_vix))} paths"
    )
    return run


def vxx_frame(run: VxxRun, path: int = 0) -> pd.DataFrame:
    """t, VIX, VXX, dynamic, alpha_V, beta_V for one path"""
    return pd.DataFrame(
        {
            "t": run.times,
            "VIX": run.vix[path],
            "VXX": run.vxx[path],
            "dynamic": run.dynamic[path],
            "alpha_V": run.alpha[path],
            "beta_V": run.beta[path],
        }
    )
