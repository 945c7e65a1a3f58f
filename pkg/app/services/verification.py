"""
Invariant suite behind `verify`. Every check returns a row
(check, value, threshold, passed); values are worst cases over seeded draws.
"""

import logging
from typing import Callable, Dict, List, Tuple

import numpy as np
import pandas as pd

from ..errors import SingularSystem
from ..models import presets
from ..models.domain import (
    DerivativeSpec,
    ExposureTarget,
    FuturesQuote,
    InstrumentKind,
    ModelSpec,
    RollCalendar,
)
from .diffusion import build_model, drift_vol
from .exposure import closed_form_weights, elasticities, null_residual, solve_weights
from .portfolio import bs_slippage_rate, evolve_portfolios, value_identity_errors
from .pricing import calibrate_cir, cir_term_structure, greeks_fd, price
from .simulate import grid_from_dt, simulate_batch, simulate_from_increments
from .vxx import run_vxx

logger = logging.getLogger(__name__)

SLIPPAGE_BETAS = (-3.0, -2.5, -1.0, 0.0, 0.5, 1.0, 2.0, 3.0)

INDEX = InstrumentKind.FUTURES_INDEX
FACTOR = InstrumentKind.FUTURES_FACTOR
CALL = InstrumentKind.CALL


def instrument_sets() -> Dict[str, Tuple[ModelSpec, List[DerivativeSpec], Tuple, float]]:
    """
    Model, instruments, per-entry state ranges (low, high) and the latest
    evaluation time for the randomized checks. Ranges keep calls near the
    money and futures decay factors away from underflow.
    """
    bs = build_model(presets.BS_TRACKING["model"])
    heston = build_model(presets.HESTON)
    cir = build_model(presets.CIR_VXX["model"])
    csqr = build_model(presets.CSQR)
    csqr_equal = build_model({**presets.CSQR, "gamma": 1.0})
    return {
        "bs": (bs, [DerivativeSpec(CALL, 1.0, 50.0), DerivativeSpec(INDEX, 1.0)], ((45.0, 55.0),), 0.75),
        "heston": (heston, [DerivativeSpec(INDEX, 1.0), DerivativeSpec(FACTOR, 1.0)], ((50.0, 150.0), (0.01, 0.1)), 0.9),
        "cir": (cir, [DerivativeSpec(INDEX, 0.25)], ((0.1, 0.4),), 0.2),
        "csqr": (csqr, [DerivativeSpec(INDEX, 1.0), DerivativeSpec(INDEX, 1.5), DerivativeSpec(FACTOR, 1.0)], ((0.1, 0.4), (0.1, 0.4)), 0.9),
        "csqr_equal": (csqr_equal, [DerivativeSpec(INDEX, 1.0), DerivativeSpec(INDEX, 1.5)], ((0.1, 0.4), (0.1, 0.4)), 0.9),
    }


def random_states(rng: np.random.Generator, ranges, n: int, horizon: float = 0.9):
    t = rng.uniform(0.0, horizon, n)
    m = np.column_stack([rng.uniform(lo, hi, n) for lo, hi in ranges])
    return t, m


def _rel_gap(a, b, scale) -> float:
    a, b, scale = (np.asarray(x, dtype=float) for x in (a, b, scale))
    scale = np.maximum(np.abs(scale), np.finfo(float).tiny)
    return float(np.max(np.abs(a - b) / scale))


def null_relation_error(seed: int, n: int = 1000) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for model, instruments, ranges, horizon in instrument_sets().values():
        t, m = random_states(rng, ranges, n, horizon)
        drift, _ = drift_vol(model, m)
        for spec in instruments:
            row = elasticities(model, t, m, spec)
            terms = np.abs(drift / m * row.exposures).sum(axis=-1) + np.abs(row.excess_drift(model.r))
            worst = max(worst, _rel_gap(null_residual(model, m, row), 0.0, terms))
    return worst


def elasticity_fd_error(seed: int, n: int = 1000, bump: float = 1e-4) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for model, instruments, ranges, horizon in instrument_sets().values():
        t, m = random_states(rng, ranges, n, horizon)
        drift, _ = drift_vol(model, m)
        for spec in instruments:
            row = elasticities(model, t, m, spec)
            value = np.asarray(price(model, t, m, spec))
            fd = greeks_fd(model, t, m, spec, bump)
            exposures_fd = m * fd / value[..., None]
            flux_fd = np.sum(drift * fd, axis=-1) / value
            flux = np.sum(drift / m * np.asarray(row.exposures), axis=-1)
            scale = np.sum(np.abs(drift * fd), axis=-1) / value
            worst = max(worst, _rel_gap(exposures_fd, row.exposures, np.abs(row.exposures).max(axis=-1, keepdims=True)))
            worst = max(worst, _rel_gap(flux_fd, flux, scale))
    return worst


def elasticity_fd_order(seed: int, n: int = 200) -> float:
    """Observed order of the central difference error for the call index elasticity, near the money"""
    rng = np.random.default_rng(seed)
    model = build_model(presets.BS_TRACKING["model"])
    spec = DerivativeSpec(CALL, 1.0, 50.0)
    t = rng.uniform(0.0, 0.75, n)
    m = rng.uniform(45.0, 55.0, (n, 1))
    exact = np.asarray(elasticities(model, t, m, spec).index_elasticity)
    value = np.asarray(price(model, t, m, spec))
    errors = [
        np.max(np.abs(m[:, 0] * greeks_fd(model, t, m, spec, bump)[:, 0] / value - exact))
        for bump in (1e-3, 1e-4)
    ]
    return float(np.log10(errors[0] / errors[1]))


def closed_form_gap(seed: int, n: int = 1000) -> float:
    """Worst relative gap between explicit strategies and the linear solve"""
    rng = np.random.default_rng(seed)
    sets = instrument_sets()
    cases = [
        ("bs", [sets["bs"][1][0]], ExposureTarget(2.0)),
        ("bs", [sets["bs"][1][1]], ExposureTarget(-1.0)),
        ("cir", sets["cir"][1], ExposureTarget(1.0)),
        ("heston", sets["heston"][1], ExposureTarget(1.0, (0.5,))),
        ("csqr", sets["csqr"][1][:2], ExposureTarget(1.0, (0.3,))),
        ("csqr_equal", sets["csqr_equal"][1], ExposureTarget(1.0, (-0.4,))),
    ]
    worst = 0.0
    for name, instruments, target in cases:
        model, _, ranges, horizon = sets[name]
        t, m = random_states(rng, ranges, n, horizon)
        explicit = closed_form_weights(model, t, m, instruments, target)
        solved = solve_weights([elasticities(model, t, m, spec) for spec in instruments], target, model, m).weights
        worst = max(worst, _rel_gap(explicit, solved, np.abs(solved).max(axis=-1, keepdims=True)))
    return worst


def heston_index_pair_is_singular() -> float:
    model = build_model(presets.HESTON)
    rows = [elasticities(model, 0.0, model.m0, DerivativeSpec(INDEX, T)) for T in (0.5, 1.0)]
    try:
        solve_weights(rows, ExposureTarget(1.0, (0.5,)), model, np.asarray(model.m0))
    except SingularSystem:
        return 1.0
    return 0.0


def calibration_error() -> float:
    maturities = np.array([1, 2, 3, 6]) / 12.0
    prices = cir_term_structure(20.0, 0.2, 0.25, maturities)
    fit = calibrate_cir([FuturesQuote(T, p) for T, p in zip(maturities, prices)], 0.25)
    return max(abs(fit.kappa / 20.0 - 1.0), abs(fit.theta / 0.2 - 1.0))


def bs_slippage_gaps(seed: int, n_paths: int, dt: float) -> Dict[float, float]:
    """|mean(log X_T/X_0 - beta log S_T/S_0) - Z T| per beta on shared paths"""
    model = build_model(presets.BS_TRACKING["model"])
    grid = grid_from_dt(0.0, 0.5, dt)
    batch = simulate_batch(model, grid, n_paths, seed)
    futures = [DerivativeSpec(INDEX, 0.5)]
    log_s = np.log(batch.m[:, -1, 0] / batch.m[:, 0, 0])
    gaps = {}
    for beta in SLIPPAGE_BETAS:
        book = evolve_portfolios(batch, model, futures, ExposureTarget(beta), 100.0, method="closed_form")
        excess = np.array([np.log(p.values[-1] / p.values[0]) for p in book]) - beta * log_s
        gaps[beta] = abs(float(np.mean(excess)) - bs_slippage_rate(model.r, model["sigma"], beta) * grid.T)
    return gaps


def value_identity_cases() -> Dict[str, Tuple[ModelSpec, List[DerivativeSpec], ExposureTarget, float]]:
    """Model, instruments, constant target and horizon for the portfolio value identity"""
    return {
        "bs_beta2": (build_model(presets.BS_TRACKING["model"]), [DerivativeSpec(INDEX, 0.5)], ExposureTarget(2.0), 0.5),
        "cir_beta1": (build_model(presets.CIR_VXX["model"]), [DerivativeSpec(INDEX, 1 / 12)], ExposureTarget(1.0), 1 / 12),
        "csqr_beta1": (
            build_model(presets.CSQR),
            [DerivativeSpec(INDEX, 0.5), DerivativeSpec(INDEX, 1.0)],
            ExposureTarget(1.0, (0.0,)),
            0.5,
        ),
    }


def value_identity_error(name: str, seed: int, n_paths: int, dt: float, dW=None) -> float:
    model, instruments, target, horizon = value_identity_cases()[name]
    grid = grid_from_dt(0.0, horizon, dt)
    if dW is None:
        batch = simulate_batch(model, grid, n_paths, seed)
    else:
        batch = simulate_from_increments(model, grid, dW, seed)
    book = evolve_portfolios(batch, model, instruments, target, 100.0, method="closed_form")
    ok = [i for i, p in enumerate(book) if p.ok]
    values = np.array([book[i].values for i in ok])
    integrated = np.array([book[i].integrated_slippage for i in ok])
    return float(np.max(value_identity_errors(values, batch.m[ok], integrated, target.exposures)))


def vxx_qv_share(seed: int, n_paths: int) -> float:
    model = build_model(presets.CIR_VXX["model"])
    grid = grid_from_dt(0.0, 0.5, 1.0 / 2520.0)
    batch = simulate_batch(model, grid, n_paths, seed)
    run = run_vxx(batch, model, RollCalendar.covering(grid.T), 100.0)
    return float(np.mean(run.qv_vxx < run.qv_vix))


def run_checks(seed: int, n_paths: int, dt: float) -> pd.DataFrame:
    checks: List[Tuple[str, Callable[[], float], float, str]] = [
        ("null_relation", lambda: null_relation_error(seed), 1e-10, "max"),
        ("elasticity_fd", lambda: elasticity_fd_error(seed), 1e-6, "max"),
        ("elasticity_fd_order", lambda: elasticity_fd_order(seed), 1.9, "min"),
        ("closed_form_vs_solve", lambda: closed_form_gap(seed), 1e-10, "max"),
        ("heston_index_pair_singular", heston_index_pair_is_singular, 1.0, "min"),
        ("cir_calibration", calibration_error, 1e-6, "max"),
        ("vxx_qv_below_index", lambda: vxx_qv_share(seed, n_paths), 1.0, "min"),
    ]
    rows = []
    for name, check, threshold, sense in checks:
        rows.append(_row(name, check(), threshold, sense))

    for beta, gap in bs_slippage_gaps(seed, n_paths, dt).items():
        rows.append(_row(f"bs_slippage_beta{beta:g}", gap, 2e-3, "max"))
    for name in value_identity_cases():
        rows.append(_row(f"value_identity_{name}", value_identity_error(name, seed, n_paths, dt), 5e-3, "max"))

    frame = pd.DataFrame(rows, columns=["check", "value", "threshold", "passed"])
    failed = frame.loc[~frame["passed"], "check"].tolist()
    if failed:
        logger.error(f"Invariant checks failed: {', '.join(failed)}")
    else:
        logger.info(f"All {len(frame)} invariant checks passed")
    return frame


def _row(name: str, value: float, threshold: float, sense: str):
    passed = value <= threshold if sense == "max" else value >= threshold
    return (name, float(value), float(threshold), bool(passed))
