"""
Self-financing derivative portfolios evolved along simulated paths, the
slippage process and the pathwise check of the portfolio value identity

    X_u / X_t = (S_u / S_t)^beta * prod_i (Y_i,u / Y_i,t)^eta_i * exp(int_t^u Z ds)
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

from ..errors import BankruptPath, MissingParameter, NonPositiveState, SingularSystem
from ..models.domain import (
    BenchmarkPath,
    DerivativeSpec,
    ExposureTarget,
    ModelKind,
    ModelSpec,
    PathBatch,
    PortfolioPath,
    SamplePath,
)
from .diffusion import relative_vol
from .exposure import closed_form_weights, elasticities, solve_weights, tracking_drift
from .pricing import price

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_BANKRUPT = "bankrupt"
STATUS_SINGULAR = "singular"
STATUS_NONPOSITIVE = "nonpositive_state"


def bs_slippage_rate(r: float, sigma: float, beta: float) -> float:
    return (r + 0.5 * beta * sigma**2) * (1.0 - beta)


def bs_nonnegative_slippage_interval(r: float, sigma: float) -> Tuple[float, float]:
    """Range of beta for which constant-beta tracking under bs gains on its benchmark"""
    return -2.0 * r / sigma**2, 1.0


def _exposures(model: ModelSpec, beta: float, etas: Sequence[float]) -> np.ndarray:
    exposures = np.array([beta, *etas], dtype=float)
    if exposures.size != model.dim:
        raise MissingParameter(f"{model.kind.value} needs {model.d} factor exposure(s), got {len(etas)}")
    return exposures


def generic_slippage(model: ModelSpec, m, beta: float, etas: Sequence[float] = ()):
    """
    Z = alpha + 1/2 sum_i eta_i (1 - eta_i) |sigma_i / M_i|^2
              - sum_{i<l} eta_i eta_l (sigma_i / M_i).(sigma_l / M_l)
    with eta_0 = beta and sigma_i the i-th row of the volatility matrix.
    """
    m = np.asarray(m, dtype=float)
    eta = _exposures(model, beta, etas)
    rel = relative_vol(model, m)
    gram = rel @ np.swapaxes(rel, -1, -2)
    diag = np.diagonal(gram, axis1=-2, axis2=-1)
    cross = np.triu(np.outer(eta, eta), k=1)
    z = tracking_drift(model, m, beta, etas)
    z = z + 0.5 * np.sum(eta * (1.0 - eta) * diag, axis=-1) - np.sum(cross * gram, axis=(-2, -1))
    return np.asarray(z)[()]


def model_slippage(model: ModelSpec, m, beta: float, etas: Sequence[float] = ()):
    """Per-model closed form of the slippage rate"""
    m = np.asarray(m, dtype=float)
    _exposures(model, beta, etas)
    r, p = model.r, model.params
    S = m[..., 0]

    if model.kind == ModelKind.BS:
        return np.broadcast_to(bs_slippage_rate(r, p["sigma"], beta), S.shape).copy()[()]
    if model.kind == ModelKind.CIR:
        kappa, theta, sigma = p["kappa"], p["theta"], p["sigma"]
        return (r - beta * kappa * (theta / S - 1.0) + 0.5 * beta * (1.0 - beta) * sigma**2 / S)[()]

    eta = etas[0]
    Y = m[..., 1]
    kappa, theta, nu, rho = p["kappa"], p["theta"], p["nu"], p["rho"]
    factor = -eta * kappa * (theta / Y - 1.0) + 0.5 * eta * (1.0 - eta) * nu**2 / Y
    if model.kind == ModelKind.HESTON:
        z = r - r * beta + factor + 0.5 * beta * (1.0 - beta) * Y - beta * eta * nu * rho
    else:
        gamma, sigma = p["gamma"], p["sigma"]
        z = (
            r
            - beta * gamma * (Y / S - 1.0)
            + factor
            + 0.5 * beta * (1.0 - beta) * sigma**2 / S
            - beta * eta * nu * rho * sigma / np.sqrt(S * Y)
        )
    return z[()]


def slippage_series(model: ModelSpec, path, beta: float, etas: Sequence[float] = ()) -> np.ndarray:
    """Z along a SamplePath or PathBatch, shaped like its time axis"""
    return np.asarray(model_slippage(model, path.m, beta, etas))


def integrate_slippage(z: np.ndarray, times: np.ndarray) -> np.ndarray:
    return cumulative_trapezoid(z, times, axis=-1, initial=0.0)


def benchmark_series(path, beta: float, etas: Sequence[float], x0: float) -> BenchmarkPath:
    """x0 * (S/S0)^beta * prod (Yi/Yi0)^eta_i along the path"""
    exposures = np.array([beta, *etas], dtype=float)
    m = np.asarray(path.m, dtype=float)
    log_moves = np.log(m / m[..., :1, :])
    values = x0 * np.exp(np.sum(log_moves * exposures, axis=-1))
    return BenchmarkPath(values=values, beta=beta, etas=tuple(etas))


def _prices(model: ModelSpec, t: float, m: np.ndarray, instruments: Sequence[DerivativeSpec]) -> np.ndarray:
    return np.stack([np.asarray(price(model, t, m, spec), dtype=float) for spec in instruments], axis=-1)


def _weights(model, t, m, instruments, target, method) -> np.ndarray:
    if method == "closed_form":
        return closed_form_weights(model, t, m, instruments, target)
    rows = [elasticities(model, t, m, spec) for spec in instruments]
    return solve_weights(rows, target, model, m).weights


def evolve_portfolios(
    batch: PathBatch,
    model: ModelSpec,
    instruments: Sequence[DerivativeSpec],
    target: ExposureTarget,
    x0: float,
    method: str = "solve",
    rebalance_every: int = 1,
) -> List[PortfolioPath]:
    """
    Run the discrete self-financing strategy on every path of the batch.

    Units are reset to weight * X / price every ``rebalance_every`` steps and
    held in between. Cash is what remains after paying for priced
    instruments; futures cost nothing to enter and pay their price change.
    Paths that go bankrupt, hit a singular solve or carry a nonpositive state
    keep a non-ok status and NaN values from the failing step on.
    """
    if not instruments:
        raise MissingParameter("a portfolio needs at least one instrument")
    if rebalance_every < 1:
        raise MissingParameter(f"rebalance_every must be >= 1, got {rebalance_every}")
    if any(spec.maturity < batch.grid.T - 1e-12 for spec in instruments):
        raise MissingParameter("every instrument must mature on or after the end of the grid")

    grid = batch.grid
    times, dt = grid.times, grid.dt
    n_paths, n_points, _ = batch.m.shape
    N = len(instruments)
    futures = np.array([spec.is_futures for spec in instruments])
    priced = ~futures

    status = np.array([STATUS_OK] * n_paths, dtype=object)
    bad_state = ~np.all(batch.m > 0, axis=(1, 2))
    status[bad_state] = STATUS_NONPOSITIVE
    m = np.where(bad_state[:, None, None], np.asarray(model.m0)[None, None, :], batch.m)

    values = np.full((n_paths, n_points), np.nan)
    weights = np.full((n_paths, n_points, N), np.nan)
    units = np.full((n_paths, n_points, N), np.nan)
    prices = np.full((n_paths, n_points, N), np.nan)
    values[:, 0] = x0
    prices[:, 0] = _prices(model, times[0], m[:, 0], instruments)
    held = np.zeros((n_paths, N))

    for k in range(n_points - 1):
        live = status == STATUS_OK
        if not live.any():
            break
        X = values[:, k]
        c_now = prices[:, k]

        if k % rebalance_every == 0:
            w = np.full((n_paths, N), np.nan)
            try:
                w[live] = _weights(model, times[k], m[live, k], instruments, target, method)
            except SingularSystem:
                # Retry path by path so one degenerate state does not sink the batch
                for p in np.flatnonzero(live):
                    try:
                        w[p] = _weights(model, times[k], m[p, k], instruments, target, method)
                    except SingularSystem:
                        status[p] = STATUS_SINGULAR
                        logger.warning(f"Path {int(batch.path_ids[p])}: singular exposure system at t={times[k]:.6g}")
                live = status == STATUS_OK
            held = np.where(live[:, None], w * X[:, None] / c_now, np.nan)

        weights[:, k] = held * c_now / X[:, None]
        units[:, k] = held

        c_next = _prices(model, times[k + 1], m[:, k + 1], instruments)
        prices[:, k + 1] = c_next
        cash = X - np.sum(np.where(priced, held * c_now, 0.0), axis=-1)
        X_next = (
            cash * (1.0 + model.r * dt)
            + np.sum(np.where(priced, held * c_next, 0.0), axis=-1)
            + np.sum(np.where(futures, held * (c_next - c_now), 0.0), axis=-1)
        )
        broke = live & ~(X_next > 0)
        if broke.any():
            status[broke] = STATUS_BANKRUPT
            for p in np.flatnonzero(broke):
                logger.warning(f"Path {int(batch.path_ids[p])}: portfolio value nonpositive at t={times[k + 1]:.6g}")
        values[:, k + 1] = np.where(status == STATUS_OK, X_next, np.nan)
        units[~(status == STATUS_OK), k + 1 :] = np.nan

    last_ok = status == STATUS_OK
    units[last_ok, -1] = units[last_ok, -2]
    weights[last_ok, -1] = units[last_ok, -1] * prices[last_ok, -1] / values[last_ok, -1, None]

    exposures = target.exposures
    z = generic_slippage(model, m, target.beta, target.etas)
    integrated = integrate_slippage(z, times)
    labels = tuple(spec.label for spec in instruments)

    counts = {s: int(np.sum(status == s)) for s in (STATUS_BANKRUPT, STATUS_SINGULAR, STATUS_NONPOSITIVE)}
    excluded = sum(counts.values())
    if excluded:
        logger.warning(f"{excluded} of {n_paths} paths excluded: {counts}")
    logger.info(f"Evolved {n_paths} portfolios with exposures {exposures.tolist()} over {grid.n_steps} steps")

    return [
        PortfolioPath(
            grid=grid,
            values=values[p],
            weights=weights[p],
            units=units[p],
            prices=prices[p],
            slippage=z[p],
            integrated_slippage=integrated[p],
            labels=labels,
            futures_mask=tuple(bool(x) for x in futures),
            r=model.r,
            path_index=int(batch.path_ids[p]),
            status=str(status[p]),
        )
        for p in range(n_paths)
    ]


def evolve_portfolio(
    path: SamplePath,
    model: ModelSpec,
    instruments: Sequence[DerivativeSpec],
    target: ExposureTarget,
    x0: float,
    method: str = "solve",
    rebalance_every: int = 1,
) -> PortfolioPath:
    portfolio = evolve_portfolios(path.as_batch(), model, instruments, target, x0, method, rebalance_every)[0]
    if portfolio.status == STATUS_BANKRUPT:
        raise BankruptPath(f"portfolio value hit zero on path {path.path_index}")
    if portfolio.status == STATUS_SINGULAR:
        raise SingularSystem(f"exposure system became singular on path {path.path_index}")
    if portfolio.status == STATUS_NONPOSITIVE:
        raise NonPositiveState(f"state left the positive orthant on path {path.path_index}")
    return portfolio


def value_identity_errors(values: np.ndarray, m: np.ndarray, integrated: np.ndarray, exposures: np.ndarray) -> np.ndarray:
    """Worst relative gap, per path, between X_u / X_0 and the exposure-weighted state moves times e^{int Z}"""
    predicted = np.exp(np.sum(np.log(m / m[..., :1, :]) * exposures, axis=-1) + integrated)
    realized = values / values[..., :1]
    return np.max(np.abs(realized / predicted - 1.0), axis=-1)


def verify_value_identity(portfolio: PortfolioPath, path: SamplePath, target: ExposureTarget) -> float:
    if not portfolio.ok:
        raise BankruptPath(f"path {portfolio.path_index} ended with status {portfolio.status}")
    return float(value_identity_errors(portfolio.values, path.m, portfolio.integrated_slippage, target.exposures))


def audit_self_financing(portfolio: PortfolioPath) -> float:
    """
    Rebuild each step from wealth fractions, X_{k+1} = X_k (1 + sum w dc/c +
    r (1 - sum_priced w) dt), and return the worst relative gap to the stored
    values.
    """
    X = portfolio.values
    if not np.all(np.isfinite(X)):
        raise BankruptPath(f"path {portfolio.path_index} has no complete value series")
    dt = portfolio.grid.dt
    priced = ~np.array(portfolio.futures_mask)
    c = portfolio.prices
    w = portfolio.units[:-1] * c[:-1] / X[:-1, None]
    moves = np.sum(w * (c[1:] - c[:-1]) / c[:-1], axis=-1)
    cash_share = 1.0 - np.sum(np.where(priced, w, 0.0), axis=-1)
    rebuilt = X[:-1] * (1.0 + moves + portfolio.r * cash_share * dt)
    return float(np.max(np.abs(rebuilt / X[1:] - 1.0)))


def portfolio_frame(portfolio: PortfolioPath, benchmark: Optional[BenchmarkPath] = None) -> pd.DataFrame:
    """Per-path export: t, X, benchmark, Z, int_Z, one weight column per instrument"""
    frame = pd.DataFrame({"t": portfolio.grid.times, "X": portfolio.values})
    if benchmark is not None:
        frame["benchmark"] = benchmark.values
    frame["Z"] = portfolio.slippage
    frame["int_Z"] = portfolio.integrated_slippage
    for j, label in enumerate(portfolio.labels):
        frame[f"w_{label}"] = portfolio.weights[:, j]
    return frame


def summarize(
    portfolios: Sequence[PortfolioPath],
    benchmarks: Optional[Sequence[BenchmarkPath]] = None,
) -> Dict[str, float]:
    """Terminal statistics over the ok paths, with counts of the excluded ones"""
    statuses = [p.status for p in portfolios]
    ok = [i for i, p in enumerate(portfolios) if p.ok]
    summary: Dict[str, float] = {
        "n_paths": len(portfolios),
        "n_ok": len(ok),
        "n_bankrupt": statuses.count(STATUS_BANKRUPT),
        "n_singular": statuses.count(STATUS_SINGULAR),
        "n_nonpositive": statuses.count(STATUS_NONPOSITIVE),
    }
    if not ok:
        return summary

    terminal = np.array([portfolios[i].values[-1] for i in ok])
    int_z = np.array([portfolios[i].integrated_slippage[-1] for i in ok])
    summary.update(
        terminal_mean=float(np.mean(terminal)),
        terminal_std=float(np.std(terminal)),
        integrated_slippage_mean=float(np.mean(int_z)),
    )
    if benchmarks is not None:
        excess = np.log(terminal / np.array([benchmarks[i].values[-1] for i in ok]))
        q05, q50, q95 = np.quantile(excess, [0.05, 0.5, 0.95])
        summary.update(
            log_excess_mean=float(np.mean(excess)),
            log_excess_std=float(np.std(excess)),
            log_excess_q05=float(q05),
            log_excess_q50=float(q50),
            log_excess_q95=float(q95),
        )
    return summary


def summary_frame(rows: Sequence[Dict[str, float]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows))
