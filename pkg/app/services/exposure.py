"""
Price elasticities, the tracking condition, the exposure solve and the
closed-form trading strategies.

Every instrument return decomposes as

    dc/c = drift_coeff dt + D dS/S + sum_i E_i dY_i/Y_i

and absence of arbitrage forces drift_coeff - r (or F for futures) to equal
-sum_j (drift_j / M_j) * exposure_j. The portfolio drift row is therefore
implied by the exposure rows; solve_weights only solves the exposure rows and
checks the drift.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..config import get_settings
from ..errors import (
    DegenerateMaturities,
    ExpiredContract,
    InconsistentTarget,
    MissingParameter,
    SingularSystem,
    UnsupportedPair,
)
from ..models.domain import (
    DerivativeSpec,
    ElasticityRow,
    ExposureTarget,
    InstrumentKind,
    ModelKind,
    ModelSpec,
)
from .diffusion import drift_vol
from .pricing import (
    EQUAL_SPEED_TOL,
    _state,
    bs_d_plus,
    check_pair,
    gradient,
    norm_cdf,
    price,
    price_futures,
)

logger = logging.getLogger(__name__)


def elasticities(model: ModelSpec, t, state, spec: DerivativeSpec) -> ElasticityRow:
    check_pair(model, spec)
    m = _state(state)
    value = np.asarray(price(model, t, m, spec))
    grad = gradient(model, t, m, spec)
    drift, _ = drift_vol(model, m)
    flux = np.sum(drift * grad, axis=-1)

    exposures = m * grad / value[..., None]
    if spec.is_futures:
        drift_coeff = -flux / value
    else:
        drift_coeff = model.r - flux / value

    return ElasticityRow(
        drift_coeff=drift_coeff,
        index_elasticity=exposures[..., 0],
        factor_elasticities=exposures[..., 1:],
        is_futures=spec.is_futures,
        r=model.r,
    )


def _relative_drift(model: ModelSpec, state) -> np.ndarray:
    m = _state(state)
    drift, _ = drift_vol(model, m)
    return drift / m


def tracking_drift(model: ModelSpec, state, beta: float, etas: Sequence[float] = ()):
    """alpha = r - (drift_S / S) beta - sum_i (drift_Yi / Yi) eta_i"""
    exposures = np.array([beta, *etas], dtype=float)
    if exposures.size != model.dim:
        raise MissingParameter(f"{model.kind.value} needs {model.d} factor exposure(s), got {len(etas)}")
    return (model.r - np.sum(_relative_drift(model, state) * exposures, axis=-1))[()]


def null_residual(model: ModelSpec, state, row: ElasticityRow):
    """excess drift + sum_j (drift_j / M_j) exposure_j, zero for any arbitrage-free price"""
    return (row.excess_drift(model.r) + np.sum(_relative_drift(model, state) * row.exposures, axis=-1))[()]


@dataclass
class WeightSolution:
    """Wealth fractions per instrument and solve diagnostics (leading axes follow the rows)"""

    weights: np.ndarray
    alpha: np.ndarray
    drift_residual: np.ndarray
    exposure_residual: np.ndarray
    cond: np.ndarray


def exposure_matrix(rows: Sequence[ElasticityRow]) -> np.ndarray:
    """(..., d+1, N): row j holds every instrument's exposure to M_j"""
    return np.stack([np.asarray(row.exposures) for row in rows], axis=-1)


def solve_weights(
    rows: Sequence[ElasticityRow],
    target: ExposureTarget,
    model: Optional[ModelSpec] = None,
    state=None,
) -> WeightSolution:
    """
    Solve the exposure rows for wealth fractions. N = d+1 instruments give the
    unique solution, more give the minimum-norm one.

    The drift row is checked rather than solved. The implied alpha is compared
    with ``target.alpha`` when supplied, and with the tracking condition when
    ``model`` and ``state`` are supplied.
    """
    if not rows:
        raise MissingParameter("solve_weights needs at least one instrument")
    settings = get_settings()
    A = exposure_matrix(rows)
    b = target.exposures
    if A.shape[-2] != b.size:
        raise MissingParameter(f"target has {b.size} exposures but instruments carry {A.shape[-2]}")

    sv = np.linalg.svd(A, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(sv[..., -1] > 0, sv[..., 0] / sv[..., -1], np.inf)
    if A.shape[-1] < A.shape[-2]:
        cond = np.full(cond.shape, np.inf)

    weights = np.linalg.pinv(A, rcond=1.0 / settings.singular_cond) @ b
    exposure_residual = np.linalg.norm(np.einsum("...ij,...j->...i", A, weights) - b, axis=-1)

    tol = 1e-8 * max(1.0, float(np.linalg.norm(b)))
    if np.any(exposure_residual > tol):
        worst = float(np.max(exposure_residual))
        raise SingularSystem(
            f"exposure target is out of reach of the instruments "
            f"(residual {worst:.3g}, condition number {float(np.max(cond)):.3g})"
        )
    if np.any(cond > settings.singular_cond):
        logger.warning("Rank-deficient exposure matrix; target is consistent, using minimum-norm weights")
    elif np.any(cond > settings.near_singular_cond):
        logger.warning(f"Near-singular exposure matrix (condition number {float(np.max(cond)):.3g})")

    r = model.r if model is not None else rows[0].r
    excess = np.stack([np.asarray(row.excess_drift(r)) for row in rows], axis=-1)
    carry = weights * excess
    alpha = r + np.sum(carry, axis=-1)
    scale = np.maximum(1.0, np.sum(np.abs(carry), axis=-1))

    if target.alpha is not None:
        gap = np.abs(alpha - target.alpha)
        if np.any(gap > settings.drift_tol * np.maximum(scale, abs(target.alpha))):
            raise InconsistentTarget(
                f"requested alpha {target.alpha:g} violates the tracking condition "
                f"(implied alpha {float(np.ravel(alpha)[np.argmax(np.ravel(gap))]):g})"
            )

    drift_residual = np.zeros_like(alpha)
    if model is not None and state is not None:
        drift_residual = alpha - tracking_drift(model, state, target.beta, target.etas)
        if np.any(np.abs(drift_residual) > settings.drift_tol * scale):
            raise InconsistentTarget(
                f"implied drift misses the tracking condition by {float(np.max(np.abs(drift_residual))):.3g}"
            )

    return WeightSolution(
        weights=weights,
        alpha=alpha,
        drift_residual=drift_residual,
        exposure_residual=exposure_residual,
        cond=cond,
    )


def two_instrument_weights(rows: Sequence[ElasticityRow], beta: float, eta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Explicit inverse of the 2x2 exposure system of a one-factor model"""
    if len(rows) != 2:
        raise MissingParameter("two_instrument_weights takes exactly two instruments")
    D1, D2 = (np.asarray(r.index_elasticity) for r in rows)
    E1, E2 = (np.asarray(r.factor_elasticities)[..., 0] for r in rows)
    det = D1 * E2 - D2 * E1
    scale = np.maximum(np.abs(D1 * E2), np.abs(D2 * E1))
    if np.any(np.abs(det) <= scale / get_settings().singular_cond):
        raise SingularSystem("instrument elasticities are linearly dependent (D1 E2 = D2 E1)")
    return (beta * E2 - eta * D2) / det, (eta * D1 - beta * E1) / det


def _bs_slippage(model: ModelSpec, beta: float) -> float:
    return (model.r + 0.5 * beta * model["sigma"] ** 2) * (1.0 - beta)


def strategy_bs_call(t, S, x0: float, s0: float, spec: DerivativeSpec, model: ModelSpec, beta: float):
    """Calls held at t by the constant-beta strategy started at (x0, s0)"""
    t = np.asarray(t, dtype=float)
    if np.any(t >= spec.maturity):
        raise ExpiredContract(f"call strategy needs t < {spec.maturity:g}")
    S = np.asarray(S, dtype=float)
    d_plus = bs_d_plus(spec.maturity - t, S, spec.strike, model.r, model["sigma"])
    level = (beta * x0 / s0) * (S / s0) ** (beta - 1.0) * np.exp(_bs_slippage(model, beta) * t)
    return (level / norm_cdf(d_plus))[()]


def strategy_bs_futures(t, S, x0: float, s0: float, spec: DerivativeSpec, model: ModelSpec, beta: float):
    """Futures contracts held at t by the constant-beta strategy started at (x0, s0)"""
    t = np.asarray(t, dtype=float)
    if np.any(t > spec.maturity + 1e-12):
        raise ExpiredContract(f"futures strategy needs t <= {spec.maturity:g}")
    S = np.asarray(S, dtype=float)
    carry = _bs_slippage(model, beta) * t - model.r * (spec.maturity - t)
    return ((beta * x0 / s0) * (S / s0) ** (beta - 1.0) * np.exp(carry))[()]


def strategy_cir_futures(t, S, spec: DerivativeSpec, model: ModelSpec, beta: float):
    """Wealth fraction in one CIR futures: beta + beta theta / S (e^{kappa tau} - 1)"""
    t = np.asarray(t, dtype=float)
    if np.any(t > spec.maturity + 1e-12):
        raise ExpiredContract(f"futures strategy needs t <= {spec.maturity:g}")
    tau = np.maximum(spec.maturity - t, 0.0)
    S = np.asarray(S, dtype=float)
    return (beta + beta * model["theta"] / S * np.expm1(model["kappa"] * tau))[()]


def strategy_heston_index_vol_futures(
    t, state, specs: Tuple[DerivativeSpec, DerivativeSpec], model: ModelSpec, beta: float, eta: float
):
    """(u1, u2) for index futures plus variance futures under heston"""
    index_spec, factor_spec = specs
    if index_spec.kind != InstrumentKind.FUTURES_INDEX or factor_spec.kind != InstrumentKind.FUTURES_FACTOR:
        raise UnsupportedPair("expected (index futures, variance futures)")
    t = np.asarray(t, dtype=float)
    if np.any(t > min(index_spec.maturity, factor_spec.maturity) + 1e-12):
        raise ExpiredContract("strategy evaluated past a contract maturity")
    Y = _state(state)[..., 1]
    tau = np.maximum(factor_spec.maturity - t, 0.0)
    u1 = np.broadcast_to(np.asarray(beta, dtype=float), np.shape(Y)).copy()
    u2 = eta + eta * model["theta"] / Y * np.expm1(model["kappa"] * tau)
    return u1[()], u2[()]


def strategy_csqr_two_futures(
    t, state, specs: Tuple[DerivativeSpec, DerivativeSpec], model: ModelSpec, beta: float, eta: float
):
    """(u1, u2) in two index futures with maturities T1 < T2 under csqr"""
    first, second = specs
    T1, T2 = first.maturity, second.maturity
    if T1 >= T2:
        raise DegenerateMaturities(f"two-futures strategy needs T1 < T2, got T1={T1:g}, T2={T2:g}")
    t = np.asarray(t, dtype=float)
    if np.any(t > T1 + 1e-12):
        raise ExpiredContract(f"front contract expired at {T1:g}")

    m = _state(state)
    S, Y = m[..., 0], m[..., 1]
    f1 = np.asarray(price_futures(model, t, m, first))
    f2 = np.asarray(price_futures(model, t, m, second))
    gamma, kappa = model["gamma"], model["kappa"]
    tau1, tau2, gap = T1 - t, T2 - t, T2 - T1

    if abs(gamma - kappa) < EQUAL_SPEED_TOL * max(gamma, kappa):
        u1 = beta * f1 / S * np.exp(gamma * tau1) * tau2 / gap - eta * f1 / Y * np.exp(gamma * tau1) / (gamma * gap)
        u2 = -beta * f2 / S * np.exp(gamma * tau2) * tau1 / gap + eta * f2 / Y * np.exp(gamma * tau2) / (gamma * gap)
    else:
        lean = 1.0 - kappa / gamma
        den1 = np.exp(gamma * gap) - np.exp(kappa * gap)
        den2 = np.exp(-kappa * gap) - np.exp(-gamma * gap)
        u1 = (beta * f1 / S * (np.exp(gamma * tau2) - np.exp(kappa * tau2)) - eta * f1 / Y * lean * np.exp(kappa * tau2)) / den1
        u2 = (-beta * f2 / S * (np.exp(gamma * tau1) - np.exp(kappa * tau1)) + eta * f2 / Y * lean * np.exp(kappa * tau1)) / den2
    return u1[()], u2[()]


def closed_form_weights(
    model: ModelSpec, t, state, instruments: Sequence[DerivativeSpec], target: ExposureTarget
) -> np.ndarray:
    """Wealth fractions (..., N) from the explicit strategy for this model/instrument set"""
    kinds = tuple(spec.kind for spec in instruments)
    beta = target.beta
    eta = target.etas[0] if target.etas else 0.0
    m = _state(state)
    S = m[..., 0]

    if model.kind == ModelKind.BS and kinds == (InstrumentKind.CALL,):
        spec = instruments[0]
        c = np.asarray(price(model, t, m, spec))
        d_plus = bs_d_plus(spec.maturity - np.asarray(t, dtype=float), S, spec.strike, model.r, model["sigma"])
        return (beta * c / (S * norm_cdf(d_plus)))[..., None]
    if model.kind == ModelKind.BS and kinds == (InstrumentKind.FUTURES_INDEX,):
        return np.full(S.shape + (1,), float(beta))
    if model.kind == ModelKind.CIR and kinds == (InstrumentKind.FUTURES_INDEX,):
        return np.asarray(strategy_cir_futures(t, S, instruments[0], model, beta))[..., None]
    if model.kind == ModelKind.HESTON and sorted(k.value for k in kinds) == ["futures_factor", "futures_index"]:
        flip = kinds[0] == InstrumentKind.FUTURES_FACTOR
        specs = tuple(reversed(instruments)) if flip else tuple(instruments)
        u1, u2 = (np.asarray(u) for u in strategy_heston_index_vol_futures(t, m, specs, model, beta, eta))
        pair = (u2, u1) if flip else (u1, u2)
        return np.stack(pair, axis=-1)
    if model.kind == ModelKind.CSQR and kinds == (InstrumentKind.FUTURES_INDEX, InstrumentKind.FUTURES_INDEX):
        u1, u2 = (np.asarray(u) for u in strategy_csqr_two_futures(t, m, tuple(instruments), model, beta, eta))
        return np.stack((u1, u2), axis=-1)

    raise UnsupportedPair(
        f"no closed-form strategy for {model.kind.value} with {', '.join(k.value for k in kinds)}"
    )
