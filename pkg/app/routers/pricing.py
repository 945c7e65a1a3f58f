from fastapi import APIRouter
from pydantic import BaseModel, Field
from typing import Optional, List, Dict, Any
import logging

import numpy as np

from ..models.domain import FuturesQuote, StateVector
from ..models.experiment import InstrumentBlock, ModelBlock
from ..services.diffusion import build_model
from ..services.exposure import elasticities, null_residual
from ..services.pricing import calibrate_cir, cir_term_structure, gradient, greeks_fd, price

logger = logging.getLogger(__name__)
router = APIRouter()


class PriceRequest(BaseModel):
    model: ModelBlock
    instrument: InstrumentBlock
    t: float = 0.0
    state: Optional[List[float]] = None  # (S, Y1..Yd); the model's initial state when omitted


class GreeksRequest(PriceRequest):
    bump: float = 1e-4


class QuoteIn(BaseModel):
    maturity: float
    price: float


class CalibrateRequest(BaseModel):
    s_now: float
    quotes: List[QuoteIn] = Field(..., min_length=2)


def _resolve(req: PriceRequest):
    model = build_model(req.model)
    state = StateVector.for_model(model, req.t, req.state).m
    return model, req.instrument.to_spec(), state


@router.post("/pricing/price")
async def price_instrument(req: PriceRequest):
    """Model price and state gradient of one derivative"""
    model, spec, state = _resolve(req)
    value = float(price(model, req.t, state, spec))
    grad = gradient(model, req.t, state, spec)
    return {
        "instrument": spec.label,
        "model": model.kind.value,
        "t": req.t,
        "state": state.tolist(),
        "price": value,
        "gradient": np.asarray(grad).tolist(),
    }


@router.post("/pricing/elasticities")
async def instrument_elasticities(req: PriceRequest):
    model, spec, state = _resolve(req)
    row = elasticities(model, req.t, state, spec)
    return {
        "instrument": spec.label,
        "drift_coeff": float(row.drift_coeff),
        "excess_drift": float(row.excess_drift(model.r)),
        "index_elasticity": float(row.index_elasticity),
        "factor_elasticities": np.asarray(row.factor_elasticities).tolist(),
        "null_residual": float(null_residual(model, state, row)),
    }


@router.post("/pricing/greeks")
async def finite_difference_greeks(req: GreeksRequest):
    """Central-difference gradient next to the analytic one"""
    model, spec, state = _resolve(req)
    fd = greeks_fd(model, req.t, state, spec, req.bump)
    exact = gradient(model, req.t, state, spec)
    return {
        "instrument": spec.label,
        "bump": req.bump,
        "gradient_fd": np.asarray(fd).tolist(),
        "gradient": np.asarray(exact).tolist(),
        "max_abs_gap": float(np.max(np.abs(np.asarray(fd) - np.asarray(exact)))),
    }


@router.post("/pricing/calibrate")
async def calibrate(req: CalibrateRequest) -> Dict[str, Any]:
    """Fit CIR (kappa, theta) to a futures term structure"""
    quotes = [FuturesQuote(q.maturity, q.price) for q in req.quotes]
    fit = calibrate_cir(quotes, req.s_now)
    maturities = [q.maturity for q in quotes]
    if fit.kappa is not None:
        fitted = cir_term_structure(fit.kappa, fit.theta, fit.s_now, maturities).tolist()
    else:
        fitted = [fit.theta] * len(maturities)
    return {**fit.to_dict(), "maturities": maturities, "fitted": fitted}
