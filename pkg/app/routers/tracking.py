from fastapi import APIRouter
from pydantic import BaseModel, Field, field_validator
from typing import Optional, List
import logging

import numpy as np

from ..config import get_settings
from ..errors import ConfigError
from ..models.domain import ExposureTarget, ModelKind, RollCalendar, StateVector
from ..models.experiment import GridBlock, InstrumentBlock, ModelBlock
from ..services.diffusion import build_model
from ..services.exposure import closed_form_weights, elasticities, solve_weights, tracking_drift
from ..services.portfolio import bs_nonnegative_slippage_interval, generic_slippage, model_slippage
from ..services.simulate import simulate_batch
from ..services.vxx import implied_exposure, vxx_weights

logger = logging.getLogger(__name__)
router = APIRouter()
settings = get_settings()

# Sample paths come back inline; larger runs belong to the CLI
MAX_API_POINTS = 200_000


class TargetIn(BaseModel):
    beta: float
    etas: List[float] = []
    alpha: Optional[float] = None

    def to_target(self) -> ExposureTarget:
        return ExposureTarget(self.beta, tuple(self.etas), self.alpha)


class DriftRequest(BaseModel):
    model: ModelBlock
    state: Optional[List[float]] = None
    beta: float
    etas: List[float] = []


class WeightsRequest(BaseModel):
    model: ModelBlock
    t: float = 0.0
    state: Optional[List[float]] = None
    instruments: List[InstrumentBlock] = Field(..., min_length=1)
    target: TargetIn
    method: str = "solve"

    @field_validator("method")
    @classmethod
    def known_method(cls, v: str) -> str:
        if v not in ("solve", "closed_form"):
            raise ValueError("method must be 'solve' or 'closed_form'")
        return v


class VxxRequest(BaseModel):
    model: ModelBlock
    t: float
    S: float
    cycle: float = 1.0 / 12.0
    n_cycles: int = Field(6, ge=2)


class SimulateRequest(BaseModel):
    model: ModelBlock
    grid: GridBlock
    paths: int = Field(1, ge=1)
    seed: int
    measure: str = "Q"

    @field_validator("measure")
    @classmethod
    def known_measure(cls, v: str) -> str:
        if v not in ("Q", "P"):
            raise ValueError("measure must be 'Q' or 'P'")
        return v


def _state(model, state: Optional[List[float]], t: float = 0.0) -> np.ndarray:
    return StateVector.for_model(model, t, state).m


@router.post("/tracking/drift")
async def required_drift(req: DriftRequest):
    """Drift a portfolio with exposures (beta, etas) must carry to be arbitrage free"""
    model = build_model(req.model)
    state = _state(model, req.state)
    return {"alpha": float(tracking_drift(model, state, req.beta, req.etas)), "state": state.tolist()}


@router.post("/tracking/weights")
async def portfolio_weights(req: WeightsRequest):
    """Wealth fractions reaching the target exposures with the given instruments"""
    model = build_model(req.model)
    state = _state(model, req.state, req.t)
    specs = [block.to_spec() for block in req.instruments]
    target = req.target.to_target()
    rows = [elasticities(model, req.t, state, spec) for spec in specs]
    solution = solve_weights(rows, target, model, state)

    weights = solution.weights
    if req.method == "closed_form":
        weights = closed_form_weights(model, req.t, state, specs, target)
    return {
        "instruments": [spec.label for spec in specs],
        "weights": np.asarray(weights).tolist(),
        "alpha": float(solution.alpha),
        "drift_residual": float(solution.drift_residual),
        "exposure_residual": float(solution.exposure_residual),
        "condition_number": float(solution.cond),
        "method": req.method,
    }


@router.post("/tracking/slippage")
async def slippage_rate(req: DriftRequest):
    """Instantaneous log-excess rate of the tracker over its benchmark"""
    model = build_model(req.model)
    state = _state(model, req.state)
    result = {
        "slippage": float(generic_slippage(model, state, req.beta, req.etas)),
        "slippage_closed_form": float(model_slippage(model, state, req.beta, req.etas)),
    }
    if model.kind == ModelKind.BS:
        low, high = bs_nonnegative_slippage_interval(model.r, model["sigma"])
        result["nonnegative_beta_interval"] = [low, high]
    return result


@router.post("/tracking/vxx/implied")
async def vxx_implied_exposure(req: VxxRequest):
    model = build_model(req.model)
    if model.kind != ModelKind.CIR:
        raise ConfigError("the roll strategy is defined under the cir model")
    calendar = RollCalendar(tuple(i * req.cycle for i in range(1, req.n_cycles + 1)))
    alpha, beta = implied_exposure(req.t, req.S, calendar, model)
    front, nxt = vxx_weights(req.t, calendar)
    return {
        "cycle": calendar.cycle_index(req.t),
        "front_weight": float(front),
        "next_weight": float(nxt),
        "alpha_V": float(alpha),
        "beta_V": float(beta),
    }


@router.post("/tracking/simulate")
async def simulate(req: SimulateRequest):
    model = build_model(req.model)
    grid = req.grid.to_grid(settings.figure_dt)
    points = req.paths * (grid.n_steps + 1)
    if points > MAX_API_POINTS:
        raise ConfigError(f"{points} path points requested, the API returns at most {MAX_API_POINTS}")
    batch = simulate_batch(model, grid, req.paths, req.seed, req.measure)
    return {
        "times": batch.times.tolist(),
        "paths": batch.m.tolist(),
        "truncations": batch.truncations.tolist(),
        "seed": req.seed,
    }
