"""
Seeded Monte Carlo paths of M = (S, Y1..Yd) on a uniform grid.

Index legs with multiplicative volatility (bs, heston) step in logs, which is
exact for bs. Square-root legs use Euler with full truncation: the state fed
to the drift and diffusion coefficients is floored at zero while the raw
state is carried forward. Every path owns the generator
``np.random.default_rng([seed, path_index])`` so output never depends on how
paths are split across workers.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..config import get_settings
from ..errors import InvalidHorizon
from ..models.domain import Measure, ModelKind, ModelSpec, PathBatch, SamplePath, TimeGrid
from .diffusion import drift_vol

logger = logging.getLogger(__name__)

# Legs stepped in logs, per model
_LOG_LEGS = {
    ModelKind.BS: (0,),
    ModelKind.HESTON: (0,),
    ModelKind.CIR: (),
    ModelKind.CSQR: (),
}


def make_grid(t0: float, T: float, n_steps: int) -> TimeGrid:
    return TimeGrid(float(t0), float(T), int(n_steps))


def grid_from_dt(t0: float, T: float, dt: float) -> TimeGrid:
    """Uniform grid whose step is the closest to ``dt`` that divides [t0, T]"""
    if not dt > 0:
        raise InvalidHorizon(f"dt must be > 0, got {dt}")
    n_steps = max(1, int(round((T - t0) / dt)))
    return make_grid(t0, T, n_steps)


def draw_increments(grid: TimeGrid, dim: int, seed: int, path_ids: Sequence[int]) -> np.ndarray:
    """Brownian increments (P, n_steps, dim), each N(0, dt), one stream per path id"""
    sd = np.sqrt(grid.dt)
    out = np.empty((len(path_ids), grid.n_steps, dim))
    for row, pid in enumerate(path_ids):
        rng = np.random.default_rng([int(seed), int(pid)])
        out[row] = rng.standard_normal((grid.n_steps, dim)) * sd
    return out


def _euler(
    model: ModelSpec,
    grid: TimeGrid,
    dW: np.ndarray,
    measure: Measure,
    m0: Optional[Sequence[float]] = None,
):
    n_paths = dW.shape[0]
    k = model.dim
    dt = grid.dt
    log_legs = np.zeros(k, dtype=bool)
    log_legs[list(_LOG_LEGS[model.kind])] = True

    m = np.empty((n_paths, grid.n_steps + 1, k))
    m[:, 0, :] = np.asarray(m0 if m0 is not None else model.m0, dtype=float)
    truncations = np.zeros(n_paths, dtype=int)

    for step in range(grid.n_steps):
        current = m[:, step, :]
        clamped = np.maximum(current, 0.0)
        drift, vol = drift_vol(model, clamped, measure)
        noise = np.einsum("pij,pj->pi", vol, dW[:, step, :])
        nxt = current + drift * dt + noise

        if log_legs.any():
            level = current[:, log_legs]
            mu = drift[:, log_legs] / level
            rel = vol[:, log_legs, :] / level[..., None]
            log_noise = np.einsum("pij,pj->pi", rel, dW[:, step, :])
            nxt[:, log_legs] = level * np.exp((mu - 0.5 * np.sum(rel**2, axis=-1)) * dt + log_noise)

        truncations += np.any(nxt[:, ~log_legs] <= 0.0, axis=-1)
        m[:, step + 1, :] = nxt

    return m, truncations


def simulate_from_increments(
    model: ModelSpec,
    grid: TimeGrid,
    dW: np.ndarray,
    seed: int = 0,
    path_ids: Optional[Sequence[int]] = None,
    measure: Union[Measure, str] = Measure.Q,
    m0: Optional[Sequence[float]] = None,
) -> PathBatch:
    """Drive the scheme with supplied increments, shaped (P, n_steps, d+1) or (n_steps, d+1)"""
    dW = np.asarray(dW, dtype=float)
    if dW.ndim == 2:
        dW = dW[None, ...]
    if dW.shape[1:] != (grid.n_steps, model.dim):
        raise InvalidHorizon(
            f"increments shaped {dW.shape[1:]} do not match grid/model ({grid.n_steps}, {model.dim})"
        )
    m, truncations = _euler(model, grid, dW, Measure(measure), m0)
    ids = np.arange(dW.shape[0]) if path_ids is None else np.asarray(path_ids)
    return PathBatch(grid=grid, m=m, dW=dW, seed=seed, path_ids=ids, truncations=truncations)


def simulate_batch(
    model: ModelSpec,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    measure: Union[Measure, str] = Measure.Q,
    workers: Optional[int] = None,
    m0: Optional[Sequence[float]] = None,
) -> PathBatch:
    if n_paths < 1:
        raise InvalidHorizon(f"n_paths must be >= 1, got {n_paths}")
    workers = workers or get_settings().workers
    ids = np.arange(n_paths)

    def run(chunk: np.ndarray) -> PathBatch:
        dW = draw_increments(grid, model.dim, seed, chunk)
        return simulate_from_increments(model, grid, dW, seed, chunk, measure, m0)

    if workers <= 1 or n_paths < 2 * workers:
        batch = run(ids)
    else:
        chunks = np.array_split(ids, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
        batch = PathBatch(
            grid=grid,
            m=np.concatenate([p.m for p in parts]),
            dW=np.concatenate([p.dW for p in parts]),
            seed=seed,
            path_ids=ids,
            truncations=np.concatenate([p.truncations for p in parts]),
        )

    total = int(batch.truncations.sum())
    logger.info(f"Simulated {n_paths} {model.kind.value} paths over {grid.n_steps} steps (seed={seed})")
    if total:
        rate = total / (n_paths * grid.n_steps)
        logger.warning(f"{total} truncation events ({rate:.2e} per step) in {model.kind.value} simulation")
    return batch


def simulate_paths(
    model: ModelSpec,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    measure: Union[Measure, str] = Measure.Q,
    workers: Optional[int] = None,
) -> List[SamplePath]:
    return list(simulate_batch(model, grid, n_paths, seed, measure, workers).paths())


def coarsen_increments(dW: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` increments: the same Brownian path on a coarser grid"""
    dW = np.asarray(dW, dtype=float)
    n = dW.shape[-2]
    if factor < 1 or n % factor:
        raise InvalidHorizon(f"cannot coarsen {n} steps by a factor of {factor}")
    shape = dW.shape[:-2] + (n // factor, factor, dW.shape[-1])
    return dW.reshape(shape).sum(axis=-2)


def paths_frame(batch: PathBatch) -> pd.DataFrame:
    """Long format: path_id, t, S, Y1..Yd"""
    n_paths, n_points, k = batch.m.shape
    columns = ["S"] + [f"Y{i}" for i in range(1, k)]
    frame = pd.DataFrame(batch.m.reshape(n_paths * n_points, k), columns=columns)
    frame.insert(0, "t", np.tile(batch.times, n_paths))
    frame.insert(0, "path_id", np.repeat(batch.path_ids, n_points))
    return frame
