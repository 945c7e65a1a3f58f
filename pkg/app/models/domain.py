import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import InvalidHorizon, MissingParameter, NonPositiveParameter, OutOfCalendar


class ModelKind(enum.Enum):
    BS = "bs"
    HESTON = "heston"
    CIR = "cir"
    CSQR = "csqr"


class InstrumentKind(enum.Enum):
    FUTURES_INDEX = "futures_index"
    FUTURES_FACTOR = "futures_factor"
    CALL = "call"


class Measure(enum.Enum):
    Q = "Q"
    P = "P"


# Number of exogenous factors per model
FACTOR_COUNT = {
    ModelKind.BS: 0,
    ModelKind.HESTON: 1,
    ModelKind.CIR: 0,
    ModelKind.CSQR: 1,
}

REQUIRED_PARAMS = {
    ModelKind.BS: ("sigma",),
    ModelKind.HESTON: ("kappa", "theta", "nu", "rho"),
    ModelKind.CIR: ("kappa", "theta", "sigma"),
    ModelKind.CSQR: ("gamma", "kappa", "theta", "sigma", "nu", "rho"),
}


@dataclass(frozen=True)
class ModelSpec:
    """
    One of the four diffusion models written in the common multi-factor form
    dM = drift(M) dt + vol(M) dB with M = (S, Y1..Yd).

    Immutable once built; build through diffusion.build_model.
    """

    kind: ModelKind
    r: float
    params: Mapping[str, float]
    d: int
    m0: Tuple[float, ...]
    mpr: Optional[Tuple[float, ...]] = None
    feller: Optional[bool] = None
    strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    @property
    def dim(self) -> int:
        return self.d + 1

    def describe(self) -> dict:
        return {
            "kind": self.kind.value,
            "r": self.r,
            "params": dict(self.params),
            "d": self.d,
            "m0": list(self.m0),
            "mpr": list(self.mpr) if self.mpr is not None else None,
            "feller": self.feller,
        }


@dataclass(frozen=True)
class StateVector:
    t: float
    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.ndim != 1:
            raise NonPositiveParameter("state must be a flat vector (S, Y1..Yd)")
        if not np.all(m > 0):
            raise NonPositiveParameter(f"state entries must be strictly positive, got {m.tolist()}")
        object.__setattr__(self, "m", m)

    @classmethod
    def for_model(cls, model: "ModelSpec", t: float, m=None) -> "StateVector":
        """State of ``model`` at t, its initial state when m is omitted"""
        state = cls(t, model.m0 if m is None else m)
        if state.m.size != model.dim:
            raise MissingParameter(f"{model.kind.value} state has {model.dim} entries (S, Y1..Yd), got {state.m.size}")
        return state

    @property
    def S(self) -> float:
        return float(self.m[0])


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not (self.T > self.t0):
            raise InvalidHorizon(f"horizon end {self.T} must exceed start {self.t0}")
        if self.n_steps < 1:
            raise InvalidHorizon(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.n_steps * factor)


@dataclass
class SamplePath:
    grid: TimeGrid
    m: np.ndarray  # (n_steps + 1, d + 1)
    dW: np.ndarray  # (n_steps, d + 1)
    seed: int
    path_index: int = 0
    truncations: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def states(self) -> List[StateVector]:
        return [StateVector(float(t), row) for t, row in zip(self.times, self.m)]

    @property
    def positive(self) -> bool:
        return bool(np.all(self.m > 0))

    def as_batch(self) -> "PathBatch":
        return PathBatch(
            grid=self.grid,
            m=self.m[None, ...],
            dW=self.dW[None, ...],
            seed=self.seed,
            path_ids=np.array([self.path_index]),
            truncations=np.array([self.truncations]),
        )


@dataclass
class PathBatch:
    """Many sample paths on one grid, stacked along the leading axis"""

    grid: TimeGrid
    m: np.ndarray  # (P, n_steps + 1, d + 1)
    dW: np.ndarray  # (P, n_steps, d + 1)
    seed: int
    path_ids: np.ndarray
    truncations: np.ndarray

    def __len__(self) -> int:
        return self.m.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def path(self, i: int) -> SamplePath:
        return SamplePath(
            grid=self.grid,
            m=self.m[i],
            dW=self.dW[i],
            seed=self.seed,
            path_index=int(self.path_ids[i]),
            truncations=int(self.truncations[i]),
        )

    def paths(self) -> Iterator[SamplePath]:
        for i in range(len(self)):
            yield self.path(i)

    @classmethod
    def from_paths(cls, paths: Sequence[SamplePath]) -> "PathBatch":
        if not paths:
            raise MissingParameter("cannot build a batch from zero paths")
        return cls(
            grid=paths[0].grid,
            m=np.stack([p.m for p in paths]),
            dW=np.stack([p.dW for p in paths]),
            seed=paths[0].seed,
            path_ids=np.array([p.path_index for p in paths]),
            truncations=np.array([p.truncations for p in paths]),
        )


@dataclass(frozen=True)
class DerivativeSpec:
    kind: InstrumentKind
    maturity: float
    strike: Optional[float] = None
    leg: int = 0

    def __post_init__(self):
        if self.kind == InstrumentKind.CALL:
            if self.strike is None:
                raise MissingParameter("call contracts need a strike")
            if not self.strike > 0:
                raise NonPositiveParameter(f"strike must be > 0, got {self.strike}")
        if self.kind == InstrumentKind.FUTURES_FACTOR and self.leg == 0:
            object.__setattr__(self, "leg", 1)
        if self.kind != InstrumentKind.FUTURES_FACTOR and self.leg != 0:
            raise MissingParameter(f"{self.kind.value} is written on the index leg only")

    @property
    def is_futures(self) -> bool:
        return self.kind != InstrumentKind.CALL

    @property
    def label(self) -> str:
        if self.kind == InstrumentKind.CALL:
            return f"call_K{self.strike:g}_T{self.maturity:g}"
        if self.kind == InstrumentKind.FUTURES_FACTOR:
            return f"futures_Y{self.leg}_T{self.maturity:g}"
        return f"futures_T{self.maturity:g}"


@dataclass(frozen=True)
class FuturesQuote:
    maturity: float
    price: float

    def __post_init__(self):
        if not self.price > 0:
            raise NonPositiveParameter(f"quote price must be > 0, got {self.price}")
        if not self.maturity > 0:
            raise NonPositiveParameter(f"quote maturity must be > 0, got {self.maturity}")


@dataclass
class ElasticityRow:
    """
    Return decomposition of one instrument:
    dc/c = drift_coeff dt + index_elasticity dS/S + sum_i factor_elasticities[i] dY_i/Y_i.

    drift_coeff is C for priced derivatives and F for futures. Fields may
    carry a leading batch shape. r is the short rate the row was priced at.
    """

    drift_coeff: np.ndarray
    index_elasticity: np.ndarray
    factor_elasticities: np.ndarray  # (..., d)
    is_futures: bool
    r: float = 0.0

    def excess_drift(self, r: Optional[float] = None) -> np.ndarray:
        if self.is_futures:
            return self.drift_coeff
        return self.drift_coeff - (self.r if r is None else r)

    @property
    def exposures(self) -> np.ndarray:
        """(..., d + 1): index elasticity followed by factor elasticities"""
        return np.concatenate(
            [np.asarray(self.index_elasticity)[..., None], np.asarray(self.factor_elasticities)],
            axis=-1,
        )


@dataclass(frozen=True)
class ExposureTarget:
    beta: float
    etas: Tuple[float, ...] = ()
    alpha: Optional[float] = None

    @property
    def exposures(self) -> np.ndarray:
        return np.array([self.beta, *self.etas], dtype=float)


@dataclass
class BenchmarkPath:
    values: np.ndarray
    beta: float
    etas: Tuple[float, ...] = ()


@dataclass
class PortfolioPath:
    grid: TimeGrid
    values: np.ndarray  # (n_steps + 1,)
    weights: np.ndarray  # (n_steps + 1, N) wealth fractions
    units: np.ndarray  # (n_steps + 1, N) contracts held over [t_k, t_k+1)
    prices: np.ndarray  # (n_steps + 1, N)
    slippage: np.ndarray  # (n_steps + 1,)
    integrated_slippage: np.ndarray  # (n_steps + 1,)
    labels: Tuple[str, ...]
    futures_mask: Tuple[bool, ...]
    r: float
    path_index: int = 0
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class RollCalendar:
    """Futures maturities T1 < T2 < ... with the convention T0 = 0"""

    maturities: Tuple[float, ...]

    def __post_init__(self):
        mats = tuple(float(x) for x in self.maturities)
        if not mats:
            raise OutOfCalendar("calendar needs at least one maturity")
        if mats[0] <= 0 or any(b <= a for a, b in zip(mats, mats[1:])):
            raise OutOfCalendar(f"maturities must be positive and strictly increasing, got {mats}")
        object.__setattr__(self, "maturities", mats)

    @classmethod
    def monthly(cls, n_cycles: int) -> "RollCalendar":
        return cls(tuple(i / 12.0 for i in range(1, n_cycles + 1)))

    @classmethod
    def covering(cls, horizon: float, cycle: float = 1.0 / 12.0) -> "RollCalendar":
        """Equal cycles reaching one contract past the horizon"""
        n = int(math.ceil(horizon / cycle - 1e-12)) + 1
        return cls(tuple(i * cycle for i in range(1, n + 1)))

    def cycle_index(self, t: float) -> int:
        """
        1-based i with T_{i-1} < t <= T_i; t = 0 belongs to the first cycle.
        """
        if t < 0 or t > self.maturities[-1]:
            raise OutOfCalendar(f"t={t} outside calendar (0, {self.maturities[-1]}]")
        i = int(np.searchsorted(self.maturities, t, side="left"))
        return i + 1

    def bounds(self, i: int) -> Tuple[float, float]:
        lower = 0.0 if i == 1 else self.maturities[i - 2]
        return lower, self.maturities[i - 1]
