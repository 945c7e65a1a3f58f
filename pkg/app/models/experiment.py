"""
Experiment config schema. Configs are TOML files with the blocks

    [model]            kind, r, model parameters, s0, y0, mpr, strict
    [grid]             t0, T and one of dt / n_steps
    [target]           beta, etas, alpha (optional), betas (sweep, optional)
    [[instruments]]    kind, maturity, strike (calls), leg (factor futures)
    [run]              paths, seed, x0, method, rebalance_every, measure
    [calibration]      quotes (CSV path, relative to the config), s_now
    [vxx]              cycle, v0, beta, contract
"""

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from ..errors import ConfigError, IoError
from .domain import DerivativeSpec, ExposureTarget, InstrumentKind, TimeGrid


class ModelBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str
    r: float = 0.0
    sigma: Optional[float] = None
    kappa: Optional[float] = None
    theta: Optional[float] = None
    nu: Optional[float] = None
    rho: Optional[float] = None
    gamma: Optional[float] = None
    s0: Optional[float] = None
    y0: Optional[float] = None
    mpr: Optional[List[float]] = None
    strict: Optional[bool] = None

    @field_validator("kind")
    @classmethod
    def normalize_kind(cls, v: str) -> str:
        return v.strip().lower()


class GridBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t0: float = 0.0
    T: float
    dt: Optional[float] = None
    n_steps: Optional[int] = None

    def to_grid(self, default_dt: float) -> TimeGrid:
        if self.n_steps is not None:
            return TimeGrid(self.t0, self.T, self.n_steps)
        dt = self.dt if self.dt is not None else default_dt
        if not dt > 0:
            raise ConfigError(f"grid dt must be > 0, got {dt}")
        return TimeGrid(self.t0, self.T, max(1, int(round((self.T - self.t0) / dt))))


class TargetBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    beta: float = 1.0
    etas: List[float] = []
    alpha: Optional[float] = None
    betas: Optional[List[float]] = None

    def targets(self) -> List[ExposureTarget]:
        betas = self.betas if self.betas else [self.beta]
        return [ExposureTarget(beta=b, etas=tuple(self.etas), alpha=self.alpha) for b in betas]


class InstrumentBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str
    maturity: float
    strike: Optional[float] = None
    leg: int = 0

    @field_validator("kind")
    @classmethod
    def known_kind(cls, v: str) -> str:
        v = v.strip().lower()
        if v not in {k.value for k in InstrumentKind}:
            raise ValueError(f"unknown instrument kind {v!r}")
        return v

    def to_spec(self) -> DerivativeSpec:
        return DerivativeSpec(InstrumentKind(self.kind), self.maturity, self.strike, self.leg)


class RunBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int
    paths: int = 1
    x0: float = 100.0
    method: str = "solve"
    rebalance_every: int = 1
    measure: str = "Q"
    workers: Optional[int] = None

    @field_validator("method")
    @classmethod
    def known_method(cls, v: str) -> str:
        if v not in ("solve", "closed_form"):
            raise ValueError("method must be 'solve' or 'closed_form'")
        return v

    @field_validator("measure")
    @classmethod
    def known_measure(cls, v: str) -> str:
        if v not in ("Q", "P"):
            raise ValueError("measure must be 'Q' or 'P'")
        return v


class CalibrationBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    s_now: float
    quotes: Optional[str] = None
    maturities: Optional[List[float]] = None
    prices: Optional[List[float]] = None


class VxxBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cycle: float = 1.0 / 12.0
    v0: float = 100.0
    beta: float = 1.0
    contract: str = "front"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelBlock
    run: RunBlock
    grid: Optional[GridBlock] = None
    target: TargetBlock = TargetBlock()
    instruments: List[InstrumentBlock] = []
    calibration: Optional[CalibrationBlock] = None
    vxx: Optional[VxxBlock] = None
    provenance: str = "user config"
    base_dir: Optional[str] = None

    def specs(self) -> List[DerivativeSpec]:
        return [block.to_spec() for block in self.instruments]

    def resolve(self, relative: str) -> Path:
        path = Path(relative)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return path


def parse_experiment(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid experiment config: {exc}")


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}")
    data.setdefault("base_dir", str(path.parent))
    return parse_experiment(data)
