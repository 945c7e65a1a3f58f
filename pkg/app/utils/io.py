"""CSV and manifest writers. All output goes through pandas/json with fixed ordering so reruns are byte-identical."""

import json
import logging
from pathlib import Path
from typing import Any, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import IoError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Series = Union[pd.Series, Tuple[Sequence[float], Sequence[float]]]


def ensure_dir(path: PathLike) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {path}: {exc}")
    return path


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def plotdata_frame(series: Mapping[str, Series]) -> pd.DataFrame:
    parts = []
    for name, data in series.items():
        if isinstance(data, pd.Series):
            t, values = data.index.to_numpy(dtype=float), data.to_numpy(dtype=float)
        else:
            t, values = (np.asarray(x, dtype=float) for x in data)
        parts.append(pd.DataFrame({"series": name, "t": t, "value": values}))
    if not parts:
        return pd.DataFrame({"series": [], "t": [], "value": []})
    return pd.concat(parts, ignore_index=True)


def emit_plotdata(series: Mapping[str, Series], path: PathLike) -> Path:
    """Long-format plot data ``series,t,value``; an empty map gives a header-only file"""
    return write_frame(plotdata_frame(series), path)


def write_manifest(path: PathLike, payload: Mapping[str, Any]) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=_jsonable) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest {path}: {exc}")
    return path


def _jsonable(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")
