"""
Experiment runner.

    python launch.py simulate  [--config FILE] [--out DIR] [--paths N] [--seed N] [--dt X]
    python launch.py track     ...   constant-exposure portfolios vs benchmark
    python launch.py vxx       ...   roll strategy vs rolling tracker under CIR
    python launch.py calibrate ...   CIR term-structure fit
    python launch.py verify    ...   invariant suite
    python launch.py serve     [--host H] [--port P]

Exit codes: 0 success, 2 bad configuration, 3 numerical failure.
"""

import argparse
import copy
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .config import get_settings
from .errors import ConfigError, NumericalError, TrackingError
from .models import presets
from .models.domain import ExposureTarget, FuturesQuote, ModelKind, RollCalendar
from .models.experiment import ExperimentConfig, InstrumentBlock, VxxBlock, load_experiment, parse_experiment
from .services.diffusion import build_model
from .services.exposure import strategy_bs_call, strategy_bs_futures
from .services.portfolio import (
    benchmark_series,
    evolve_portfolios,
    model_slippage,
    portfolio_frame,
    summarize,
    summary_frame,
)
from .services.pricing import calibrate_cir, cir_term_structure, load_quotes
from .services.simulate import paths_frame, simulate_batch
from .services.verification import run_checks
from .services.vxx import local_beta_regression, return_slope, run_vxx, vxx_frame, vxx_weights
from .utils.io import emit_plotdata, ensure_dir, write_frame, write_manifest

logger = logging.getLogger(__name__)

SUBCOMMAND_PRESETS = {
    "simulate": presets.SIMULATE,
    "track": presets.BS_TRACKING,
    "vxx": presets.CIR_VXX,
    "calibrate": presets.CIR_CALIBRATION,
    "verify": presets.VERIFY,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trackwise", description="Index tracking and exposure control experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMAND_PRESETS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML experiment config; built-in defaults when omitted")
        p.add_argument("--out", help="output directory (default: <OUTPUT_DIR>/<subcommand>)")
        p.add_argument("--paths", type=int, help="number of Monte Carlo paths")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--dt", type=float, help="time step in years")
    serve = sub.add_parser("serve", help="run the HTTP API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        config = load_experiment(args.config)
    else:
        config = parse_experiment(copy.deepcopy(SUBCOMMAND_PRESETS[args.command]))
    if args.paths is not None:
        config.run.paths = args.paths
    if args.seed is not None:
        config.run.seed = args.seed
    if args.dt is not None:
        if config.grid is None:
            raise ConfigError(f"--dt given but the {args.command} config has no [grid] block")
        config.grid.dt = args.dt
        config.grid.n_steps = None
    return config


def _grid(config: ExperimentConfig, default_dt: float):
    if config.grid is None:
        raise ConfigError("this subcommand needs a [grid] block")
    return config.grid.to_grid(default_dt)


def _finish(out: Path, command: str, config: ExperimentConfig, outputs: List[Path], extra: Optional[Dict[str, Any]] = None):
    payload = {
        "subcommand": command,
        "provenance": config.provenance,
        "seed": config.run.seed,
        "config": config.model_dump(exclude={"base_dir"}),
        "outputs": sorted(p.name for p in outputs),
    }
    if extra:
        payload.update(extra)
    write_manifest(out / "manifest.json", payload)


def cmd_simulate(config: ExperimentConfig, out: Path) -> int:
    settings = get_settings()
    model = build_model(config.model)
    grid = _grid(config, settings.figure_dt)
    batch = simulate_batch(model, grid, config.run.paths, config.run.seed, config.run.measure, config.run.workers)
    outputs = [write_frame(paths_frame(batch), out / "paths.csv")]
    _finish(out, "simulate", config, outputs, {"truncations": int(batch.truncations.sum())})
    return 0


def _holdings(config: ExperimentConfig, model, batch, target: ExposureTarget) -> pd.DataFrame:
    times = batch.times
    S = batch.m[0, :, 0]
    frame = pd.DataFrame({"t": times, "S": S})
    x0, s0 = config.run.x0, float(batch.m[0, 0, 0])
    for block in presets.BS_HOLDINGS:
        spec = InstrumentBlock(**block).to_spec()
        live = times < spec.maturity if not spec.is_futures else times <= spec.maturity
        units = np.full(times.shape, np.nan)
        if spec.is_futures:
            units[live] = strategy_bs_futures(times[live], S[live], x0, s0, spec, model, target.beta)
        else:
            units[live] = strategy_bs_call(times[live], S[live], x0, s0, spec, model, target.beta)
        frame[spec.label] = units
    return frame


def cmd_track(config: ExperimentConfig, out: Path) -> int:
    settings = get_settings()
    model = build_model(config.model)
    grid = _grid(config, settings.figure_dt)
    instruments = config.specs()
    if not instruments:
        raise ConfigError("track needs at least one [[instruments]] entry")
    batch = simulate_batch(model, grid, config.run.paths, config.run.seed, config.run.measure, config.run.workers)

    outputs: List[Path] = []
    rows = []
    series: Dict[str, Any] = {}
    for target in config.target.targets():
        tag = f"beta{target.beta:g}"
        book = evolve_portfolios(
            batch, model, instruments, target, config.run.x0, config.run.method, config.run.rebalance_every
        )
        benchmarks = [benchmark_series(path, target.beta, target.etas, config.run.x0) for path in batch.paths()]
        row = {"beta": target.beta, **summarize(book, benchmarks)}
        if model.kind == ModelKind.BS:
            row["predicted_log_excess"] = float(model_slippage(model, model.m0, target.beta)) * grid.T
        rows.append(row)

        outputs.append(write_frame(portfolio_frame(book[0], benchmarks[0]), out / f"track_{tag}.csv"))
        series[f"portfolio_{tag}"] = (grid.times, book[0].values)
        series[f"benchmark_{tag}"] = (grid.times, benchmarks[0].values)
        if model.kind == ModelKind.BS:
            outputs.append(write_frame(_holdings(config, model, batch, target), out / f"holdings_{tag}.csv"))

    outputs.append(write_frame(summary_frame(rows), out / "summary.csv"))
    outputs.append(emit_plotdata(series, out / "plotdata.csv"))
    _finish(out, "track", config, outputs)
    return 0


def cmd_vxx(config: ExperimentConfig, out: Path) -> int:
    settings = get_settings()
    model = build_model(config.model)
    if model.kind != ModelKind.CIR:
        raise ConfigError("vxx runs under the cir model")
    grid = _grid(config, settings.figure_dt)
    vxx_block = config.vxx or VxxBlock()
    calendar = RollCalendar.covering(grid.T, vxx_block.cycle)
    batch = simulate_batch(model, grid, config.run.paths, config.run.seed, config.run.measure, config.run.workers)
    run = run_vxx(batch, model, calendar, vxx_block.v0, vxx_block.beta, vxx_block.contract)

    front, _ = vxx_weights(grid.times, calendar)
    weights = pd.DataFrame(
        {"t": grid.times, "vxx_front": front, "vxx_next": 1.0 - np.asarray(front), "dynamic": run.dynamic_weight[0]}
    )
    local = local_beta_regression(run.vix[0], run.vxx[0])
    per_path = pd.DataFrame(
        {
            "path_id": batch.path_ids,
            "qv_vix": np.asarray(run.qv_vix),
            "qv_vxx": np.asarray(run.qv_vxx),
            "average_beta_V": run.average_beta,
            "slope_vxx": np.asarray(return_slope(run.vix, run.vxx)),
            "slope_dynamic": np.asarray(return_slope(run.vix, run.dynamic)),
        }
    )
    local_frame = pd.DataFrame({"t": grid.times[:-1], "beta_V": run.beta[0, :-1], "beta_regression": local})
    outputs = [
        write_frame(vxx_frame(run), out / "vxx.csv"),
        write_frame(weights, out / "vxx_weights.csv"),
        write_frame(per_path, out / "vxx_summary.csv"),
        write_frame(local_frame, out / "vxx_local_beta.csv"),
        emit_plotdata(
            {
                "VIX": (grid.times, run.vix[0]),
                "VXX": (grid.times, run.vxx[0] * run.vix[0, 0] / vxx_block.v0),
                "dynamic": (grid.times, run.dynamic[0] * run.vix[0, 0] / vxx_block.v0),
            },
            out / "plotdata.csv",
        ),
    ]
    _finish(out, "vxx", config, outputs)
    return 0


def cmd_calibrate(config: ExperimentConfig, out: Path) -> int:
    block = config.calibration
    if block is None:
        raise ConfigError("calibrate needs a [calibration] block")
    if block.quotes:
        quotes = load_quotes(config.resolve(block.quotes))
    elif block.maturities and block.prices:
        quotes = [FuturesQuote(T, p) for T, p in zip(block.maturities, block.prices)]
    elif block.maturities:
        model = build_model(config.model)
        curve = cir_term_structure(model["kappa"], model["theta"], block.s_now, block.maturities)
        quotes = [FuturesQuote(T, p) for T, p in zip(block.maturities, curve)]
    else:
        raise ConfigError("[calibration] needs quotes, or maturities with optional prices")

    fit = calibrate_cir(quotes, block.s_now)
    maturities = np.array([q.maturity for q in quotes])
    fitted = (
        cir_term_structure(fit.kappa, fit.theta, fit.s_now, maturities)
        if fit.kappa is not None
        else np.full(maturities.shape, fit.theta)
    )
    curve = pd.DataFrame({"maturity_years": maturities, "price": [q.price for q in quotes], "fitted": fitted})
    outputs = [
        write_frame(pd.DataFrame([fit.to_dict()]), out / "calibration.csv"),
        write_frame(curve, out / "fitted_curve.csv"),
    ]
    for key, value in fit.to_dict().items():
        print(f"{key}={value}")
    _finish(out, "calibrate", config, outputs)
    return 0


def cmd_verify(config: ExperimentConfig, out: Path) -> int:
    settings = get_settings()
    dt = config.grid.dt if config.grid is not None and config.grid.dt else settings.default_dt
    frame = run_checks(config.run.seed, config.run.paths, dt)
    outputs = [write_frame(frame, out / "verify.csv")]
    for row in frame.itertuples(index=False):
        print(f"{row.check:32s} {row.value:.3e}  (threshold {row.threshold:.1e})  {'ok' if row.passed else 'FAIL'}")
    _finish(out, "verify", config, outputs, {"dt": dt})
    if not frame["passed"].all():
        raise NumericalError(f"{int((~frame['passed']).sum())} invariant checks failed")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "track": cmd_track,
    "vxx": cmd_vxx,
    "calibrate": cmd_calibrate,
    "verify": cmd_verify,
}


def serve(host: str, port: int) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=host, port=port)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return serve(args.host, args.port)

    try:
        config = resolve_config(args)
        out = ensure_dir(args.out or Path(settings.output_dir) / args.command)
        code = COMMANDS[args.command](config, out)
        logger.info(f"{args.command} finished, outputs in {out}")
        return code
    except TrackingError as exc:
        logger.error(f"{args.command} failed: {type(exc).__name__}: {exc}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
