#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""Command-line interface: fit, transform, eval, restarts, gradcheck, plotdata, summary, logs and models."""

import argparse
import datetime
import io
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from PIL import Image

from config import Settings, load_settings
from dataset import LabeledDataset, class_partition, fingerprint, load_dataset, summarize
from db import ModelRegistry
from density import BandwidthConfig, fit_kde, kde_log_density
from errors import MelmError, ModelFileError
from evaluation import (
    METHOD_NAMES,
    EvalSettings,
    inner_cv_scorer,
    pipeline_benchmark,
    repeated_separability,
    save_report,
)
from fileio import atomic_write_bytes, atomic_write_text
from model_file import load_model, save_model
from objective import ObjectiveWorkspace, gradient_check
from optimizer import DEFAULT_GAMMA_GRID, OptimConfig, expected_max_curve, multistart, random_orthonormal, select_gamma
from run_logger import log_command_run
from view_run_logs import filter_logs, format_log_entry, list_log_files, summarize_logs

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    """Bad command-line usage; reported with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


class CommandContext:
    """What a subcommand needs: parsed arguments, settings, and the name of the stage it is in."""

    def __init__(self, args: argparse.Namespace, settings: Settings):
        self.args = args
        self.settings = settings
        self.stage = "setup"

    def bandwidth(self, gamma: float) -> BandwidthConfig:
        return BandwidthConfig(gamma=gamma, pair_chunk=self.settings.pair_chunk)


def _float_list(text: str) -> List[float]:
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values or any(value <= 0 for value in values):
        raise argparse.ArgumentTypeError("gamma values must be positive")
    return values


def _method_list(text: str) -> List[str]:
    methods = [item.strip() for item in text.split(",") if item.strip()]
    unknown = [m for m in methods if m not in METHOD_NAMES]
    if not methods or unknown:
        raise argparse.ArgumentTypeError(f"unknown method(s) {unknown}; choose from {', '.join(METHOD_NAMES)}")
    return methods


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="Worker threads (overrides MELM_THREADS)")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    data = _Parser(add_help=False)
    data.add_argument("--data", required=True, help="CSV or libsvm file")
    data.add_argument("--format", choices=["csv", "libsvm"], default=None, help="Default: by file extension")
    data.add_argument("--label-col", default="-1", help="CSV label column, by name or index (default: last)")

    parser = _Parser(prog="melm", description="Maximum entropy linear manifold projections")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", parents=[common, data], help="Fit a MELM projection")
    fit.add_argument("--k", type=int, required=True)
    gamma = fit.add_mutually_exclusive_group()
    gamma.add_argument("--gamma", type=float, default=1.0)
    gamma.add_argument(
        "--gamma-grid",
        type=_float_list,
        nargs="?",
        const=list(DEFAULT_GAMMA_GRID),
        default=None,
        help="Select gamma by inner-CV visual separability (default grid when no values given)",
    )
    fit.add_argument("--restarts", type=int, default=16)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--max-iters", type=int, default=500)
    fit.add_argument("--tol", type=float, default=1e-6)
    fit.add_argument("--out", required=True, help="Model JSON file")

    transform = sub.add_parser("transform", parents=[common, data], help="Project data with a fitted model")
    transform.add_argument("--model", required=True)
    transform.add_argument("--out", required=True, help="CSV with columns x1..xk,label")

    evaluate = sub.add_parser("eval", parents=[common, data], help="Benchmark reduction methods")
    evaluate.add_argument("--protocol", choices=["pipeline", "separability"], required=True)
    evaluate.add_argument("--methods", type=_method_list, default=list(METHOD_NAMES))
    evaluate.add_argument("--k", type=int, required=True)
    evaluate.add_argument("--folds", type=int, default=5)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--gamma", type=float, default=1.0)
    evaluate.add_argument("--gamma-grid", type=_float_list, nargs="?", const=list(DEFAULT_GAMMA_GRID), default=None)
    evaluate.add_argument("--restarts", type=int, default=16)
    evaluate.add_argument("--fraction", type=float, default=1.0, help="Subset fraction per separability repetition")
    evaluate.add_argument("--repetitions", type=int, default=5, help="Separability repetitions")
    evaluate.add_argument("--standardize", action="store_true", help="Standardize features before every method")
    evaluate.add_argument("--out", required=True, help="Report JSON file")

    restarts = sub.add_parser("restarts", parents=[common, data], help="Final D_CS of many random restarts")
    restarts.add_argument("--k", type=int, required=True)
    restarts.add_argument("--n", type=int, default=500)
    restarts.add_argument("--seed", type=int, default=0)
    restarts.add_argument("--gamma", type=float, default=1.0)
    restarts.add_argument("--curve", type=int, default=None, metavar="S_MAX", help="Also write the expected-max curve")
    restarts.add_argument("--out", required=True, help="Trace file, one D_CS per line")

    gradcheck = sub.add_parser("gradcheck", parents=[common, data], help="Compare the gradient with finite differences")
    gradcheck.add_argument("--k", type=int, required=True)
    gradcheck.add_argument("--trials", type=int, default=20)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--gamma", type=float, default=1.0)

    plotdata = sub.add_parser("plotdata", parents=[common, data], help="Projected points and class density rasters")
    plotdata.add_argument("--model", required=True)
    plotdata.add_argument("--grid", type=int, default=200)
    plotdata.add_argument("--png", action="store_true", help="Also write greyscale PNG rasters")
    plotdata.add_argument("--out", required=True, help="Output directory")

    sub.add_parser("summary", parents=[common, data], help="Dataset size, balance and PCA retention")

    logs = sub.add_parser("logs", parents=[common], help="Show execution logs")
    logs.add_argument("--command", dest="log_command", default=None, help="Only runs of this subcommand")
    status = logs.add_mutually_exclusive_group()
    status.add_argument("--success", action="store_true")
    status.add_argument("--failed", action="store_true")
    logs.add_argument("--latest", action="store_true", help="Show the newest matching run in full")

    models = sub.add_parser("models", parents=[common], help="List registered models")
    models.add_argument("--fingerprint", default=None)
    return parser


def _label_column(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _load(ctx: CommandContext) -> LabeledDataset:
    ctx.stage = "load"
    return load_dataset(ctx.args.data, ctx.args.format, _label_column(ctx.args.label_col))


def _optim_config(ctx: CommandContext, **updates) -> OptimConfig:
    return OptimConfig(threads=ctx.settings.threads, **updates)


def _points_frame(points: np.ndarray, ds: LabeledDataset) -> pd.DataFrame:
    frame = pd.DataFrame(points.T, columns=[f"x{i + 1}" for i in range(points.shape[0])])
    if ds.label_names:
        frame["label"] = [ds.label_names[0] if label < 0 else ds.label_names[1] for label in ds.labels]
    else:
        frame["label"] = ds.labels.astype(int)
    return frame


def _write_csv(frame: pd.DataFrame, path: str, header: bool = True) -> str:
    return atomic_write_text(path, frame.to_csv(index=False, header=header, float_format="%.17g", lineterminator="\n"))


def cmd_fit(ctx: CommandContext) -> Dict[str, Any]:
    args = ctx.args
    ds = _load(ctx)
    x_minus, x_plus = class_partition(ds)
    opt = _optim_config(ctx, seed=args.seed, max_iters=args.max_iters, grad_tol=args.tol)

    gamma = args.gamma
    if args.gamma_grid:
        ctx.stage = "gamma selection"
        scorer = inner_cv_scorer(ds, EvalSettings(threads=ctx.settings.threads), args.seed)
        gamma, scores = select_gamma(
            x_plus, x_minus, args.k, opt, scorer, args.gamma_grid, args.restarts, ctx.bandwidth(1.0)
        )
        logger.info("selected gamma %.3g (scores %s)", gamma, ", ".join(f"{s:.4f}" for s in scores))

    ctx.stage = "fit"
    model, _ = multistart(x_plus, x_minus, args.k, ctx.bandwidth(gamma), opt, args.restarts, fingerprint(ds))

    ctx.stage = "save"
    save_model(model, args.out)
    registry = ModelRegistry(ctx.settings.registry_path)
    try:
        model_id = registry.register(
            args.out, args.data, model.fingerprint, model.d, model.k, model.gamma, model.dcs_achieved, args.restarts, args.seed
        )
    finally:
        registry.close()
    print(f"D_CS {model.dcs_achieved:.6g} at gamma {model.gamma:g}; model {model_id} written to {args.out}")
    return {"model_id": model_id, "model": args.out, "dcs": model.dcs_achieved, "gamma": model.gamma}


def cmd_transform(ctx: CommandContext) -> Dict[str, Any]:
    args = ctx.args
    ctx.stage = "load model"
    model = load_model(args.model)
    ds = _load(ctx)
    if ds.d != model.d:
        raise ModelFileError(f"model expects {model.d} features, data has {ds.d}")
    if model.fingerprint and model.fingerprint != fingerprint(ds):
        logger.warning("data differs from the data the model was fitted on (fingerprint mismatch)")

    ctx.stage = "transform"
    _write_csv(_points_frame(model.v.v.T @ ds.points, ds), args.out)
    return {"rows": ds.n, "columns": model.k + 1, "out": args.out}


def cmd_eval(ctx: CommandContext) -> Dict[str, Any]:
    args = ctx.args
    ds = _load(ctx)
    settings = EvalSettings(
        gamma=args.gamma,
        gamma_grid=args.gamma_grid,
        restarts=args.restarts,
        optimizer=_optim_config(ctx, seed=args.seed),
        standardize=args.standardize,
        threads=ctx.settings.threads,
    )

    ctx.stage = "evaluate"
    if args.protocol == "pipeline":
        report = pipeline_benchmark(ds, args.methods, args.k, args.folds, args.seed, settings)
    else:
        report = repeated_separability(
            ds, args.methods, args.k, args.folds, args.seed, args.fraction, args.repetitions, settings
        )

    ctx.stage = "save"
    save_report(report, args.out)
    for method, mean in report.means.items():
        print(f"{method:10s} {'failed' if mean is None else f'{mean:.4f}'}")
    for error in report.errors:
        print(f"{error.method} fold {error.fold}: {error.message}", file=sys.stderr)
    return {"out": args.out, "means": report.means, "errors": len(report.errors)}


def cmd_restarts(ctx: CommandContext) -> Dict[str, Any]:
    args = ctx.args
    ds = _load(ctx)
    x_minus, x_plus = class_partition(ds)

    ctx.stage = "restarts"
    _, trace = multistart(x_plus, x_minus, args.k, ctx.bandwidth(args.gamma), _optim_config(ctx, seed=args.seed), args.n)
    lines = ["nan" if value is None else repr(float(value)) for value in trace.values]
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    result: Dict[str, Any] = {"out": args.out, "best": trace.values[trace.best_index], "failed": lines.count("nan")}

    if args.curve:
        ctx.stage = "curve"
        curve = expected_max_curve(trace.finite_values(), args.curve)
        curve_path = f"{os.path.splitext(args.out)[0]}_curve.csv"
        _write_csv(pd.DataFrame({"s": np.arange(1, args.curve + 1), "expected_max": curve}), curve_path)
        result["curve"] = curve_path
    print(f"best D_CS {result['best']:.6g} over {args.n} restarts ({result['failed']} failed)")
    return result


def cmd_gradcheck(ctx: CommandContext) -> Dict[str, Any]:
    args = ctx.args
    ds = _load(ctx)
    x_minus, x_plus = class_partition(ds)

    ctx.stage = "gradcheck"
    ws = ObjectiveWorkspace(x_plus, x_minus, args.k, ctx.bandwidth(args.gamma))
    rng = np.random.default_rng(args.seed)
    errors = []
    for trial in range(args.trials):
        # Off the manifold as well, so the penalty gradient is exercised
        v = random_orthonormal(ds.d, args.k, args.seed + trial).v + 0.1 * rng.standard_normal((ds.d, args.k))
        errors.append(gradient_check(ws, v))
    worst = max(errors)
    print(f"max relative error {worst:.3e} over {args.trials} trials")
    if worst > GRADCHECK_TOLERANCE:
        raise MelmError(f"max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:g}")
    return {"max_relative_error": worst, "trials": args.trials}


def _raster(points: np.ndarray, ds: LabeledDataset, gamma: float, grid: int, ctx: CommandContext):
    """Class densities on a grid over the projected points' bounding box (10% margin), rows from low to high x2."""
    low, high = points.min(axis=1), points.max(axis=1)
    margin = 0.1 * np.where(high > low, high - low, 1.0)
    axes = [np.linspace(lo - m, hi + m, grid) for lo, hi, m in zip(low, high, margin)]
    if points.shape[0] == 1:
        cells = axes[0][None, :]
        shape = (1, grid)
    else:
        xx, yy = np.meshgrid(axes[0], axes[1])
        cells = np.vstack([xx.ravel(), yy.ravel()])
        shape = (grid, grid)
    projected = LabeledDataset(points=points, labels=ds.labels)
    x_minus, x_plus = class_partition(projected)
    rasters = {
        name: np.exp(kde_log_density(fit_kde(x, ctx.bandwidth(gamma)), cells)).reshape(shape)
        for name, x in (("minus", x_minus), ("plus", x_plus))
    }
    return axes, rasters


def _png(raster: np.ndarray) -> bytes:
    top = raster.max()
    scaled = np.zeros_like(raster) if top <= 0 else raster / top
    image = Image.fromarray(np.flipud(np.rint(255 * scaled)).astype(np.uint8))
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()


def cmd_plotdata(ctx: CommandContext) -> Dict[str, Any]:
    args = ctx.args
    ctx.stage = "load model"
    model = load_model(args.model)
    ds = _load(ctx)
    if ds.d != model.d:
        raise ModelFileError(f"model expects {model.d} features, data has {ds.d}")
    if model.k > 2:
        raise ModelFileError(f"density rasters need k <= 2, model has k={model.k}")
    if args.grid < 2:
        raise MelmError(f"grid needs at least 2 cells per axis, got {args.grid}")

    ctx.stage = "export"
    points = model.v.v.T @ ds.points
    written = [_write_csv(_points_frame(points, ds), os.path.join(args.out, "points.csv"))]
    axes, rasters = _raster(points, ds, model.gamma, args.grid, ctx)
    written.append(
        atomic_write_text(
            os.path.join(args.out, "grid.json"),
            json.dumps({f"x{i + 1}": [float(axis[0]), float(axis[-1]), len(axis)] for i, axis in enumerate(axes)}),
        )
    )
    for name, raster in rasters.items():
        written.append(_write_csv(pd.DataFrame(raster), os.path.join(args.out, f"density_{name}.csv"), header=False))
        if args.png:
            written.append(atomic_write_bytes(os.path.join(args.out, f"density_{name}.png"), _png(raster)))
    print("\n".join(written))
    return {"files": written}


def cmd_summary(ctx: CommandContext) -> Dict[str, Any]:
    ds = _load(ctx)
    ctx.stage = "summary"
    summary = summarize(ds).model_dump()
    print(json.dumps(summary, indent=2))
    return summary


def cmd_logs(ctx: CommandContext) -> Dict[str, Any]:
    args = ctx.args
    ctx.stage = "logs"
    log_files = filter_logs(
        list_log_files(ctx.settings.log_dir),
        command=args.log_command,
        success_only=args.success,
        failed_only=args.failed,
    )
    if not log_files:
        print("No logs match the specified filters.")
    elif args.latest:
        with open(log_files[0], "r", encoding="utf-8") as f:
            print(format_log_entry(json.load(f), verbose=True))
    else:
        print(summarize_logs(log_files))
    return {"matches": len(log_files)}


def cmd_models(ctx: CommandContext) -> Dict[str, Any]:
    ctx.stage = "models"
    registry = ModelRegistry(ctx.settings.registry_path)
    try:
        records = registry.list_models(ctx.args.fingerprint)
    finally:
        registry.close()
    if not records:
        print("No models registered.")
    for record in records:
        print(
            f"{record['model_id']}  d={record['d']} k={record['k']} gamma={record['gamma']:g} "
            f"dcs={record['dcs']:.6g}  {record['model_path']}"
        )
    return {"models": len(records)}


COMMANDS: Dict[str, Callable[[CommandContext], Dict[str, Any]]] = {
    "fit": cmd_fit,
    "transform": cmd_transform,
    "eval": cmd_eval,
    "restarts": cmd_restarts,
    "gradcheck": cmd_gradcheck,
    "plotdata": cmd_plotdata,
    "summary": cmd_summary,
    "logs": cmd_logs,
    "models": cmd_models,
}


def run(argv: Optional[List[str]] = None, settings: Optional[Settings] = None) -> int:
    """
    Run one CLI command.

    Args:
        argv: Arguments without the program name (sys.argv[1:] when None)
        settings: Settings to use instead of the environment

    Returns:
        0 on success, 2 on usage errors, 1 when a stage fails
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = settings or load_settings()
        if args.threads is not None:
            if args.threads < 1:
                parser.error("--threads must be >= 1")
            settings = settings.model_copy(update={"threads": args.threads})
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 2
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )

    ctx = CommandContext(args, settings)
    start_time = datetime.datetime.now()
    result, error, code = None, None, 0
    try:
        result = COMMANDS[args.command](ctx)
    except (MelmError, ValueError, OSError) as e:
        error, code = f"{ctx.stage} failed: {e}", 1
        print(error, file=sys.stderr)

    try:
        log_command_run(
            command=args.command,
            argv=argv,
            start_time=start_time,
            end_time=datetime.datetime.now(),
            result=result,
            logs_dir=settings.log_dir,
            success=code == 0,
            error=error,
        )
    except OSError as e:
        logger.warning("could not write the execution log: %s", e)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
