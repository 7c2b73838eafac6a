"""Command-line front end: gen-quantizer, estimate, sweep, crlb."""

import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from qblue.config import ESTIMATE_COLUMNS, VALID_ESTIMATORS, VALID_MODELS, get_settings
from qblue.errors import QBlueError
from qblue.models import (
    DcModelKnownSigma,
    EstimateReport,
    EstimatorName,
    InlKind,
    InlProfile,
    SineDesign,
    SweepConfig,
    SweepModel,
)
from qblue.services.counting import histogram
from qblue.services.estimators import (
    estimate_dc_known_sigma,
    estimate_dc_unknown_sigma,
    estimate_sine,
    fold_coherent,
)
from qblue.services.montecarlo import make_grid, montecarlo_service
from qblue.services.quantizer import apply_inl, load_transitions, make_uniform, save_transitions
from qblue.utils.csvio import float_format, read_samples, write_table
from qblue.utils.excel import crlb_to_frame, generate_excel_report, sweep_to_frame

logger = logging.getLogger(__name__)

settings = get_settings()

DC_GRID_LIMIT = 0.45
DEFAULT_SINE_THETA = "3.7,11.4,23.1"


# --- flag parsing ------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonnegative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{text}'")
    if not np.isfinite(value) or value < 0:
        raise argparse.ArgumentTypeError(f"must be a finite number >= 0, got {text}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got '{text}'")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _grid(text: str) -> tuple[float, ...]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid must be lo:hi:step, got '{text}'")
    try:
        lo, hi, step = (float(p) for p in parts)
        return make_grid(lo, hi, step)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid '{text}'")


def _default_dc_grid() -> tuple[float, ...]:
    """theta/delta grid over [-0.45, 0.45] spaced by QBLUE_THETA_STEP."""
    return make_grid(-DC_GRID_LIMIT, DC_GRID_LIMIT, get_settings().theta_step)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(_positive_int(p) for p in text.split(",") if p.strip())


def _float_triple(text: str) -> tuple[float, float, float]:
    try:
        values = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three numbers, got '{text}'")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three numbers, got '{text}'")
    return values


def _estimators(text: str) -> tuple[str, ...]:
    names = tuple(p.strip() for p in text.split(",") if p.strip())
    unknown = [n for n in names if n not in VALID_ESTIMATORS]
    if unknown or not names:
        raise argparse.ArgumentTypeError(
            f"estimators must be a subset of {','.join(VALID_ESTIMATORS)}"
        )
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.app_name,
        description="Quantile-based Gauss-Markov estimation from quantized records.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {settings.app_version}"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-quantizer", help="write a transition-level CSV")
    gen.add_argument("--bits", type=_positive_int, required=True)
    gen.add_argument("--range-lo", type=float, default=-1.0)
    gen.add_argument("--range-hi", type=float, default=1.0)
    gen.add_argument("--inl-half-width", type=_nonnegative_float, default=0.0)
    gen.add_argument("--seed", type=_seed, default=0)
    gen.add_argument("--out", type=Path, required=True)

    est = commands.add_parser("estimate", help="estimate parameters of one record")
    est.add_argument("--model", choices=VALID_MODELS, required=True)
    est.add_argument("--levels", type=Path, required=True)
    est.add_argument("--samples", type=Path, required=True)
    est.add_argument("--sigma", type=_nonnegative_float)
    est.add_argument("--samples-per-period", type=_positive_int)
    est.add_argument("--periods", type=_positive_int)
    est.add_argument("--step", type=float, help="override the quantization step (volts)")

    sweep = commands.add_parser("sweep", help="Monte Carlo bias/std/MSE sweep")
    sweep.add_argument("--model", choices=VALID_MODELS, required=True)
    sweep.add_argument("--bits", type=_positive_int, default=10)
    sweep.add_argument("--sigma-norm", type=_nonnegative_float, required=True)
    sweep.add_argument("--theta-grid", type=_grid)
    sweep.add_argument("--n", type=_int_list, help="record lengths, default 500 (DC models)")
    sweep.add_argument("--records", type=_positive_int)
    sweep.add_argument(
        "--full-scale", action="store_true", help="use QBLUE_FULL_SCALE_RECORDS records"
    )
    sweep.add_argument("--inl-half-width", type=_nonnegative_float, default=0.0)
    sweep.add_argument("--seed", type=_seed, default=settings.master_seed)
    sweep.add_argument("--estimators", type=_estimators)
    sweep.add_argument("--samples-per-period", type=_positive_int, default=20)
    sweep.add_argument("--periods", type=_positive_int, default=50)
    sweep.add_argument(
        "--sine-theta", type=_float_triple, default=_float_triple(DEFAULT_SINE_THETA)
    )
    sweep.add_argument("--out", type=Path, required=True)

    crlb = commands.add_parser("crlb", help="Cramer-Rao bound table for model 1")
    crlb.add_argument("--bits", type=_positive_int, default=10)
    crlb.add_argument("--sigma-norm", type=_nonnegative_float, required=True)
    crlb.add_argument("--n", type=_positive_int, required=True)
    crlb.add_argument("--theta-grid", type=_grid)
    crlb.add_argument("--out", type=Path, required=True)
    return parser


# --- commands ----------------------------------------------------------------


def _inl(half_width: float, seed: int) -> InlProfile:
    kind = InlKind.UNIFORM if half_width > 0 else InlKind.NONE
    return InlProfile(kind=kind, half_width=half_width, seed=seed)


def _write_output(df: pd.DataFrame, path: Path, title: str, summary: dict) -> None:
    if path.suffix.lower() == ".xlsx":
        buffer = generate_excel_report(df, title, datetime.now(timezone.utc), summary)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buffer.getvalue())
        logger.info("Wrote %d rows to %s", len(df), path)
    else:
        write_table(df, path)


def cmd_gen_quantizer(args: argparse.Namespace) -> int:
    spec = make_uniform(args.bits, (args.range_lo, args.range_hi))
    spec = apply_inl(spec, _inl(args.inl_half_width, args.seed))
    save_transitions(spec, args.out)
    print(f"L={spec.level_count} delta={spec.step!r}")
    return 0


def _print_report(report: EstimateReport) -> None:
    fmt = float_format()
    print(",".join(ESTIMATE_COLUMNS))
    for name, value, std in zip(report.parameter_names, report.theta_hat, report.std):
        print(
            f"{name},{fmt % value},{fmt % std},"
            f"{str(report.fallback).lower()},{report.lambda_used}"
        )


def cmd_estimate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    model = SweepModel(args.model)
    if model in (SweepModel.DC1, SweepModel.SINE3) and args.sigma is None:
        parser.error(f"--sigma is required for --model {model.value}")
    if model == SweepModel.SINE3 and (args.samples_per_period is None or args.periods is None):
        parser.error("--samples-per-period and --periods are required for --model sine3")

    spec = load_transitions(args.levels, step=args.step)
    codes = read_samples(args.samples, spec.level_count)

    if model == SweepModel.SINE3:
        design = SineDesign.canonical(args.samples_per_period, args.periods, args.sigma)
        folded = fold_coherent(codes, design.samples_per_period, design.periods, spec.level_count)
        report = estimate_sine(folded, design, spec)
    else:
        hist = histogram(codes, spec.level_count)
        if model == SweepModel.DC1:
            report = estimate_dc_known_sigma(hist, spec, DcModelKnownSigma(sigma=args.sigma))
        else:
            report = estimate_dc_unknown_sigma(hist, spec)

    if report.fallback:
        logger.warning(
            "Quantile design unidentifiable (Lambda=%d); reported %s",
            report.lambda_used,
            report.fallback_estimator.value,
        )
    _print_report(report)
    return 0


def cmd_sweep(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    model = SweepModel(args.model)
    if model == SweepModel.SINE3 and (args.theta_grid is not None or args.n is not None):
        parser.error("--theta-grid and --n do not apply to --model sine3; use --sine-theta")
    if args.records is not None:
        records = args.records
    elif args.full_scale:
        records = settings.full_scale_records
    else:
        records = settings.default_records

    if model == SweepModel.SINE3:
        grid = args.sine_theta
        default_estimators = ("quantile", "lse")
    else:
        grid = args.theta_grid or _default_dc_grid()
        default_estimators = ("quantile", "mean")

    config = SweepConfig(
        model=model,
        bits=args.bits,
        sigma_norm=args.sigma_norm,
        theta_grid=grid,
        record_lengths=args.n or (500,),
        samples_per_period=args.samples_per_period,
        periods=args.periods,
        records=records,
        inl=_inl(args.inl_half_width, args.seed),
        seed=args.seed,
        estimators=tuple(EstimatorName(e) for e in (args.estimators or default_estimators)),
    )
    result = montecarlo_service.run_sweep(config)
    excel = args.out.suffix.lower() == ".xlsx"
    _write_output(
        sweep_to_frame(result, include_failures=excel),
        args.out,
        title=f"qblue sweep ({model.value})",
        summary={
            "Model": model.value,
            "Bits": config.bits,
            "Sigma/Delta": config.sigma_norm,
            "Records": config.records,
            "INL half width": config.inl.half_width,
            "Seed": str(config.seed),
        },
    )
    print(f"wrote {len(result.rows)} rows to {args.out}")
    return 0


def cmd_crlb(args: argparse.Namespace) -> int:
    grid = args.theta_grid or _default_dc_grid()
    rows = montecarlo_service.crlb_sweep(args.bits, args.sigma_norm, args.n, grid)
    _write_output(
        crlb_to_frame(rows),
        args.out,
        title="qblue Cramer-Rao bound",
        summary={"Bits": args.bits, "Sigma/Delta": args.sigma_norm, "N": args.n},
    )
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _one_line(error: Exception) -> str:
    if isinstance(error, ValidationError):
        first = error.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ()))
        return f"{where}: {first['msg']}" if where else first["msg"]
    return " ".join(str(error).split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else settings.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == "gen-quantizer":
            return cmd_gen_quantizer(args)
        if args.command == "estimate":
            return cmd_estimate(args, parser)
        if args.command == "sweep":
            return cmd_sweep(args, parser)
        return cmd_crlb(args)
    except (QBlueError, ValidationError, ValueError, OSError) as e:
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
