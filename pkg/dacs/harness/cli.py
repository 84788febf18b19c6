"""Command-line entry point: ``select``, ``cs``, ``simulate`` and ``validate``.

Examples:
  dacs select --calib calib.csv --test test.csv --alpha 0.2 --metric underrep
  dacs select --calib calib.csv --test test.csv --alpha 0.3 --metric markowitz --gamma auto --mode relaxed
  dacs cs --calib calib.csv --test test.csv --alpha 0.2
  dacs simulate --setting u1 --reps 250 --alpha-grid 0.05,0.2,0.35 --out-dir results/
  dacs validate --instances 100
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional, Sequence

import numpy as np
from prometheus_client import start_http_server

from dacs.config import configure_logging, load_settings
from dacs.connections.results_db import ResultsDB
from dacs.engine.diversity import (
    DiversityMetric,
    Markowitz,
    Sharpe,
    Underrep,
    markowitz_gamma_hint,
    rbf_similarity,
    tanimoto_similarity,
)
from dacs.engine.pipeline import run_cs, run_dacs
from dacs.engine.stopping import dump_tables_csv
from dacs.errors import ConfigError, DacsError
from dacs.harness.csv_io import read_calibration_csv, read_similarity_csv, read_test_csv
from dacs.harness.evaluate import TIMING_COLUMNS, SweepSpec, run_sweep
from dacs.harness.simulate import SETTINGS, get_setting
from dacs.harness.validate import SUITES, run_validation
from dacs.models.results import DacsConfig, ExactUnderrepMode, RelaxedMcMode
from dacs.models.samples import CalibrationSample, TestSample

logger = logging.getLogger(__name__)


def _alpha_list(text: str) -> List[float]:
    try:
        values = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text}")
    if not values or any(not 0 < a < 1 for a in values):
        raise argparse.ArgumentTypeError("every alpha must lie strictly between 0 and 1")
    return values


def _gamma(text: str):
    if text == "auto":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"gamma must be a positive number or 'auto', got {text}")
    if value <= 0:
        raise argparse.ArgumentTypeError("gamma must be positive")
    return value


def _add_data_flags(cmd: argparse.ArgumentParser, metric_required: bool) -> None:
    cmd.add_argument("--calib", required=True, help="Calibration CSV (z or z1..zd, mu_hat, y, optional c)")
    cmd.add_argument("--test", required=True, help="Test CSV (z or z1..zd, mu_hat, optional c)")
    cmd.add_argument("--alpha", type=float, required=True, help="Target FDR level in (0, 1)")
    cmd.add_argument(
        "--metric",
        choices=["underrep", "sharpe", "markowitz"],
        required=metric_required,
        help="Diversity metric",
    )
    cmd.add_argument("--categories", type=int, help="Number of categories C (default: distinct z values)")
    cmd.add_argument("--gamma", type=_gamma, help="Markowitz risk aversion, or 'auto' for 2 / lambda_max")
    cmd.add_argument("--sim-matrix", help="Similarity matrix CSV in pooled order (calibration rows first)")
    cmd.add_argument(
        "--similarity",
        choices=["rbf", "tanimoto"],
        default="rbf",
        help="Kernel built from z1..zd when --sim-matrix is not given (default: rbf)",
    )
    cmd.add_argument("--jitter-seed", type=int, help="Break finite score ties with seeded jitter")
    cmd.add_argument("--out", help="Write the JSON result here instead of stdout")


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dacs",
        description="Diversity-aware conformal selection",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split("Examples:", 1)[1],
    )
    parser.add_argument("--log-level", help="Override DACS_LOG_LEVEL")
    parser.add_argument("--env-file", help="Read DACS_* variables from this file")
    subparsers = parser.add_subparsers(dest="command", required=True)

    cmd_select = subparsers.add_parser("select", help="Run DACS on CSV inputs")
    _add_data_flags(cmd_select, metric_required=True)
    cmd_select.add_argument("--mode", choices=["exact", "relaxed"], help="Default: exact for underrep, relaxed otherwise")
    cmd_select.add_argument("--mc-draws", type=int, default=50, help="Monte Carlo draws per reward cell (default: 50)")
    cmd_select.add_argument("--grid", type=int, default=10, help="Number of grid times (default: 10)")
    cmd_select.add_argument("--rounding-draws", type=int, default=50, help="Sharpe rounding draws (default: 50)")
    cmd_select.add_argument("--no-warm-start", action="store_true", help="Solve every reward cell from scratch")
    cmd_select.add_argument("--exact-grid", type=int, help="Coarse grid size for exact mode (default: every time)")
    cmd_select.add_argument("--seed", type=int, help="Master seed (default: DACS_SEED)")
    cmd_select.add_argument("--workers", type=int, help="Worker processes (default: DACS_WORKERS)")
    cmd_select.add_argument("--tables", help="Also write the reward and Snell tables to this CSV")

    cmd_cs = subparsers.add_parser("cs", help="Run plain conformal selection on CSV inputs")
    _add_data_flags(cmd_cs, metric_required=False)

    cmd_sim = subparsers.add_parser("simulate", help="Replicate sweep on a synthetic setting")
    cmd_sim.add_argument("--setting", required=True, choices=sorted(SETTINGS), help="Data-generating setting")
    cmd_sim.add_argument("--reps", type=int, required=True, help="Number of replicates")
    cmd_sim.add_argument("--alpha-grid", type=_alpha_list, required=True, help="Comma-separated FDR levels")
    cmd_sim.add_argument("--out-dir", required=True, help="Directory for the replicate and summary CSVs")
    cmd_sim.add_argument("--metric", choices=["underrep", "sharpe", "markowitz"], help="Default: underrep or sharpe by setting")
    cmd_sim.add_argument("--gamma", type=_gamma, default="auto", help="Markowitz risk aversion (default: auto)")
    cmd_sim.add_argument("--n-calib", type=int, help="Override the calibration size")
    cmd_sim.add_argument("--n-test", type=int, help="Override the test size")
    cmd_sim.add_argument("--mc-draws", type=int, default=50)
    cmd_sim.add_argument("--grid", type=int, default=10)
    cmd_sim.add_argument("--rounding-draws", type=int, default=50)
    cmd_sim.add_argument("--no-warm-start", action="store_true")
    cmd_sim.add_argument("--exact-grid", type=int, help="Coarse grid size for exact mode (default: every time)")
    cmd_sim.add_argument("--baseline-draws", type=int, default=0, help="Rounding draws per time for normalized diversity")
    cmd_sim.add_argument("--seed", type=int, help="Master seed (default: DACS_SEED)")
    cmd_sim.add_argument("--workers", type=int, help="Worker processes (default: DACS_WORKERS)")
    cmd_sim.add_argument("--store", action="store_true", help="Also insert replicate rows into DACS_RESULTS_URL")
    cmd_sim.add_argument("--timings", action="store_true", help="Also write per-replicate wall times to a timings CSV")

    cmd_val = subparsers.add_parser("validate", help="Cross-check the engines against brute-force oracles")
    cmd_val.add_argument("--instances", type=int, default=50, help="Random instances per suite (default: 50)")
    cmd_val.add_argument("--suite", action="append", choices=sorted(SUITES), help="Run only this suite (repeatable)")
    cmd_val.add_argument("--seed", type=int, default=0)
    cmd_val.add_argument("--out", help="Write the JSON report here instead of stdout")
    return parser


def build_cli_metric(
    args: argparse.Namespace,
    calib: Sequence[CalibrationSample],
    test: Sequence[TestSample],
) -> Optional[DiversityMetric]:
    """Metric named on the command line, with its similarity matrix when it needs one."""
    if args.metric is None:
        return None
    z = [s.z for s in calib] + [s.z for s in test]
    if args.metric == "underrep":
        if isinstance(z[0], list):
            raise ConfigError("the underrep metric needs a categorical z column")
        return Underrep(args.categories or len({str(v) for v in z}))

    if args.sim_matrix:
        sigma = read_similarity_csv(args.sim_matrix)
        if sigma.dim != len(z):
            raise ConfigError(f"similarity matrix has dimension {sigma.dim}, expected {len(z)}")
    elif isinstance(z[0], list):
        vectors = np.asarray(z, dtype=float)
        sigma = tanimoto_similarity(vectors) if args.similarity == "tanimoto" else rbf_similarity(vectors)
    else:
        raise ConfigError(f"{args.metric} needs --sim-matrix or numeric z1..zd columns")

    if args.metric == "sharpe":
        return Sharpe(sigma)
    if args.gamma is None:
        raise ConfigError("markowitz needs --gamma (a positive number or 'auto')")
    gamma = markowitz_gamma_hint(sigma) if args.gamma == "auto" else args.gamma
    return Markowitz(sigma, gamma)


def _emit(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        with open(out, "w") as f:
            f.write(text + "\n")
        logger.info(f"Wrote result to {out}")
    else:
        print(text)


def cmd_select(args: argparse.Namespace, settings) -> int:
    calib, test = read_calibration_csv(args.calib), read_test_csv(args.test)
    metric = build_cli_metric(args, calib, test)
    mode_name = args.mode or ("exact" if isinstance(metric, Underrep) else "relaxed")
    if mode_name == "exact":
        mode = ExactUnderrepMode(grid_size=args.exact_grid)
    else:
        mode = RelaxedMcMode(
            mc_draws=args.mc_draws,
            grid_size=args.grid,
            rounding_draws=args.rounding_draws,
            warm_start=not args.no_warm_start,
        )
    config = DacsConfig(
        alpha=args.alpha,
        metric=metric,
        mode=mode,
        seed=settings.seed if args.seed is None else args.seed,
        workers=args.workers or settings.workers,
        jitter_seed=args.jitter_seed,
        keep_tables=bool(args.tables),
    )
    result = run_dacs(calib, test, config)
    if args.tables and result.diagnostics.tables:
        dump_tables_csv(result.diagnostics.tables["rewards"], result.diagnostics.tables["snell"], args.tables)
    payload = result.to_dict()
    payload["diversity"] = result.diagnostics.diversity
    _emit(payload, args.out)
    return 0


def cmd_cs(args: argparse.Namespace, settings) -> int:
    if not 0 < args.alpha < 1:
        raise ConfigError("alpha must lie strictly between 0 and 1")
    calib, test = read_calibration_csv(args.calib), read_test_csv(args.test)
    metric = build_cli_metric(args, calib, test)
    result = run_cs(calib, test, args.alpha, metric=metric, jitter_seed=args.jitter_seed)
    payload = result.to_dict()
    payload["diversity"] = result.diagnostics.diversity
    _emit(payload, args.out)
    return 0


def cmd_simulate(args: argparse.Namespace, settings) -> int:
    overrides = {k: v for k, v in (("n_calib", args.n_calib), ("n_test", args.n_test)) if v is not None}
    setting = get_setting(args.setting, **overrides)
    metric_kind = args.metric or ("underrep" if setting.family == "underrep" else "sharpe")
    if metric_kind == "underrep":
        mode = ExactUnderrepMode(grid_size=args.exact_grid)
    else:
        mode = RelaxedMcMode(
            mc_draws=args.mc_draws,
            grid_size=args.grid,
            rounding_draws=args.rounding_draws,
            warm_start=not args.no_warm_start,
        )
    spec = SweepSpec(
        setting=setting,
        alphas=args.alpha_grid,
        metric_kind=metric_kind,
        gamma=args.gamma,
        mode=mode,
        baseline_draws=args.baseline_draws,
    )
    seed = settings.seed if args.seed is None else args.seed
    report = run_sweep(spec, args.reps, master_seed=seed, workers=args.workers or settings.workers)

    os.makedirs(args.out_dir, exist_ok=True)
    replicates_path = os.path.join(args.out_dir, f"{setting.name}_{metric_kind}_replicates.csv")
    summary_path = os.path.join(args.out_dir, f"{setting.name}_{metric_kind}_summary.csv")
    report.without_timing().to_csv(replicates_path, index=False)
    report.summary(timing=False).to_csv(summary_path, index=False)
    logger.info(f"Wrote {replicates_path} and {summary_path}")
    if args.timings:
        timings_path = os.path.join(args.out_dir, f"{setting.name}_{metric_kind}_timings.csv")
        keys = ["setting", "replicate", "alpha", "method"]
        report.replicates[keys + TIMING_COLUMNS].to_csv(timings_path, index=False)
        logger.info(f"Wrote {timings_path}")

    if args.store:
        db = ResultsDB(settings.results_url)
        try:
            db.store_rows(report.rows())
        finally:
            db.close()
        logger.info(f"Stored sweep {report.sweep_id}")
    return 0


def cmd_validate(args: argparse.Namespace, settings) -> int:
    report = run_validation(args.instances, args.seed, args.suite)
    _emit(report, args.out)
    return 0 if report["passed"] else 1


COMMANDS = {
    "select": cmd_select,
    "cs": cmd_cs,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns 0 on success, 1 on data or runtime errors, 2 on usage errors."""
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        settings = load_settings(args.env_file)
    except ConfigError as e:
        configure_logging()
        logger.error(f"Configuration error: {e}")
        return 1
    configure_logging(args.log_level or settings.log_level)
    if settings.metrics_port:
        start_http_server(settings.metrics_port)
        logger.info(f"Serving metrics on port {settings.metrics_port}")

    try:
        return COMMANDS[args.command](args, settings)
    except (DacsError, OSError) as e:
        logger.error(f"Command {args.command} failed: {e}")
        return 1
    except ValueError as e:
        # pydantic validation of flag values
        logger.error(f"Invalid arguments for {args.command}: {e}")
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
