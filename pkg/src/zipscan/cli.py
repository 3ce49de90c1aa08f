"""Command-line entry point: ``zipscan detect | simulate | null-study``.

Exit statuses
    0  success
    2  usage error (bad flags, empty method list)
    3  input error (missing file, malformed CSV, unknown scenario, zip without indicators)
    4  statistical degeneracy (e.g. no cases observed)
    5  a Monte Carlo replica failed

Reports go to ``--out``; stdout carries only the report path and stderr
carries diagnostics.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .detector import METHODS, ScanConfig, Scanner
from .em import DegenerateDataError, EmConfig
from .inference import NullReplicaConfig, ReplicaError, default_workers, significance
from .regions import InputError, read_region_csv
from .simulate import BUILTIN_SCENARIOS, compare_methods, compare_type_i, load_scenario

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DEGENERATE = 4
EXIT_REPLICA = 5

log = logging.getLogger("zipscan")


class UsageError(Exception):
    pass


def _methods(text: str) -> list[str]:
    items = [m.strip() for m in text.split(",") if m.strip()]
    if not items:
        raise UsageError("--methods needs at least one of " + ", ".join(METHODS))
    bad = [m for m in items if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(METHODS)}")
    return list(dict.fromkeys(items))


def _add_common(p: argparse.ArgumentParser, default_out: str) -> None:
    p.add_argument("--alpha", type=float, default=0.05, help="significance level")
    p.add_argument("--replicas", "--b", dest="replicas", type=int, default=999,
                   help="Monte Carlo replicas B")
    p.add_argument("--seed", type=int, default=None,
                   help="master seed; drawn at random and recorded when omitted")
    p.add_argument("--max-pop-fraction", type=float, default=0.5,
                   help="largest zone as a share of the total population")
    p.add_argument("--em-tol", type=float, default=EmConfig.tol)
    p.add_argument("--em-max-iter", type=int, default=EmConfig.max_iter)
    p.add_argument("--em-null", choices=("per-zone", "separate"), default="per-zone",
                   help="denominator of the EM likelihood ratio")
    p.add_argument("--strict-paper-bootstrap", action="store_true",
                   help="replicas carry sum(population) cases instead of the observed total")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default: available cores)")
    p.add_argument("--out", default=default_out, help="report path")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zipscan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    det = sub.add_parser("detect", help="most likely cluster and its p-value for one data set")
    det.add_argument("input", help="CSV with id,x,y,population,cases[,structural_zero]")
    det.add_argument("--method", choices=METHODS, default="zip-em")
    _add_common(det, "zipscan-detect.json")

    sim = sub.add_parser("simulate", help="power study on hex-map scenarios")
    sim.add_argument("--scenario", required=True,
                     help="comma-separated built-in names (" + ",".join(BUILTIN_SCENARIOS)
                     + ") or JSON paths")
    sim.add_argument("--methods", default=",".join(METHODS))
    sim.add_argument("--studies", "--n", dest="studies", type=int, default=1000)
    _add_common(sim, "zipscan-simulate.csv")

    nul = sub.add_parser("null-study", help="type I error on the hex map with structural zeros")
    nul.add_argument("--methods", default=",".join(METHODS))
    nul.add_argument("--studies", "--n", dest="studies", type=int, default=1000)
    nul.add_argument("--zeros", type=int, default=15, help="structural zeros per map")
    nul.add_argument("--cases", type=int, default=507, help="cases per map")
    _add_common(nul, "zipscan-null-study.csv")
    return parser


def _resolve(args) -> dict:
    """Effective configuration with every default filled in."""
    if args.seed is None:
        args.seed = int(np.random.SeedSequence().entropy % 2**63)
    if args.workers is None:
        args.workers = default_workers()
    cfg = {k: v for k, v in vars(args).items() if k not in ("verbose", "out")}
    cfg["version"] = __version__
    return cfg


def _scan_config(args) -> ScanConfig:
    try:
        em = EmConfig(tol=args.em_tol, max_iter=args.em_max_iter)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 0 < args.max_pop_fraction <= 1:
        raise UsageError("--max-pop-fraction must lie in (0, 1]")
    return ScanConfig(max_pop_fraction=args.max_pop_fraction, em=em, em_null=args.em_null)


def _replica_config(args) -> NullReplicaConfig:
    try:
        return NullReplicaConfig(B=args.replicas, seed=args.seed, alpha=args.alpha,
                                 total_cases_rule="population" if args.strict_paper_bootstrap
                                 else "observed")
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def _finite(v: float | None):
    # JSON has no infinity; large statistics are kept on the log scale as well
    return None if v is None or not np.isfinite(v) else float(v)


def run_detect(args) -> Path:
    config = _resolve(args)
    scan_cfg = _scan_config(args)
    rep_cfg = _replica_config(args)
    region_map, data = read_region_csv(args.input)
    if args.method == "zip" and data.structural_zero is None:
        raise InputError(f"{args.input}: the zip method needs a structural_zero column")
    log.info("read %d regions, %d cases", region_map.k, data.total)
    scanner = Scanner(region_map, scan_cfg)
    log.info("%d candidate zones", len(scanner.zones))
    out = significance(region_map, data, args.method, rep_cfg, scan_cfg, args.workers, scanner)
    diag = {k: _jsonable(v) for k, v in out.diagnostics.items()}
    if diag.get("em_nonconverged_zones"):
        log.warning("EM hit the iteration cap in %d zones", diag["em_nonconverged_zones"])
    fit = None
    if out.fit is not None:
        fit = {"p_hat": out.fit.p_hat, "theta0_hat": out.fit.theta0_hat,
               "thetaZ_hat": out.fit.thetaZ_hat}
    report = {
        "method": out.method,
        "best_zone": [region_map.ids[i] for i in out.best_zone.members],
        "best_zone_center": region_map.ids[out.best_zone.center],
        "population_inside": float(out.best_zone.pop_inside),
        "cases_inside": _jsonable(out.best_zone.cases_inside),
        "lambda": _finite(out.lambda_obs),
        "log_lambda": out.log_lambda,
        "p_value": out.p_value,
        "lambda_star": _finite(out.lambda_star),
        "log_lambda_star": out.log_lambda_star,
        "reject": out.reject,
        "B": rep_cfg.B,
        "seed": rep_cfg.seed,
        "fit": fit,
        "diagnostics": diag,
        "config": config,
    }
    path = Path(args.out)
    path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return path


def _write_rows(path: Path, header: list[str], rows: list[dict], config: dict) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    Path(str(path) + ".config.json").write_text(json.dumps(config, indent=2) + "\n",
                                                encoding="utf-8")


def run_simulate(args) -> Path:
    methods = _methods(args.methods)
    names = [s.strip() for s in args.scenario.split(",") if s.strip()]
    if not names:
        raise UsageError("--scenario needs at least one name")
    scan_cfg = _scan_config(args)
    _replica_config(args)
    if args.strict_paper_bootstrap:
        log.warning("--strict-paper-bootstrap only affects detect; studies use the scenario total")
    config = _resolve(args)
    scenarios = [load_scenario(n) for n in names]
    rows = []
    for sc in scenarios:
        log.info("scenario %s: %d studies, B=%d", sc.name, args.studies, args.replicas)
        reports = compare_methods(sc, methods, args.studies, args.replicas, args.seed,
                                  args.alpha, scan_config=scan_cfg, workers=args.workers)
        for m in methods:
            rows.append(reports[m].row())
            log.info("  %s power %.4f", m, reports[m].power)
    path = Path(args.out)
    _write_rows(path, ["scenario", "method", "power", "sensitivity", "ppv", "N", "B", "seed"],
                rows, config)
    return path


def run_null_study(args) -> Path:
    methods = _methods(args.methods)
    scan_cfg = _scan_config(args)
    _replica_config(args)
    if args.strict_paper_bootstrap:
        log.warning("--strict-paper-bootstrap only affects detect; studies use the fixed total")
    if not 0 <= args.zeros < 203 or args.cases < 1:
        raise UsageError("--zeros must lie in [0, 203) and --cases must be positive")
    config = _resolve(args)
    reports = compare_type_i(methods, args.studies, args.replicas, args.seed, args.alpha,
                             args.zeros, args.cases, scan_config=scan_cfg, workers=args.workers)
    rows = [reports[m].row() for m in methods]
    for r in rows:
        log.info("%s rejection rate %.4f", r["method"], r["rejection_rate"])
    path = Path(args.out)
    _write_rows(path, ["method", "rejection_rate", "N", "B", "seed", "alpha"], rows, config)
    return path


COMMANDS = {"detect": run_detect, "simulate": run_simulate, "null-study": run_null_study}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="zipscan: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "studies", 1) < 1:
            raise UsageError("--studies must be at least 1")
        path = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"zipscan: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        print(f"zipscan: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DegenerateDataError as exc:
        print(f"zipscan: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ReplicaError as exc:
        print(f"zipscan: replica failure: {exc}", file=sys.stderr)
        return EXIT_REPLICA
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
