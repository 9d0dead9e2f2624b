"""Command-line entry point: ``adcs-sim run | tle parse | report | stars``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .mission import (ConfigError, load_config, read_csv, run_scenario, summary_report, write_outputs)
from .orbit import TleError, elements_from_tle, read_tle_file
from .sensing import StarCatalog, star_visibility_probability

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REQUIREMENT_FAILED = 2


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.duration is not None:
        cfg.duration_s = args.duration
    out_dir = Path(args.out) if args.out else cfg.resolve(cfg.output.dir)
    series, summary = run_scenario(cfg, progress=args.verbose)
    csv_path, json_path = write_outputs(series, summary, out_dir)
    print(json.dumps(summary["requirements"], indent=2))
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK if summary["all_blocking_pass"] else EXIT_REQUIREMENT_FAILED


def _cmd_tle_parse(args) -> int:
    for tle in read_tle_file(args.file):
        el = elements_from_tle(tle)
        record = {
            "name": tle.name,
            "catalog_number": tle.catalog_number,
            "epoch": tle.epoch.isoformat(),
            "elements": dataclasses.asdict(el),
            "period_min": el.period / 60.0,
            "perigee_altitude_km": el.perigee_altitude,
            "apogee_altitude_km": el.apogee_altitude,
        }
        print(json.dumps(record, indent=2))
    return EXIT_OK


def _cmd_report(args) -> int:
    out = Path(args.out_dir)
    summary = summary_report(read_csv(out / "timeseries.csv"))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary["requirements"], indent=2))
    return EXIT_OK if summary["all_blocking_pass"] else EXIT_REQUIREMENT_FAILED


def _cmd_stars(args) -> int:
    catalog = StarCatalog.from_csv(args.catalog) if args.catalog else StarCatalog.default()
    p = star_visibility_probability(catalog, args.fov, args.min_stars, args.samples, args.seed)
    print(f"{len(catalog)} stars, FOV half-angle {args.fov} deg: "
          f"P(>= {args.min_stars} in view) = {p:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adcs-sim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log mode transitions and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("--config", required=True, help="scenario JSON file")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out", help="output directory (default: the scenario's output.dir)")
    run.add_argument("--duration", type=float, help="override the simulated duration [s]")
    run.set_defaults(func=_cmd_run)

    tle = sub.add_parser("tle", help="two-line element utilities")
    tle_sub = tle.add_subparsers(dest="tle_command", required=True)
    parse = tle_sub.add_parser("parse", help="parse a TLE file and print its elements")
    parse.add_argument("file")
    parse.set_defaults(func=_cmd_tle_parse)

    report = sub.add_parser("report", help="recompute the summary from a run's CSV")
    report.add_argument("out_dir")
    report.set_defaults(func=_cmd_report)

    stars = sub.add_parser("stars", help="star tracker visibility statistics for a catalog")
    stars.add_argument("--catalog", help="catalog CSV (default: packaged catalog)")
    stars.add_argument("--fov", type=float, default=90.0, help="FOV half-angle [deg]")
    stars.add_argument("--min-stars", type=int, default=4)
    stars.add_argument("--samples", type=int, default=20000)
    stars.add_argument("--seed", type=int, default=0)
    stars.set_defaults(func=_cmd_stars)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors must not look like a requirement failure
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TleError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # simulation failures still map to the error exit code
        logging.getLogger("adcs_sim").exception("simulation failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
