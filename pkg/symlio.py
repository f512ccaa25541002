#!/usr/bin/python3
"""
Command line front end of the symmetry-based LiDAR-inertial odometry toolkit.

    simulate    generate a synthetic dataset from a YAML spec
    run         run a filter over a dataset and write est.csv plus a report
    verify      run the property suite (group laws, lift, Jacobians)
    compare     run several configurations over one dataset side by side

Exit codes: 0 success, 1 failed check or diverged filter, 2 I/O or config error.

See odometry.py for the filter loop itself.
"""
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program. If not, see <http://www.gnu.org/licenses/>.
#
# Copyright (C) 2025 symlio contributors
#
import argparse
import concurrent.futures
import csv
import json
import logging
import os
import sys

import numpy as np

import config
import dataset
import odometry
import plot
import simulator
import verify
from config import ConfigError
from dataset import DatasetCorrupt, IoError, MismatchedDataset
from odometry import FilterDiverged

MAJOR = 0 # Filter or file format changes
MINOR = 1 # New commands and metrics
PATCH = 0 # Fixes

VERSION = f"v{MAJOR}.{MINOR}.{PATCH}"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2

EST_FILE = "est.csv"
REPORT_FILE = "report.yaml"
PLOT_FILE = "trajectory.png"
MAP_FILE = "map.xyz"

logger = logging.getLogger("symlio")


def print_progress(text: str, value: int, total: int):
    """Progress callback; only drawn on an interactive terminal."""
    if sys.stderr.isatty():
        print(f"\r[{round(100 * value / max(total, 1))}%] {text}          ", end="\r", file=sys.stderr)


def _makedirs(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise IoError(f"Cannot create output directory {path}: {e}") from e


def cmd_simulate(args) -> int:
    spec = config.load_simulation_spec(args.spec)
    data = simulator.generate(spec, args.seed, print_progress)
    dataset.write_dataset(data, spec, args.seed, args.out, print_progress)
    print(f"Wrote {data.imu.shape[0]} IMU samples and {len(data.scans)} scans to {args.out}")
    return EXIT_OK


def write_map(path: str, points: np.ndarray):
    try:
        np.savetxt(path, points, fmt="%.6f", delimiter=" ")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e


def cmd_run(args) -> int:
    run_config = config.load_run_config(args.config)
    data = dataset.Dataset.load(run_config.dataset)
    result = odometry.run(run_config, data, print_progress)
    report = result.report(data, timing=args.timing)

    _makedirs(args.out)
    dataset.write_trajectory(os.path.join(args.out, EST_FILE), result.est)
    dataset.write_report(os.path.join(args.out, REPORT_FILE), report.as_dict(), dict(result.stats), run_config.as_dict())
    truth_xy = np.array([data.truth_row(t)[1:3] for t in np.linspace(0.0, result.est[-1, 0], 2 * len(result.est))])
    plot.save_trajectory_plot(os.path.join(args.out, PLOT_FILE), truth_xy, result.est[:, 1:3])
    if args.save_map:
        write_map(os.path.join(args.out, MAP_FILE), result.map.points)
    logger.info("Run outputs written to %s", args.out)

    print(f"{run_config.filter.upper()} over {len(data.scans)} scans")
    print(f"  ATE RMSE        {report['ate_rmse']:.4f} m")
    print(f"  End-to-end      {report['end_to_end']:.4f} m")
    print(f"  NEES mean       {report['nees_mean']:.2f} ({report['nees_band_fraction']:.0%} inside the band)")
    if args.timing:
        print(f"  Time per scan   {report['ms_per_scan']:.1f} ms")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_checks(args.filter, args.inject_fault, progress=print_progress)
    if not results:
        print(f"No check matches '{args.filter}'. Available: {', '.join(verify.check_names())}")
        return EXIT_FAILED

    print(f"{'Check':<22} {'Cases':>6} {'Residual':>11} {'Tolerance':>10}  Result")
    for r in results:
        print(f"{r.name:<22} {r.cases:>6} {r.residual:>11.3e} {r.tolerance:>10.1e}  {'PASS' if r.ok else 'FAIL'}")

    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"\n{len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
        return EXIT_FAILED
    print(f"\nAll {len(results)} checks passed.")
    return EXIT_OK


def compare_row(config_path: str) -> dict:
    """Run one configuration; module level so it can be sent to a worker process."""
    run_config = config.load_run_config(config_path)
    data = dataset.Dataset.load(run_config.dataset)
    report = odometry.run(run_config, data).report(data)
    return {"config": run_config.name, **report.table_row()}


def write_table(path: str, rows: list[dict]):
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            if path.lower().endswith(".json"):
                json.dump(rows, f, indent=2)
                f.write("\n")
            else:
                writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator="\n")
                writer.writeheader()
                writer.writerows(rows)
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e


def cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise ConfigError("compare needs at least two --config files")
    configs = [config.load_run_config(path) for path in args.config]
    datasets = {os.path.realpath(c.dataset) for c in configs}
    if len(datasets) > 1:
        raise MismatchedDataset(f"Configurations use different datasets: {', '.join(sorted(datasets))}")

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as executor:
            rows = list(executor.map(compare_row, args.config))
    else:
        rows = [compare_row(path) for path in args.config]

    write_table(args.out, rows)
    print(f"{'Config':<20} {'Filter':<6} {'ATE (m)':>9} {'E2E (m)':>9} {'NEES band':>10}")
    for row in rows:
        print(f"{row['config']:<20} {row['filter']:<6} {row['ate_rmse']:>9.4f} {row['end_to_end']:>9.4f} {row['nees_band_fraction']:>10.0%}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symlio", description="Equivariant LiDAR-inertial odometry toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="Show debug logging")
    parser.add_argument("--version", action="version", version=VERSION)
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Generate a synthetic dataset")
    simulate.add_argument("--spec", required=True, help="Simulation spec (YAML), or a dataset's meta.yaml", metavar="FILE")
    simulate.add_argument("--out", required=True, help="Dataset directory to write", metavar="DIR")
    simulate.add_argument("--seed", type=int, default=0, help="Random seed. Default: 0", metavar="N")
    simulate.set_defaults(func=cmd_simulate)

    run = commands.add_parser("run", help="Run a filter over a dataset")
    run.add_argument("--config", required=True, help="Run configuration (YAML)", metavar="FILE")
    run.add_argument("--out", required=True, help="Directory for est.csv, report.yaml and trajectory.png", metavar="DIR")
    run.add_argument("--timing", action="store_true", help="Report wall-clock time per scan")
    run.add_argument("--save-map", action="store_true", help="Also write the registered map as map.xyz")
    run.set_defaults(func=cmd_run)

    check = commands.add_parser("verify", help="Run the property suite")
    check.add_argument("--filter", default=None, help="Only run checks whose name contains this text", metavar="NAME")
    check.add_argument("--inject-fault", default=None, choices=sorted(verify.FAULTS), help="Deliberately break a formula (the suite must fail)")
    check.set_defaults(func=cmd_verify)

    compare = commands.add_parser("compare", help="Compare runs over one dataset")
    compare.add_argument("--config", action="append", required=True, help="Run configuration; repeat for each run", metavar="FILE")
    compare.add_argument("--out", required=True, help="Table to write (.csv or .json)", metavar="FILE")
    compare.add_argument("--jobs", type=int, default=1, help="Parallel worker processes. Default: 1", metavar="N")
    compare.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args)
    except FilterDiverged as e:
        print(f"Filter diverged: {e}", file=sys.stderr)
        return EXIT_FAILED
    except (ConfigError, DatasetCorrupt, MismatchedDataset, IoError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
