#!/usr/bin/python3
"""
Monte Carlo consistency study. Every repetition simulates a fresh dataset
and draws the initial errors from the filter's own initial covariance, then
reports the NEES band fraction, ATE and gyro bias error per run plus the
band fraction of the NEES averaged over all runs.
"""
import argparse
import concurrent.futures
import csv
import os
import sys
import tempfile

import numpy as np

# Our modules are in the parent directory
# pylint: disable=wrong-import-position
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import config
import dataset
import odometry
import simulator
from metrics import average_nees_band_fraction

parser = argparse.ArgumentParser(description="Monte Carlo NEES study")
parser.add_argument("-s", "--spec", type=str, required=True, help="Simulation spec (YAML)", metavar="")
parser.add_argument("-c", "--config", type=str, action="append", required=True, help="Run config (YAML); repeat to study several filters", metavar="")
parser.add_argument("-n", "--runs", type=int, default=50, help="Repetitions. Default: 50", metavar="")
parser.add_argument("-t", "--threads", type=int, default=os.cpu_count(), help="Worker processes. Default is all.", metavar="")
parser.add_argument("-o", "--output", type=str, default="monte_carlo.csv", help="Write per-run results here. Default: monte_carlo.csv", metavar="")
parser.add_argument("--seed", type=int, default=1000, help="Seed of the first repetition. Default: 1000", metavar="")


def sampled_config(config_path: str, data_dir: str, seed: int) -> config.RunConfig:
    """The configuration with its initial errors replaced by draws from N(0, sigma^2)."""
    doc = config.read_yaml(config_path)
    doc["dataset"] = data_dir
    doc["seed"] = seed
    template = config.parse_run_config(doc, os.path.dirname(os.path.abspath(config_path)), config_path)
    sigmas = odometry.initial_sigmas(template)

    rng = np.random.default_rng(seed)
    template.attitude_deg = np.degrees(rng.normal(0.0, sigmas[0:3]))
    template.position_m = rng.normal(0.0, sigmas[6:9])
    template.extrinsic_rotation_deg = np.degrees(rng.normal(0.0, sigmas[18:21]))
    template.extrinsic_translation_m = rng.normal(0.0, sigmas[21:24])
    for name, block in (("attitude_deg", 0), ("position_m", 6), ("extrinsic_rotation_deg", 18), ("extrinsic_translation_m", 21)):
        value = sigmas[block]
        template.initial_sigma[name] = float(np.degrees(value)) if name.endswith("_deg") else float(value)
    return template


def repetition(spec_path: str, config_paths: list[str], seed: int) -> list[dict]:
    spec = config.load_simulation_spec(spec_path)
    with tempfile.TemporaryDirectory() as data_dir:
        dataset.write_dataset(simulator.generate(spec, seed), spec, seed, data_dir)
        data = dataset.Dataset.load(data_dir)
        rows = []
        for config_path in config_paths:
            run_config = sampled_config(config_path, data_dir, seed)
            try:
                result = odometry.run(run_config, data)
            except odometry.FilterDiverged as e:
                print(f"\nRun {seed} ({run_config.name}) diverged: {e}")
                continue
            report = result.report(data)
            rows.append({
                "seed": seed,
                "config": run_config.name,
                "filter": run_config.filter,
                "ate_rmse": report["ate_rmse"],
                "end_to_end": report["end_to_end"],
                "gyro_bias_error": float(np.linalg.norm(report["gyro_bias_error"])),
                "nees_mean": report["nees_mean"],
                "nees_band_fraction": report["nees_band_fraction"],
                "nees": result.nees,
                "dof": result.dof,
            })
        return rows


if __name__ == "__main__":
    args = parser.parse_args()
    seeds = range(args.seed, args.seed + args.runs)
    print(f"Running {args.runs} repetitions of {len(args.config)} configuration(s) on {args.threads} workers")

    results = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=args.threads) as executor:
        tasks = [executor.submit(repetition, args.spec, args.config, seed) for seed in seeds]
        for done, task in enumerate(concurrent.futures.as_completed(tasks), start=1):
            results += task.result()
            print(f"\r[{round(100 * done / len(tasks))}%] {done} of {len(tasks)} repetitions", end="\r")
    results.sort(key=lambda r: (r["seed"], r["config"]))

    columns = ["seed", "config", "filter", "ate_rmse", "end_to_end", "gyro_bias_error", "nees_mean", "nees_band_fraction"]
    with open(args.output, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(results)

    print("\n\nConfig               Runs  Mean band  Averaged-NEES band  Mean ATE (m)")
    for name in sorted({r["config"] for r in results}):
        runs = [r for r in results if r["config"] == name]
        length = min(len(r["nees"]) for r in runs)
        nees_runs = np.array([r["nees"][:length] for r in runs])
        print(f"{name:<20} {len(runs):>5} {np.mean([r['nees_band_fraction'] for r in runs]):>10.2f} "
              f"{average_nees_band_fraction(nees_runs, runs[0]['dof']):>19.2f} {np.mean([r['ate_rmse'] for r in runs]):>13.4f}")
    print(f"\nPer-run results written to {args.output}")
