#!/usr/bin/python3
"""
Run a configuration over its dataset and write the registered map as an
.xyz point file (x y z per line, world frame), e.g. for viewing in CloudCompare.
"""
import argparse
import os
import sys

import numpy as np

# Our modules are in the parent directory
# pylint: disable=wrong-import-position
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import config
import odometry
from simulator import PlanarWorld

parser = argparse.ArgumentParser(description="Export the map built by a filter run")
parser.add_argument("-c", "--config", type=str, required=True, help="Run config (YAML)", metavar="")
parser.add_argument("-o", "--output", type=str, default="map.xyz", help="Output file. Default: map.xyz", metavar="")
parser.add_argument("-w", "--world-error", action="store_true", help="Also print the distance of map points to the true world")


def print_progress(text: str, value: int, total: int):
    print(f"\r[{round(100 * value / max(total, 1))}%] {text}", end="\r")


if __name__ == "__main__":
    args = parser.parse_args()
    run_config = config.load_run_config(args.config)
    result = odometry.run(run_config, progress=print_progress)
    points = result.map.points
    np.savetxt(args.output, points, fmt="%.6f", delimiter=" ")
    print(f"\nWrote {points.shape[0]} map points to {args.output} ({result.map.rebuilds} tree rebuilds)")

    if args.world_error:
        world: PlanarWorld = config.load_simulation_spec(os.path.join(run_config.dataset, "meta.yaml")).world
        distances = world.distance(points)
        print(f"Distance to the true world: median {np.median(distances):.4f} m, max {np.max(distances):.4f} m")
