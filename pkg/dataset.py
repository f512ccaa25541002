"""
On-disk dataset and trajectory formats.

A dataset directory holds
    imu.csv             t,wx,wy,wz,ax,ay,az (s, rad/s, m/s^2)
    truth.csv           t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz
    scans/NNNNNN.csv    t_offset,x,y,z (LiDAR frame), scan k starts at k / lidar_rate
    meta.yaml           generating spec, seed and counts

Estimated trajectories (est.csv) use the truth columns followed by the
virtual velocity bias, extrinsic and gyro bias sigmas.
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
import logging
import os
from typing import Callable

import numpy as np
import yaml

from config import ConfigError, parse_simulation_spec, simulation_spec_to_dict
from lie_algebra import ExtendedPose, Pose, so3_exp, so3_log
from measurement import Scan
from simulator import (SimulatedData, SimulationSpec, quaternion_to_rotation,
                       rotation_to_quaternion)
from symmetry import SystemState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

IMU_COLUMNS = ("t", "wx", "wy", "wz", "ax", "ay", "az")
TRUTH_COLUMNS = ("t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "bgx", "bgy", "bgz", "bax", "bay", "baz")
EST_EXTRA_COLUMNS = ("bmx", "bmy", "bmz", "kqw", "kqx", "kqy", "kqz", "klx", "kly", "klz",
                     "sigma_bgx", "sigma_bgy", "sigma_bgz")
EST_COLUMNS = TRUTH_COLUMNS + EST_EXTRA_COLUMNS
SCAN_COLUMNS = ("t_offset", "x", "y", "z")

IMU_FILE = "imu.csv"
TRUTH_FILE = "truth.csv"
META_FILE = "meta.yaml"
SCAN_DIR = "scans"

NUMBER_FORMAT = "%.9f"      # fixed format keeps repeated runs byte-identical
CLOCK_TOLERANCE: float = 1e-6   # s, IMU sample k must sit at k / imu_rate


class DatasetCorrupt(ValueError):
    """A dataset file is missing columns, rows or has malformed numbers."""


class IoError(OSError):
    """Reading or writing a dataset or report failed."""


class MismatchedDataset(ValueError):
    """Runs that should share a dataset do not."""


def scan_file_name(index: int) -> str:
    return f"{index:06d}.csv"


def write_csv(path: str, columns: tuple[str, ...], rows: np.ndarray):
    rows = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(",".join(columns) + "\n")
            np.savetxt(f, rows, fmt=NUMBER_FORMAT, delimiter=",")
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e


def read_csv(path: str, columns: tuple[str, ...], allow_extra: bool = False) -> np.ndarray:
    """
    Read a headed CSV file into an (N, len(columns)) array. The header must
    start with `columns`; with allow_extra further columns are dropped.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}") from e

    if not lines:
        raise DatasetCorrupt(f"{path} is empty, expected header {','.join(columns)}")
    header = tuple(c.strip() for c in lines[0].split(","))
    if header[:len(columns)] != columns or (len(header) != len(columns) and not allow_extra):
        raise DatasetCorrupt(f"{path} has header {','.join(header)}, expected {','.join(columns)}")

    body = [line for line in lines[1:] if line.strip()]
    if not body:
        return np.zeros((0, len(columns)))
    try:
        data = np.loadtxt(body, delimiter=",", ndmin=2)
    except ValueError as e:
        raise DatasetCorrupt(f"Malformed numbers in {path}: {e}") from e

    if data.shape[1] != len(header):
        raise DatasetCorrupt(f"{path} rows have {data.shape[1]} values for {len(header)} columns")
    if not np.all(np.isfinite(data)):
        raise DatasetCorrupt(f"{path} contains non-finite values")
    return data[:, 0:len(columns)]


def write_yaml(path: str, doc: dict):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            yaml.safe_dump(doc, f, sort_keys=True, default_flow_style=None)
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e


def write_dataset(data: SimulatedData, spec: SimulationSpec, seed: int, out_dir: str,
                  progress: Callable[[str, int, int], None] | None = None):
    try:
        os.makedirs(os.path.join(out_dir, SCAN_DIR), exist_ok=True)
    except OSError as e:
        raise IoError(f"Cannot create dataset directory {out_dir}: {e}") from e

    write_csv(os.path.join(out_dir, IMU_FILE), IMU_COLUMNS, data.imu)
    write_csv(os.path.join(out_dir, TRUTH_FILE), TRUTH_COLUMNS, data.truth)
    for i, scan in enumerate(data.scans):
        if progress:
            progress("Writing scans", i, len(data.scans))
        write_csv(os.path.join(out_dir, SCAN_DIR, scan_file_name(i)), SCAN_COLUMNS,
                  np.column_stack((scan.offsets, scan.points)))

    write_yaml(os.path.join(out_dir, META_FILE), {
        "format": FORMAT_VERSION,
        "seed": seed,
        "imu_count": int(data.imu.shape[0]),
        "scan_count": len(data.scans),
        "spec": simulation_spec_to_dict(spec),
    })
    logger.info("Wrote dataset %s: %d IMU samples, %d scans", out_dir, data.imu.shape[0], len(data.scans))


def _interpolate_rotation(C0: np.ndarray, C1: np.ndarray, alpha: float) -> np.ndarray:
    return C0 @ so3_exp(alpha * so3_log(C0.T @ C1))


class Dataset():
    """A dataset loaded from disk."""
    def __init__(self, path: str, spec: SimulationSpec, meta: dict, imu: np.ndarray, truth: np.ndarray,
                 scans: list[Scan]):
        self.path = path
        self.spec = spec
        self.meta = meta
        self.imu = imu
        self.truth = truth
        self.scans = scans

    def __repr__(self):
        return f"Dataset(path={self.path}, imu={self.imu.shape[0]}, scans={len(self.scans)})"

    @property
    def duration(self) -> float:
        return self.spec.trajectory.duration

    @property
    def imu_rate(self) -> float:
        return self.spec.rig.imu_rate

    @property
    def gravity(self) -> np.ndarray:
        return self.spec.rig.gravity

    @property
    def extrinsic(self) -> Pose:
        return self.spec.rig.extrinsic

    @staticmethod
    def load(path: str) -> "Dataset":
        meta_path = os.path.join(path, META_FILE)
        if not os.path.isdir(path):
            raise IoError(f"Dataset directory does not exist: {path}")
        try:
            with open(meta_path, "r", encoding="utf-8") as f:
                meta = yaml.safe_load(f)
        except OSError as e:
            raise IoError(f"Cannot read {meta_path}: {e}") from e
        except yaml.YAMLError as e:
            raise DatasetCorrupt(f"Invalid YAML in {meta_path}: {e}") from e
        if not isinstance(meta, dict) or "spec" not in meta:
            raise DatasetCorrupt(f"{meta_path} has no 'spec' section")
        try:
            spec = parse_simulation_spec(meta["spec"])
        except ConfigError as e:
            raise DatasetCorrupt(f"Bad spec in {meta_path}: {e}") from e

        imu = read_csv(os.path.join(path, IMU_FILE), IMU_COLUMNS)
        truth = read_csv(os.path.join(path, TRUTH_FILE), TRUTH_COLUMNS)
        if imu.shape[0] != meta.get("imu_count", imu.shape[0]) or truth.shape[0] != imu.shape[0] + 1:
            raise DatasetCorrupt(f"{path}: {imu.shape[0]} IMU rows and {truth.shape[0]} truth rows do not match meta")
        if imu.shape[0] and np.any(np.diff(imu[:, 0]) <= 0.0):
            raise DatasetCorrupt(f"{path}: IMU timestamps are not strictly increasing")
        clock = np.arange(imu.shape[0]) / spec.rig.imu_rate
        off_clock = np.flatnonzero(np.abs(imu[:, 0] - clock) > CLOCK_TOLERANCE)
        if off_clock.size:
            k = int(off_clock[0])
            raise DatasetCorrupt(f"{path}: IMU sample {k} at t={imu[k, 0]} is off the {spec.rig.imu_rate} Hz clock "
                                 f"(expected {clock[k]})")

        period = 1.0 / spec.rig.lidar_rate
        scans = []
        for k in range(int(meta.get("scan_count", 0))):
            rows = read_csv(os.path.join(path, SCAN_DIR, scan_file_name(k)), SCAN_COLUMNS)
            if rows.shape[0] and (rows[:, 0].min() < -1e-9 or rows[:, 0].max() > period + 1e-9):
                raise DatasetCorrupt(f"Scan {k} of {path} has time offsets outside [0, {period}]")
            scans.append(Scan(k * period, period, rows[:, 1:4], rows[:, 0]))

        logger.info("Loaded dataset %s: %d IMU samples, %d scans", path, imu.shape[0], len(scans))
        return Dataset(path, spec, meta, imu, truth, scans)

    def truth_row(self, t: float) -> np.ndarray:
        """Truth row at t, linear in position, velocity and bias, geodesic in attitude."""
        times = self.truth[:, 0]
        if not times[0] - 1e-9 <= t <= times[-1] + 1e-9:
            raise ValueError(f"t={t} outside the truth span [{times[0]}, {times[-1]}]")
        i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        t0, t1 = times[i], times[i + 1]
        alpha = float(np.clip((t - t0) / (t1 - t0), 0.0, 1.0))

        row = (1.0 - alpha) * self.truth[i] + alpha * self.truth[i + 1]
        C = _interpolate_rotation(quaternion_to_rotation(self.truth[i, 4:8]), quaternion_to_rotation(self.truth[i + 1, 4:8]), alpha)
        row[4:8] = rotation_to_quaternion(C)
        row[0] = t
        return row

    def truth_state(self, t: float) -> SystemState:
        """Full true state at t; the virtual velocity bias is zero."""
        row = self.truth_row(t)
        T = ExtendedPose(quaternion_to_rotation(row[4:8]), row[8:11], row[1:4])
        return SystemState(T, np.concatenate((row[11:17], np.zeros(3))), self.extrinsic)


def state_row(t: float, xi: SystemState, sigma_bg: np.ndarray) -> np.ndarray:
    """One est.csv row."""
    return np.concatenate((
        [t], xi.T.r, rotation_to_quaternion(xi.T.C), xi.T.v, xi.b[0:6],
        xi.b[6:9], rotation_to_quaternion(xi.K.C), xi.K.l, sigma_bg,
    ))


def write_trajectory(path: str, rows: np.ndarray):
    write_csv(path, EST_COLUMNS, rows)


def read_trajectory(path: str) -> np.ndarray:
    """Trajectory with the mandatory columns, extra columns kept when present."""
    try:
        return read_csv(path, EST_COLUMNS)
    except DatasetCorrupt:
        return read_csv(path, TRUTH_COLUMNS, allow_extra=True)


def write_report(path: str, metrics: dict, rows: dict, config: dict):
    """report.yaml: metrics, measurement row counts and the run configuration."""
    write_yaml(path, {"metrics": metrics, "rows": rows, "config": config})


def read_report(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise DatasetCorrupt(f"Invalid YAML in {path}: {e}") from e
    if not isinstance(doc, dict) or "metrics" not in doc:
        raise DatasetCorrupt(f"{path} is not a run report")
    return doc
