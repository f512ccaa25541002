"""
Scan-to-map point-to-plane measurements.

For every LiDAR point the five nearest map points are fitted with a plane
and the point-to-plane distance

    h(xi) = n^T (C (C_K p + l) + r - q)

becomes one scalar measurement row.
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

import numpy as np
from scipy.spatial import KDTree

from eqf import FILTER_EKF, FILTER_EQF, STATE_DIM, apply_error
from lie_algebra import Pose, hat
from symmetry import SystemState

logger = logging.getLogger(__name__)

NEIGHBOURS = 5                      # map points per plane
PLANE_DIST_MAX: float = 0.01        # m, cap on the support-point distance to their plane
PLANE_RMS_MAX: float = 0.01         # m
PLANE_NOISE_SCALE: float = 3.0      # support points must lie within this many LiDAR sigmas
PLANE_SIGMA_FLOOR: float = 1e-3     # m, lower bound on the sigma above
PLANARITY_MAX: float = 0.1          # smallest over middle covariance eigenvalue
DEGENERATE_TOLERANCE: float = 1e-12 # two smallest covariance eigenvalues closer than this = line
GATE: float = 1.0                   # m, rows with larger |h| are rejected
VOXEL_SIZE: float = 0.5             # m, map down-sampling cell
REBUILD_RATIO: float = 0.2          # rebuild the tree once pending points exceed this share
POSE_TIME_TOLERANCE: float = 1e-9   # s, slack when checking pose coverage
ROW_VARIANCE_FLOOR: float = 1e-8   # m^2, keeps noise-free rows well conditioned
FD_STEP: float = 1e-6


class MissingPoseCoverage(ValueError):
    """The pose samples do not span the scan interval."""


class InsufficientMap(ValueError):
    """The map holds fewer points than a query needs."""


class DegenerateCloud(ValueError):
    """Support points are (nearly) collinear, no unique plane."""


class GatedOutlier(ValueError):
    """Residual larger than the innovation gate."""


class Scan():
    """
    One LiDAR sweep: start time t (s), period (s), LiDAR-frame points (N, 3)
    and per-point time offsets (N,) within [0, period].
    """
    __slots__ = ("t", "period", "points", "offsets")

    def __init__(self, t: float, period: float, points: np.ndarray, offsets: np.ndarray):
        self.t = float(t)
        self.period = float(period)
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self.offsets = np.asarray(offsets, dtype=float).reshape(-1)

        if self.points.shape[0] != self.offsets.shape[0]:
            raise ValueError(f"Scan has {self.points.shape[0]} points but {self.offsets.shape[0]} time offsets")

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return f"Scan(t={self.t}, period={self.period}, points={len(self)})"

    @property
    def t_end(self) -> float:
        return self.t + self.period


class PoseTrack():
    """
    Time-stamped body poses with geodesic interpolation on SE(3).
    """
    def __init__(self, times: list[float] | np.ndarray | None = None, poses: list[Pose] | None = None):
        self.times = [] if times is None else [float(t) for t in times]
        self.poses = [] if poses is None else list(poses)

    def __len__(self):
        return len(self.times)

    def append(self, t: float, pose: Pose):
        if self.times and t < self.times[-1]:
            raise ValueError(f"Pose time {t} precedes last sample {self.times[-1]}")
        self.times.append(float(t))
        self.poses.append(pose)

    def covers(self, t_start: float, t_end: float) -> bool:
        return bool(self.times) and self.times[0] <= t_start + POSE_TIME_TOLERANCE and self.times[-1] >= t_end - POSE_TIME_TOLERANCE

    def at(self, t: float) -> Pose:
        if not self.covers(t, t):
            span = (self.times[0], self.times[-1]) if self.times else None
            raise MissingPoseCoverage(f"No pose sample around t={t} (track covers {span})")

        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self.times) - 1)
        if i == len(self.times) - 1 or t <= self.times[i]:
            return self.poses[i]

        t0, t1 = self.times[i], self.times[i + 1]
        alpha = (t - t0) / (t1 - t0)
        P0 = self.poses[i]
        return P0 * Pose.exp(alpha * (P0.inverse() * self.poses[i + 1]).log())


def deskew(scan: Scan, track: PoseTrack, extrinsic: Pose) -> Scan:
    """
    Express every point in the LiDAR frame at the end of the scan, using the
    body poses of `track` and the body-to-LiDAR mount `extrinsic`.
    """
    if not track.covers(scan.t, scan.t_end):
        raise MissingPoseCoverage(f"Pose samples do not cover scan [{scan.t}, {scan.t_end}]")

    end_inv = (track.at(scan.t_end) * extrinsic).inverse()
    points = np.empty_like(scan.points)
    for offset in np.unique(scan.offsets):
        mask = scan.offsets == offset
        points[mask] = (end_inv * track.at(scan.t + offset) * extrinsic).transform(scan.points[mask])
    return Scan(scan.t, scan.period, points, np.full(len(scan), scan.period))


class PlaneFit():
    """
    Least-squares plane through support points: unit normal n, centroid q,
    rms and max point distance (m).
    """
    __slots__ = ("n", "q", "rms", "max_distance", "valid")

    def __init__(self, n: np.ndarray, q: np.ndarray, rms: float, max_distance: float, valid: bool):
        self.n = n
        self.q = q
        self.rms = rms
        self.max_distance = max_distance
        self.valid = valid

    def __repr__(self):
        return f"PlaneFit(n={self.n.tolist()}, q={self.q.tolist()}, rms={self.rms}, valid={self.valid})"


def plane_distance_limit(sigma: float = 0.0) -> float:
    """Largest support-point distance a valid plane may have under LiDAR noise sigma (m)."""
    return min(PLANE_NOISE_SCALE * max(sigma, PLANE_SIGMA_FLOOR), PLANE_DIST_MAX)


def fit_plane(points: np.ndarray, origin: np.ndarray | None = None, sigma: float = 0.0) -> PlaneFit:
    """
    Fit a plane through the points by eigen-decomposition of their covariance.
    The normal is the eigenvector of the smallest eigenvalue, oriented
    toward `origin` (the sensor position, default 0).

    The fit is valid when every point lies within `plane_distance_limit(sigma)`
    of the plane and the points are not bent, i.e. the smallest eigenvalue is
    small against the middle one. Neighbourhoods that wrap around a corner
    fail one of the two.
    """
    points = np.asarray(points, dtype=float)
    q = points.mean(axis=0)
    centered = points - q
    eigvals, eigvecs = np.linalg.eigh(centered.T @ centered / points.shape[0])
    if eigvals[1] - eigvals[0] < DEGENERATE_TOLERANCE:
        raise DegenerateCloud(f"Support points are collinear (eigenvalues {eigvals.tolist()})")

    n = eigvecs[:, 0]
    origin = np.zeros(3) if origin is None else origin
    if np.dot(n, origin - q) < 0.0:
        n = -n

    distances = centered @ n
    rms = float(np.sqrt(np.mean(distances ** 2)))
    max_distance = float(np.max(np.abs(distances)))
    planar = max(eigvals[0], 0.0) < PLANARITY_MAX * eigvals[1]
    valid = bool(planar and max_distance < plane_distance_limit(sigma) and rms < PLANE_RMS_MAX)
    return PlaneFit(n, q, rms, max_distance, valid)


class MapIndex():
    """
    World-frame point map with a k-d tree. New points are voxel filtered,
    appended, and searched by brute force until they exceed REBUILD_RATIO
    of the tree size, at which point the tree is rebuilt.
    """
    def __init__(self, voxel_size: float | None = None, rebuild_ratio: float | None = None):
        self.voxel_size = VOXEL_SIZE if voxel_size is None else voxel_size
        self.rebuild_ratio = REBUILD_RATIO if rebuild_ratio is None else rebuild_ratio
        self.points = np.empty((0, 3))
        self.insertions = 0
        self.rebuilds = 0
        self._voxels = set()
        self._tree = None
        self._tree_size = 0

    def __len__(self):
        return self.points.shape[0]

    @property
    def pending(self) -> int:
        return len(self) - self._tree_size

    def _voxel_filter(self, points: np.ndarray) -> np.ndarray:
        if not self.voxel_size:
            return points

        keys = np.floor(points / self.voxel_size).astype(np.int64)
        keep = []
        for i, key in enumerate(map(tuple, keys)):
            if key in self._voxels:
                continue
            self._voxels.add(key)
            keep.append(i)
        return points[keep]

    def rebuild(self):
        self._tree = KDTree(self.points) if len(self) else None
        self._tree_size = len(self)
        self.rebuilds += 1
        logger.debug("Map tree rebuilt with %d points", self._tree_size)

    def insert(self, world_points: np.ndarray) -> int:
        """Add points to the map, return how many survived the voxel filter."""
        world_points = np.asarray(world_points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(world_points)):
            raise ValueError("Map points must be finite")

        new = self._voxel_filter(world_points)
        if new.shape[0]:
            self.points = np.vstack((self.points, new))
            self.insertions += new.shape[0]
        if self.pending > self.rebuild_ratio * self._tree_size:
            self.rebuild()
        return new.shape[0]

    def knn(self, p: np.ndarray, k: int = NEIGHBOURS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Exact k nearest neighbours of p as (points, distances, indices),
        ties broken by insertion order.
        """
        if len(self) < k:
            raise InsufficientMap(f"Map has {len(self)} points, {k} needed")
        p = np.asarray(p, dtype=float)

        candidates = []
        if self._tree_size:
            distances, _ = self._tree.query(p, k=min(k, self._tree_size))
            radius = float(np.max(distances))
            # Everything at the k-th distance is a tie candidate
            candidates.append(np.asarray(self._tree.query_ball_point(p, radius * (1.0 + 1e-9) + 1e-12), dtype=np.int64))
        if self.pending:
            candidates.append(np.arange(self._tree_size, len(self)))

        indices = np.concatenate(candidates)
        distances = np.linalg.norm(self.points[indices] - p, axis=1)
        order = np.lexsort((indices, distances))[:k]
        return self.points[indices[order]], distances[order], indices[order]


def map_insert(index: MapIndex, world_points: np.ndarray) -> MapIndex:
    index.insert(world_points)
    return index


def knn(index: MapIndex, p: np.ndarray, k: int = NEIGHBOURS) -> np.ndarray:
    return index.knn(p, k)[0]


def to_world(xi: SystemState, p: np.ndarray) -> np.ndarray:
    """LiDAR-frame point(s) to world: C (C_K p + l) + r."""
    return xi.T.pose().transform(xi.K.transform(p))


def residual(xi: SystemState, p: np.ndarray, plane: PlaneFit) -> float:
    return float(np.dot(plane.n, to_world(xi, p) - plane.q))


def build_row(xi_hat: SystemState, p: np.ndarray, plane: PlaneFit, kind: str = FILTER_EQF,
              use_printed_extrinsic_row: bool = False, gate: float | None = None) -> tuple[float, np.ndarray]:
    """
    Innovation z = -h(xi_hat) and its 1x24 Jacobian row in the error
    coordinates of the given filter kind.
    """
    if not plane.valid:
        raise ValueError(f"Cannot build a row on an invalid plane: {plane!r}")

    gate = GATE if gate is None else gate
    n = plane.n
    p_body = xi_hat.K.transform(p)
    p_world = xi_hat.T.C @ p_body + xi_hat.T.r
    h = float(np.dot(n, p_world - plane.q))
    if abs(h) > gate:
        raise GatedOutlier(f"Residual {h:.3f} m exceeds gate {gate} m")

    H = np.zeros(STATE_DIM)
    if kind == FILTER_EQF:
        H[0:3] = -n @ hat(p_world)
        H[6:9] = n
        lever = p_world if use_printed_extrinsic_row else p_world - xi_hat.T.r
        H[18:21] = -n @ hat(lever)
        H[21:24] = n
    elif kind == FILTER_EKF:
        C = xi_hat.T.C
        H[0:3] = -n @ C @ hat(p_body)
        H[6:9] = n
        H[18:21] = -n @ C @ xi_hat.K.C @ hat(p)
        H[21:24] = n @ C
    else:
        raise ValueError(f"Unknown filter kind: {kind}")
    return -h, H


def numerical_row(X_hat, p: np.ndarray, plane: PlaneFit, step: float = FD_STEP) -> np.ndarray:
    """Central difference of h(phi(X_hat, chart^-1(eps))) at eps = 0."""
    H = np.zeros(STATE_DIM)
    for j in range(STATE_DIM):
        e = np.zeros(STATE_DIM)
        e[j] = step
        H[j] = (residual(apply_error(X_hat, e), p, plane) - residual(apply_error(X_hat, -e), p, plane)) / (2.0 * step)
    return H


def scan_rows(xi_hat: SystemState, points: np.ndarray, index: MapIndex, lidar_sigma: float, kind: str = FILTER_EQF,
              use_printed_extrinsic_row: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """
    Stack measurement rows for a de-skewed scan (LiDAR-frame points).
    Returns z, H, R = sigma^2 + rms^2 and per-reason rejection counts.
    Rows keep the point order of the scan.
    """
    if len(index) < NEIGHBOURS:
        raise InsufficientMap(f"Map has {len(index)} points, {NEIGHBOURS} needed")

    sensor = to_world(xi_hat, np.zeros(3))
    world = to_world(xi_hat, points)
    z, H, R = [], [], []
    stats = {"accepted": 0, "degenerate": 0, "plane": 0, "gated": 0}
    for p, p_world in zip(points, world):
        try:
            plane = fit_plane(index.knn(p_world)[0], sensor, lidar_sigma)
        except DegenerateCloud:
            stats["degenerate"] += 1
            continue
        if not plane.valid:
            stats["plane"] += 1
            continue
        try:
            z_j, H_j = build_row(xi_hat, p, plane, kind, use_printed_extrinsic_row)
        except GatedOutlier:
            stats["gated"] += 1
            continue

        z.append(z_j)
        H.append(H_j)
        R.append(max(lidar_sigma ** 2 + plane.rms ** 2, ROW_VARIANCE_FLOOR))
        stats["accepted"] += 1

    logger.debug("Scan rows: %s", stats)
    if not z:
        return np.zeros(0), np.zeros((0, STATE_DIM)), np.zeros(0), stats
    return np.array(z), np.array(H), np.array(R), stats
