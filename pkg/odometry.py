"""
LiDAR-inertial odometry loop over a dataset.

For every scan: propagate through the IMU samples up to the scan end,
de-skew the points with the predicted poses, run the iterated scan-to-map
update and add the registered scan to the map.
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
import time
from typing import Callable

import numpy as np

import ekf
import eqf
from config import RunConfig
from dataset import Dataset, state_row
from eqf import FILTER_EKF, FILTER_EQF, STATE_DIM, FilterState
from lie_algebra import ExtendedPose, Pose, so3_exp
from measurement import InsufficientMap, MapIndex, PoseTrack, deskew, scan_rows, to_world
from metrics import MetricsReport, compute_report, nees
from symmetry import SystemState, transport

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT: float = 100.0     # m, position error that aborts a run
TIME_TOLERANCE: float = 1e-9        # s
JACOBIAN_STEP: float = 1e-6         # central-difference step of coordinate changes

FILTERS = {FILTER_EQF: eqf, FILTER_EKF: ekf}


class FilterDiverged(RuntimeError):
    """The estimate left the plausible region around the truth."""


def perturbation(value: float | np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """An explicit 3-vector as given, a scalar as that length along a random direction."""
    if isinstance(value, np.ndarray):
        return value.astype(float)
    direction = rng.standard_normal(3)
    return float(value) * direction / np.linalg.norm(direction)


def initial_estimate(truth: SystemState, config: RunConfig, rng: np.random.Generator) -> SystemState:
    """Truth moved by the configured perturbations; the bias estimate is taken from the config."""
    dtheta = np.radians(perturbation(config.attitude_deg, rng))
    dr = perturbation(config.position_m, rng)
    dphi = np.radians(perturbation(config.extrinsic_rotation_deg, rng))
    dl = perturbation(config.extrinsic_translation_m, rng)

    T = ExtendedPose(truth.T.C @ so3_exp(dtheta), truth.T.v, truth.T.r + dr)
    K = Pose(truth.K.C @ so3_exp(dphi), truth.K.l + dl)
    return SystemState(T, config.bias.copy(), K)


def initial_sigmas(config: RunConfig) -> np.ndarray:
    """
    One-sigma initial uncertainty per local (EKF) coordinate. A scalar
    perturbation of length m along a random direction has per-axis sigma
    m / sqrt(3); explicit vectors leave the configured sigmas alone.
    """
    s = config.initial_sigma

    def at_least(floor: float, value: float | np.ndarray) -> float:
        if isinstance(value, np.ndarray):
            return floor
        return max(floor, float(value) / np.sqrt(3.0))

    sigmas = np.concatenate((
        np.full(3, np.radians(at_least(s["attitude_deg"], config.attitude_deg))),
        np.full(3, s["velocity_m_s"]),
        np.full(3, at_least(s["position_m"], config.position_m)),
        np.full(3, s["gyro_bias"]),
        np.full(3, s["accel_bias"]),
        np.full(3, s["velocity_bias"]),
        np.full(3, np.radians(at_least(s["extrinsic_rotation_deg"], config.extrinsic_rotation_deg))),
        np.full(3, at_least(s["extrinsic_translation_m"], config.extrinsic_translation_m)),
    ))
    if config.gravity_estimation:
        sigmas = np.concatenate((sigmas, np.full(2, np.radians(s["gravity_deg"]))))
    return sigmas


def _jacobian(fn: Callable[[np.ndarray], np.ndarray], step: float = JACOBIAN_STEP) -> np.ndarray:
    J = np.zeros((STATE_DIM, STATE_DIM))
    for j in range(STATE_DIM):
        e = np.zeros(STATE_DIM)
        e[j] = step
        J[:, j] = (fn(e) - fn(-e)) / (2.0 * step)
    return J


def _embed(J: np.ndarray, dim: int) -> np.ndarray:
    """Gravity coordinates are shared by both filters."""
    full = np.eye(dim)
    full[0:STATE_DIM, 0:STATE_DIM] = J
    return full


def local_to_eqf_jacobian(xi_hat: SystemState) -> np.ndarray:
    """d eps_eqf / d delta_ekf at the estimate."""
    X_hat = transport(SystemState.origin(), xi_hat)
    return _jacobian(lambda d: eqf.chart(eqf.error_state(X_hat, ekf.retract_state(xi_hat, d))))


def local_covariance(state: FilterState) -> np.ndarray:
    """Covariance in local (EKF) coordinates, whichever filter produced it."""
    if state.kind == FILTER_EKF:
        return state.Sigma
    xi_hat = state.xi_hat()
    J = _jacobian(lambda eps: ekf.local_coordinates(xi_hat, eqf.apply_error(state.X, eps)))
    J = _embed(J, state.dim)
    return J @ state.Sigma @ J.T


def start_filter(config: RunConfig, truth: SystemState, gravity: np.ndarray, t: float = 0.0) -> FilterState:
    rng = np.random.default_rng(config.seed)
    xi_0 = initial_estimate(truth, config, rng)
    Sigma = np.diag(initial_sigmas(config) ** 2)
    dim = Sigma.shape[0]
    if config.filter == FILTER_EQF:
        J = _embed(local_to_eqf_jacobian(xi_0), dim)
        Sigma = J @ Sigma @ J.T
        Sigma = 0.5 * (Sigma + Sigma.T)
    return FILTERS[config.filter].new_filter(xi_0, Sigma, gravity, t, config.gravity_estimation)


class ImuStream():
    """
    IMU samples at t_k = k / rate, the clock Dataset.load() enforces on the
    t column. Between t_k and t_k+1 the input is the mean of the two samples
    (the last interval uses the last sample).
    """
    def __init__(self, imu: np.ndarray, rate: float):
        self.imu = imu
        self.rate = rate

    def __len__(self):
        return self.imu.shape[0]

    def interval(self, t: float) -> tuple[int, float]:
        """Index of the interval containing t and the time it ends."""
        k = int(np.floor(t * self.rate + TIME_TOLERANCE))
        k = min(max(k, 0), len(self) - 1)
        return k, (k + 1) / self.rate

    def input(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        sample = self.imu[k, 1:7] if k + 1 >= len(self) else 0.5 * (self.imu[k, 1:7] + self.imu[k + 1, 1:7])
        return sample[0:3], sample[3:6]


class OdometryResult():
    """
    Output of a run: est.csv rows (initial state plus one per scan), NEES at
    every scan, row rejection counts, the map and the final filter state.
    """
    def __init__(self, config: RunConfig, est: np.ndarray, nees_values: np.ndarray, stats: dict, index: MapIndex,
                 state: FilterState, ms_per_scan: float):
        self.config = config
        self.est = est
        self.nees = nees_values
        self.stats = stats
        self.map = index
        self.state = state
        self.ms_per_scan = ms_per_scan

    def __repr__(self):
        return f"OdometryResult(filter={self.config.filter}, scans={self.est.shape[0] - 1})"

    @property
    def dof(self) -> int:
        return self.state.dim

    def report(self, dataset: Dataset, timing: bool = False) -> MetricsReport:
        truth_rows = np.array([dataset.truth_row(t) for t in self.est[:, 0]])
        return compute_report(self.config.filter, self.est, truth_rows, dataset.extrinsic, self.nees, self.dof,
                              self.ms_per_scan if timing else None)


class Odometry():
    """Filter plus map, fed scan by scan."""
    def __init__(self, config: RunConfig, dataset: Dataset, use_printed_extrinsic_block: bool = False,
                 use_printed_extrinsic_row: bool = False, exact_discretization: bool = False):
        self.config = config
        self.dataset = dataset
        self.filter = FILTERS[config.filter]
        self.imu = ImuStream(dataset.imu, dataset.imu_rate)
        self.use_printed_extrinsic_block = use_printed_extrinsic_block
        self.use_printed_extrinsic_row = use_printed_extrinsic_row
        self.exact_discretization = exact_discretization

        self.state = start_filter(config, dataset.truth_state(0.0), dataset.gravity)
        self.map = MapIndex()
        self.stats = {"accepted": 0, "degenerate": 0, "plane": 0, "gated": 0, "skipped": 0}

    def _step(self, state: FilterState, omega: np.ndarray, acc: np.ndarray, dt: float) -> FilterState:
        if self.config.filter == FILTER_EQF:
            return eqf.propagate(state, omega, acc, dt, self.config.noise, exact_discretization=self.exact_discretization,
                                 use_printed_extrinsic_block=self.use_printed_extrinsic_block)
        return ekf.propagate(state, omega, acc, dt, self.config.noise, exact_discretization=self.exact_discretization)

    def propagate_to(self, t_target: float, track: PoseTrack | None = None):
        """Propagate to exactly t_target, splitting IMU intervals where needed."""
        state = self.state
        while state.t < t_target - TIME_TOLERANCE:
            k, t_next = self.imu.interval(state.t)
            t_step = min(t_next, t_target)
            if t_step - state.t <= TIME_TOLERANCE:
                # Past the last sample, keep integrating with it
                t_step = t_target
            omega, acc = self.imu.input(k)
            state = self._step(state, omega, acc, t_step - state.t).replace(t=t_step)
            if track is not None:
                track.append(state.t, state.xi_hat().T.pose())
        self.state = state.replace(t=t_target)

    def _measure(self, points: np.ndarray, first: tuple) -> Callable:
        cache = [first]

        def measure(xi: SystemState):
            rows = cache.pop() if cache else scan_rows(xi, points, self.map, self.config.noise.lidar, self.config.filter,
                                                       self.use_printed_extrinsic_row)
            return rows[0:3]
        return measure

    def process(self, scan):
        """Propagate over the scan, then register it."""
        if scan.t > self.state.t + TIME_TOLERANCE:
            self.propagate_to(scan.t)
        track = PoseTrack([self.state.t], [self.state.xi_hat().T.pose()])
        self.propagate_to(scan.t_end, track)

        xi_hat = self.state.xi_hat()
        points = deskew(scan, track, xi_hat.K).points
        if len(self.map) and len(points):
            try:
                first = scan_rows(xi_hat, points, self.map, self.config.noise.lidar, self.config.filter,
                                  self.use_printed_extrinsic_row)
            except InsufficientMap as e:
                logger.warning("Scan at t=%.3f not registered: %s", scan.t, e)
                first = None

            if first is not None:
                for name in first[3]:
                    self.stats[name] += first[3][name]
                if first[0].size:
                    try:
                        self.state = self.filter.update(self.state, self._measure(points, first), self.config.max_iter)
                    except eqf.SingularInnovation as e:
                        logger.warning("Update skipped at t=%.3f: %s", scan.t_end, e)
                        self.stats["skipped"] += 1
                else:
                    logger.warning("No usable measurement rows at t=%.3f", scan.t_end)
                    self.stats["skipped"] += 1

        if len(points):
            self.map.insert(to_world(self.state.xi_hat(), points))

    def check(self, truth: SystemState):
        xi_hat = self.state.xi_hat()
        error = float(np.linalg.norm(xi_hat.T.r - truth.T.r))
        if not np.isfinite(error) or error > DIVERGENCE_LIMIT:
            logger.error("Filter diverged at t=%.3f: position error %.1f m", self.state.t, error)
            raise FilterDiverged(f"Position error {error:.1f} m at t={self.state.t:.3f} s exceeds {DIVERGENCE_LIMIT} m "
                                 f"(estimate {xi_hat.T.r.tolist()}, truth {truth.T.r.tolist()})")

    def row(self) -> np.ndarray:
        Sigma = local_covariance(self.state)
        sigma_bg = np.sqrt(np.maximum(np.diag(Sigma)[9:12], 0.0))
        return state_row(self.state.t, self.state.xi_hat(), sigma_bg)

    def nees(self, truth: SystemState) -> float:
        eps = self.filter.error_coordinates(self.state, truth, self.dataset.gravity)
        return nees(eps, self.state.Sigma)


def run(config: RunConfig, dataset: Dataset | None = None, progress: Callable[[str, int, int], None] | None = None,
        **options) -> OdometryResult:
    """
    Run the configured filter over its dataset. Keyword options are passed
    to Odometry (printed Jacobian variants, exact discretization).
    """
    dataset = Dataset.load(config.dataset) if dataset is None else dataset
    odometry = Odometry(config, dataset, **options)

    rows = [odometry.row()]
    nees_values = []
    elapsed = 0.0
    for k, scan in enumerate(dataset.scans):
        if progress:
            progress("Processing scans", k, len(dataset.scans))
        start = time.perf_counter()
        odometry.process(scan)
        elapsed += time.perf_counter() - start

        truth = dataset.truth_state(odometry.state.t)
        odometry.check(truth)
        rows.append(odometry.row())
        nees_values.append(odometry.nees(truth))

    ms_per_scan = 1000.0 * elapsed / max(len(dataset.scans), 1)
    logger.info("Run finished: %d scans, %s, map %d points", len(dataset.scans), odometry.stats, len(odometry.map))
    return OdometryResult(config, np.array(rows), np.array(nees_values), odometry.stats, odometry.map, odometry.state,
                          ms_per_scan)
