"""
Synthetic ground truth and sensor data.

Trajectories are analytic (position and ZYX Euler attitude with closed-form
derivatives), so body rates and specific forces are exact:

    a_body = C^T (r'' - g)
    omega  = Rx^T Ry^T (yaw' e_z) + Rx^T (pitch' e_y) + roll' e_x

IMU samples add random-walk biases and white noise, LiDAR scans are ray cast
against a world of bounded rectangles with one pose per scan column.
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
from typing import Callable

import numpy as np
from scipy.spatial.transform import Rotation

from eqf import NoiseConfig
from lie_algebra import ExtendedPose, Pose, hat, normalize_rotation
from measurement import Scan
from symmetry import SystemState

logger = logging.getLogger(__name__)

TRAJECTORY_KINDS = ("static", "circle", "figure8", "sinusoid-aggressive")

STANDARD_GRAVITY: float = 9.81
PARALLEL_RAY_TOLERANCE: float = 1e-12   # |n . d| below this = ray parallel to the plane
VERTICAL_AMPLITUDE: float = 0.2         # m, height oscillation of figure8

# (x, y, width) of the square pillars of the default room
DEFAULT_PILLARS = ((4.0, 4.0, 1.0), (-5.0, 3.0, 1.0), (2.0, -6.0, 1.0))


def euler_to_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def euler_xyz_deg(angles: np.ndarray) -> np.ndarray:
    """Rotation from x-y-z Euler angles in degrees (as used in config files)."""
    return Rotation.from_euler("xyz", np.asarray(angles, dtype=float), degrees=True).as_matrix()


def rotation_to_euler_xyz_deg(C: np.ndarray) -> np.ndarray:
    """Inverse of euler_xyz_deg() away from pitch = +-90 deg."""
    return Rotation.from_matrix(C).as_euler("xyz", degrees=True)


def body_rate(angles: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Body angular velocity of C = Rz(yaw) Ry(pitch) Rx(roll)."""
    _, pitch, roll = angles
    yaw_dot, pitch_dot, roll_dot = rates
    yaw_axis = Rotation.from_euler("YX", [pitch, roll]).inv().apply([0.0, 0.0, yaw_dot])
    pitch_axis = Rotation.from_euler("X", roll).inv().apply([0.0, pitch_dot, 0.0])
    return yaw_axis + pitch_axis + np.array([roll_dot, 0.0, 0.0])


class TrajectorySpec():
    """
    Analytic trajectory. `period` is the lap time for circle/figure8. The
    aggressive profile ignores it: its frequency follows from `radius` (x
    amplitude) and the peak acceleration, its yaw amplitude from the peak rate.
    """
    FIELDS = ("kind", "duration", "radius", "period", "height", "tilt", "peak_rate_deg", "peak_accel_g", "center")

    def __init__(self, kind: str = "circle", duration: float = 60.0, radius: float = 3.0, period: float = 20.0,
                 height: float = 1.5, tilt: float = 0.2, peak_rate_deg: float = 300.0, peak_accel_g: float = 3.0,
                 center: tuple[float, float] = (0.0, 0.0)):
        if kind not in TRAJECTORY_KINDS:
            raise ValueError(f"Unknown trajectory kind '{kind}', expected one of {TRAJECTORY_KINDS}")
        if duration <= 0.0 or period <= 0.0:
            raise ValueError(f"Trajectory duration and period must be positive, got {duration} and {period}")
        if kind != "static" and radius <= 0.0:
            raise ValueError(f"Trajectory radius must be positive, got {radius}")
        self.kind = kind
        self.duration = float(duration)
        self.radius = float(radius)
        self.period = float(period)
        self.height = float(height)
        self.tilt = float(tilt)
        self.peak_rate_deg = float(peak_rate_deg)
        self.peak_accel_g = float(peak_accel_g)
        self.center = (float(center[0]), float(center[1]))

    def __repr__(self):
        return f"TrajectorySpec(kind={self.kind}, duration={self.duration})"

    def as_dict(self) -> dict:
        d = {name: getattr(self, name) for name in self.FIELDS}
        d["center"] = list(self.center)
        return d

    def kinematics(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Position, velocity, acceleration, Euler angles (yaw, pitch, roll) and their rates at t."""
        w = 2.0 * np.pi / self.period
        cx, cy = self.center
        zero = np.zeros(3)

        if self.kind == "static":
            return np.array([cx, cy, self.height]), zero, zero, zero.copy(), zero.copy()

        if self.kind == "circle":
            R = self.radius
            c, s = np.cos(w * t), np.sin(w * t)
            pos = np.array([cx + R * c, cy + R * s, self.height])
            vel = R * w * np.array([-s, c, 0.0])
            acc = -R * w * w * np.array([c, s, 0.0])
            return pos, vel, acc, np.array([w * t + 0.5 * np.pi, 0.0, 0.0]), np.array([w, 0.0, 0.0])

        if self.kind == "figure8":
            R, A, tilt = self.radius, VERTICAL_AMPLITUDE, self.tilt
            s1, c1 = np.sin(w * t), np.cos(w * t)
            s2, c2 = np.sin(2 * w * t), np.cos(2 * w * t)
            s3, c3 = np.sin(3 * w * t), np.cos(3 * w * t)
            pos = np.array([cx + R * s1, cy + 0.5 * R * s2, self.height + A * s1])
            vel = w * np.array([R * c1, R * c2, A * c1])
            acc = -w * w * np.array([R * s1, 2.0 * R * s2, A * s1])
            angles = np.array([0.8 * s1, tilt * s2, tilt * s3])
            rates = w * np.array([0.8 * c1, 2.0 * tilt * c2, 3.0 * tilt * c3])
            return pos, vel, acc, angles, rates

        # sinusoid-aggressive: yaw rate peaks at peak_rate_deg, x acceleration at peak_accel_g
        A = self.radius
        w = np.sqrt(self.peak_accel_g * STANDARD_GRAVITY / A)
        yaw_amplitude = np.radians(self.peak_rate_deg) / w
        tilt = self.tilt
        s1, c1 = np.sin(w * t), np.cos(w * t)
        s2, c2 = np.sin(2 * w * t), np.cos(2 * w * t)
        s3, c3 = np.sin(3 * w * t), np.cos(3 * w * t)
        pos = np.array([cx + A * s1, cy + 0.25 * A * s2, self.height + 0.1 * s3])
        vel = w * np.array([A * c1, 0.5 * A * c2, 0.3 * c3])
        acc = -w * w * np.array([A * s1, A * s2, 0.9 * s3])
        angles = np.array([yaw_amplitude * s1, tilt * s2, tilt * s3])
        rates = w * np.array([yaw_amplitude * c1, 2.0 * tilt * c2, 3.0 * tilt * c3])
        return pos, vel, acc, angles, rates


class TruthSample():
    """Ground truth at one instant: attitude C, velocity v, position r, body rate and specific force."""
    __slots__ = ("t", "C", "v", "r", "omega", "acc")

    def __init__(self, t: float, C: np.ndarray, v: np.ndarray, r: np.ndarray, omega: np.ndarray, acc: np.ndarray):
        self.t = t
        self.C = C
        self.v = v
        self.r = r
        self.omega = omega
        self.acc = acc

    def navigation(self) -> ExtendedPose:
        return ExtendedPose(self.C, self.v, self.r)

    def pose(self) -> Pose:
        return Pose(self.C, self.r)

    def state(self, bias: np.ndarray, extrinsic: Pose) -> SystemState:
        return SystemState(self.navigation(), bias, extrinsic)


def truth_at(spec: TrajectorySpec, t: float, gravity: np.ndarray | None = None) -> TruthSample:
    """Exact kinematics of the trajectory at t, no integration involved."""
    if not -1e-9 <= t <= spec.duration + 1e-9:
        raise ValueError(f"t={t} outside trajectory [0, {spec.duration}]")
    gravity = np.array([0.0, 0.0, -STANDARD_GRAVITY]) if gravity is None else gravity

    pos, vel, acc, angles, rates = spec.kinematics(t)
    C = euler_to_rotation(*angles)
    return TruthSample(t, C, vel, pos, body_rate(angles, rates), C.T @ (acc - gravity))


class Rectangle():
    """Bounded planar patch {corner + a e1 + b e2, a, b in [0, 1]} with orthogonal edges."""
    __slots__ = ("corner", "e1", "e2", "normal")

    def __init__(self, corner: np.ndarray, e1: np.ndarray, e2: np.ndarray):
        self.corner = np.asarray(corner, dtype=float)
        self.e1 = np.asarray(e1, dtype=float)
        self.e2 = np.asarray(e2, dtype=float)
        if abs(np.dot(self.e1, self.e2)) > 1e-9 * np.linalg.norm(self.e1) * np.linalg.norm(self.e2):
            raise ValueError(f"Rectangle edges are not orthogonal: {self.e1.tolist()}, {self.e2.tolist()}")
        n = np.cross(self.e1, self.e2)
        self.normal = n / np.linalg.norm(n)

    def __repr__(self):
        return f"Rectangle(corner={self.corner.tolist()}, e1={self.e1.tolist()}, e2={self.e2.tolist()})"

    def as_dict(self) -> dict:
        return {"corner": self.corner.tolist(), "edge1": self.e1.tolist(), "edge2": self.e2.tolist()}

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance of points (N, 3) to the patch."""
        d = points - self.corner
        a = np.clip(d @ self.e1 / np.dot(self.e1, self.e1), 0.0, 1.0)
        b = np.clip(d @ self.e2 / np.dot(self.e2, self.e2), 0.0, 1.0)
        closest = self.corner + np.outer(a, self.e1) + np.outer(b, self.e2)
        return np.linalg.norm(points - closest, axis=1)


def box_rectangles(lower: np.ndarray, upper: np.ndarray, caps: bool = True) -> list[Rectangle]:
    """Faces of an axis-aligned box; without caps only the four vertical sides."""
    (x0, y0, z0), (x1, y1, z1) = lower, upper
    dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
    faces = [
        Rectangle([x0, y0, z0], [dx, 0, 0], [0, 0, dz]),
        Rectangle([x0, y1, z0], [dx, 0, 0], [0, 0, dz]),
        Rectangle([x0, y0, z0], [0, dy, 0], [0, 0, dz]),
        Rectangle([x1, y0, z0], [0, dy, 0], [0, 0, dz]),
    ]
    if caps:
        faces.append(Rectangle([x0, y0, z0], [dx, 0, 0], [0, dy, 0]))
        faces.append(Rectangle([x0, y0, z1], [dx, 0, 0], [0, dy, 0]))
    return faces


class LidarConfig():
    """Grid scanner: azimuth columns swept over the scan period, fixed elevation rows."""
    FIELDS = ("azimuth_count", "elevation_count", "elevation_min_deg", "elevation_max_deg", "max_range")

    def __init__(self, azimuth_count: int = 36, elevation_count: int = 8, elevation_min_deg: float = -30.0,
                 elevation_max_deg: float = 30.0, max_range: float = 30.0):
        if azimuth_count < 1 or elevation_count < 1 or max_range <= 0.0:
            raise ValueError("LiDAR grid needs at least one ray and a positive range")
        self.azimuth_count = int(azimuth_count)
        self.elevation_count = int(elevation_count)
        self.elevation_min_deg = float(elevation_min_deg)
        self.elevation_max_deg = float(elevation_max_deg)
        self.max_range = float(max_range)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    def directions(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions (N, 3) in the LiDAR frame and the column of each ray."""
        azimuths = 2.0 * np.pi * np.arange(self.azimuth_count) / self.azimuth_count
        if self.elevation_count == 1:
            elevations = np.radians([0.5 * (self.elevation_min_deg + self.elevation_max_deg)])
        else:
            elevations = np.radians(np.linspace(self.elevation_min_deg, self.elevation_max_deg, self.elevation_count))
        az, el = np.meshgrid(azimuths, elevations, indexing="ij")
        dirs = np.stack((np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)), axis=-1).reshape(-1, 3)
        columns = np.repeat(np.arange(self.azimuth_count), elevations.size)
        return dirs, columns


class PlanarWorld():
    """Static environment made of rectangles."""
    def __init__(self, rectangles: list[Rectangle]):
        if not rectangles:
            raise ValueError("World needs at least one rectangle")
        self.rectangles = rectangles
        self._corners = np.array([r.corner for r in rectangles])
        self._e1 = np.array([r.e1 for r in rectangles])
        self._e2 = np.array([r.e2 for r in rectangles])
        self._normals = np.array([r.normal for r in rectangles])

    def __len__(self):
        return len(self.rectangles)

    @staticmethod
    def room(size: tuple[float, float, float] = (20.0, 20.0, 6.0),
             pillars: list[tuple[float, float, float]] | None = None) -> "PlanarWorld":
        """Closed box with its floor at z = 0 centred on the origin, plus square pillars (x, y, width)."""
        lx, ly, lz = size
        rectangles = box_rectangles(np.array([-lx / 2, -ly / 2, 0.0]), np.array([lx / 2, ly / 2, lz]))
        for x, y, width in pillars or []:
            h = width / 2.0
            rectangles += box_rectangles(np.array([x - h, y - h, 0.0]), np.array([x + h, y + h, lz]), caps=False)
        return PlanarWorld(rectangles)

    def raycast(self, origins: np.ndarray, directions: np.ndarray, max_range: float) -> tuple[np.ndarray, np.ndarray]:
        """
        Nearest hit along each ray. Returns ranges (N,) with NaN for misses
        and the index of the rectangle hit (-1 for misses).
        """
        origins = np.broadcast_to(np.asarray(origins, dtype=float), directions.shape)
        denom = directions @ self._normals.T                                    # (N, R)
        parallel = np.abs(denom) < PARALLEL_RAY_TOLERANCE
        offsets = self._corners[None, :, :] - origins[:, None, :]               # (N, R, 3)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.einsum("nrk,rk->nr", offsets, self._normals) / denom
        hits = origins[:, None, :] + s[..., None] * directions[:, None, :]
        local = hits - self._corners[None, :, :]
        a = np.einsum("nrk,rk->nr", local, self._e1) / np.sum(self._e1 ** 2, axis=1)
        b = np.einsum("nrk,rk->nr", local, self._e2) / np.sum(self._e2 ** 2, axis=1)

        valid = ~parallel & (s > 0.0) & (s <= max_range) & (a >= 0.0) & (a <= 1.0) & (b >= 0.0) & (b <= 1.0)
        s = np.where(valid, s, np.inf)
        nearest = np.argmin(s, axis=1)
        ranges = s[np.arange(s.shape[0]), nearest]
        missed = ~np.isfinite(ranges)
        ranges[missed] = np.nan
        nearest[missed] = -1
        return ranges, nearest

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Distance of every point to the nearest rectangle."""
        return np.min(np.stack([r.distance(points) for r in self.rectangles]), axis=0)


class SensorRig():
    """
    Ground-truth sensor parameters: body-to-LiDAR extrinsic, initial biases,
    gravity, rates (Hz), noise and LiDAR grid.
    """
    def __init__(self, extrinsic: Pose | None = None, gyro_bias: np.ndarray | None = None,
                 accel_bias: np.ndarray | None = None, gravity: np.ndarray | None = None, imu_rate: float = 100.0,
                 lidar_rate: float = 10.0, noise: NoiseConfig | None = None, lidar: LidarConfig | None = None):
        if imu_rate <= 0.0 or lidar_rate <= 0.0:
            raise ValueError(f"Sensor rates must be positive, got IMU {imu_rate} Hz and LiDAR {lidar_rate} Hz")
        self.extrinsic = Pose() if extrinsic is None else extrinsic
        self.gyro_bias = np.zeros(3) if gyro_bias is None else np.asarray(gyro_bias, dtype=float)
        self.accel_bias = np.zeros(3) if accel_bias is None else np.asarray(accel_bias, dtype=float)
        self.gravity = np.array([0.0, 0.0, -STANDARD_GRAVITY]) if gravity is None else np.asarray(gravity, dtype=float)
        self.imu_rate = float(imu_rate)
        self.lidar_rate = float(lidar_rate)
        self.noise = NoiseConfig() if noise is None else noise
        self.lidar = LidarConfig() if lidar is None else lidar


class ImuSimulator():
    """
    IMU with random-walk biases (Euler-Maruyama at the IMU rate) and white
    noise of standard deviation density * sqrt(rate).
    """
    def __init__(self, rig: SensorRig, rng: np.random.Generator):
        self.rig = rig
        self.rng = rng
        self.bias = np.concatenate((rig.gyro_bias, rig.accel_bias))

    def sample(self, truth: TruthSample) -> tuple[np.ndarray, np.ndarray]:
        """Measure at the truth instant, then advance the biases by one IMU period."""
        noise = self.rig.noise
        omega, acc = sample_imu(self.rig, truth, self.rng, self.bias)

        sqrt_dt = 1.0 / np.sqrt(self.rig.imu_rate)
        walk = np.concatenate((np.full(3, noise.gyro_walk), np.full(3, noise.accel_walk)))
        self.bias = self.bias + walk * sqrt_dt * self.rng.standard_normal(6)
        return omega, acc


def sample_imu(rig: SensorRig, truth: TruthSample, rng: np.random.Generator,
               bias: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Single measurement with fixed biases (gyro, accel) and white noise."""
    bias = np.concatenate((rig.gyro_bias, rig.accel_bias)) if bias is None else bias
    sqrt_rate = np.sqrt(rig.imu_rate)
    omega = truth.omega + bias[0:3] + rig.noise.gyro * sqrt_rate * rng.standard_normal(3)
    acc = truth.acc + bias[3:6] + rig.noise.accel * sqrt_rate * rng.standard_normal(3)
    return omega, acc


def raycast_scan(world: PlanarWorld, body_pose: Callable[[float], Pose], rig: SensorRig, rng: np.random.Generator,
                 t_start: float) -> Scan:
    """
    One LiDAR sweep starting at t_start. Column j is fired at
    t_start + j / azimuth_count * period from the body pose at that instant.
    """
    period = 1.0 / rig.lidar_rate
    directions, columns = rig.lidar.directions()
    offsets = columns * period / rig.lidar.azimuth_count

    origins = np.empty_like(directions)
    world_dirs = np.empty_like(directions)
    for column in range(rig.lidar.azimuth_count):
        mask = columns == column
        lidar_pose = body_pose(t_start + offsets[mask][0]) * rig.extrinsic
        origins[mask] = lidar_pose.l
        world_dirs[mask] = directions[mask] @ lidar_pose.C.T

    ranges, _ = world.raycast(origins, world_dirs, rig.lidar.max_range)
    hit = np.isfinite(ranges)
    noisy = ranges[hit] + rig.noise.lidar * rng.standard_normal(int(hit.sum()))
    return Scan(t_start, period, directions[hit] * noisy[:, None], offsets[hit])


class SimulationSpec():
    """Everything needed to generate a dataset."""
    def __init__(self, trajectory: TrajectorySpec | None = None, rig: SensorRig | None = None,
                 world: PlanarWorld | None = None, world_config: dict | None = None):
        self.trajectory = TrajectorySpec() if trajectory is None else trajectory
        self.rig = SensorRig() if rig is None else rig
        self.world = PlanarWorld.room(pillars=DEFAULT_PILLARS) if world is None else world
        self.world_config = {"room": [20.0, 20.0, 6.0], "pillars": [list(p) for p in DEFAULT_PILLARS]} if world_config is None else world_config

    @property
    def imu_count(self) -> int:
        return int(round(self.trajectory.duration * self.rig.imu_rate))

    @property
    def scan_count(self) -> int:
        return int(np.floor(self.trajectory.duration * self.rig.lidar_rate + 1e-9))


class SimulatedData():
    """
    In-memory dataset.
        imu     (N, 7)  t, wx, wy, wz, ax, ay, az
        truth   (N + 1, 17) t, position, quaternion wxyz, velocity, gyro bias, accel bias
        scans   list of Scan
    """
    def __init__(self, imu: np.ndarray, truth: np.ndarray, scans: list[Scan]):
        self.imu = imu
        self.truth = truth
        self.scans = scans


def rotation_to_quaternion(C: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0."""
    x, y, z, w = Rotation.from_matrix(C).as_quat()
    q = np.array([w, x, y, z])
    return -q if w < 0.0 else q


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def _truth_row(sample: TruthSample, bias: np.ndarray) -> np.ndarray:
    return np.concatenate(([sample.t], sample.r, rotation_to_quaternion(sample.C), sample.v, bias))


def generate(spec: SimulationSpec, seed: int, progress: Callable[[str, int, int], None] | None = None) -> SimulatedData:
    """
    Generate IMU samples at t_k = k / imu_rate (k < N), truth at the same
    instants plus the end time, and one scan per LiDAR period.
    Identical seeds give identical data.
    """
    rng = np.random.default_rng(seed)
    rig = spec.rig
    traj = spec.trajectory
    imu_sim = ImuSimulator(rig, rng)

    imu = np.zeros((spec.imu_count, 7))
    truth = np.zeros((spec.imu_count + 1, 17))
    for k in range(spec.imu_count):
        t = k / rig.imu_rate
        sample = truth_at(traj, t, rig.gravity)
        truth[k] = _truth_row(sample, imu_sim.bias)
        omega, acc = imu_sim.sample(sample)
        imu[k] = np.concatenate(([t], omega, acc))
    truth[-1] = _truth_row(truth_at(traj, traj.duration, rig.gravity), imu_sim.bias)

    def body_pose(t: float) -> Pose:
        return truth_at(traj, min(t, traj.duration), rig.gravity).pose()

    scans = []
    for k in range(spec.scan_count):
        if progress:
            progress("Ray casting scans", k, spec.scan_count)
        scans.append(raycast_scan(spec.world, body_pose, rig, rng, k / rig.lidar_rate))

    logger.info("Generated %d IMU samples and %d scans (seed %d)", spec.imu_count, len(scans), seed)
    return SimulatedData(imu, truth, scans)


def integrate_rk4(spec: TrajectorySpec, imu: Callable[[float], tuple[np.ndarray, np.ndarray]], rate: float,
                  gravity: np.ndarray | None = None, duration: float | None = None) -> list[TruthSample]:
    """
    Integrate C' = C omega^, v' = C a + g, r' = v with classical RK4 from
    the trajectory's initial truth, using imu(t) -> (omega, a).
    """
    gravity = np.array([0.0, 0.0, -STANDARD_GRAVITY]) if gravity is None else gravity
    duration = spec.duration if duration is None else duration
    start = truth_at(spec, 0.0, gravity)
    C, v, r = start.C.copy(), start.v.copy(), start.r.copy()
    dt = 1.0 / rate
    steps = int(round(duration * rate))

    def f(t, C, v, r):
        omega, acc = imu(t)
        return C @ hat(omega), C @ acc + gravity, v

    out = [TruthSample(0.0, C, v, r, start.omega, start.acc)]
    for k in range(steps):
        t = k * dt
        k1 = f(t, C, v, r)
        k2 = f(t + dt / 2, C + dt / 2 * k1[0], v + dt / 2 * k1[1], r + dt / 2 * k1[2])
        k3 = f(t + dt / 2, C + dt / 2 * k2[0], v + dt / 2 * k2[1], r + dt / 2 * k2[2])
        k4 = f(t + dt, C + dt * k3[0], v + dt * k3[1], r + dt * k3[2])
        C = normalize_rotation(C + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]))
        v = v + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        r = r + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        omega, acc = imu(t + dt)
        out.append(TruthSample(t + dt, C, v, r, omega, acc))
    return out
