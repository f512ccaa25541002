"""
YAML configuration files: run configurations and simulation specs.
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
import os

import numpy as np
import yaml

from eqf import FILTER_EKF, FILTER_EQF, NoiseConfig
from lie_algebra import Pose
from simulator import (LidarConfig, PlanarWorld, Rectangle, SensorRig,
                       SimulationSpec, TrajectorySpec, euler_xyz_deg,
                       rotation_to_euler_xyz_deg)

RUN_KEYS = ("dataset", "filter", "noise", "initial_perturbation", "extrinsic_error", "gravity_estimation",
            "max_iter", "seed", "initial_sigma")
PERTURBATION_KEYS = ("attitude_deg", "position_m", "bias")
EXTRINSIC_ERROR_KEYS = ("rotation_deg", "translation_m")
SIMULATION_KEYS = ("trajectory", "imu_rate", "lidar_rate", "noise", "bias", "extrinsic", "gravity", "world", "lidar")

# One-sigma initial uncertainty, floors for the perturbation-derived values
INITIAL_SIGMA = {
    "attitude_deg": 1.0,
    "velocity_m_s": 0.05,
    "position_m": 0.05,
    "gyro_bias": 0.02,
    "accel_bias": 0.1,
    "velocity_bias": 0.01,
    "extrinsic_rotation_deg": 0.5,
    "extrinsic_translation_m": 0.02,
    "gravity_deg": 1.0,
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


def read_yaml(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}") from e

    if not isinstance(doc, dict):
        raise ConfigError(f"Config file {path} must contain a mapping")
    return doc


def _check_keys(section: dict, allowed: tuple, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"'{where}' must be a mapping")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown keys in {where}: {', '.join(unknown)}")


def _number(value, name: str, minimum: float | None = None) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"'{name}' must be a number, got {value!r}") from e
    if not np.isfinite(x):
        raise ConfigError(f"'{name}' must be finite, got {value!r}")
    if minimum is not None and x < minimum:
        raise ConfigError(f"'{name}' must be at least {minimum}, got {x}")
    return x


def _vector(value, size: int, name: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != size:
        raise ConfigError(f"'{name}' must be a list of {size} numbers, got {value!r}")
    return np.array([_number(v, name) for v in value])


def _magnitude_or_vector(value, name: str) -> float | np.ndarray:
    """Scalar magnitude (random direction at run time) or explicit 3-vector."""
    if isinstance(value, (list, tuple)):
        return _vector(value, 3, name)
    return _number(value, name, 0.0)


def parse_noise(section: dict | None, where: str = "noise") -> NoiseConfig:
    section = {} if section is None else section
    _check_keys(section, NoiseConfig.FIELDS, where)
    try:
        return NoiseConfig(**{k: _number(v, f"{where}.{k}") for k, v in section.items()})
    except ValueError as e:
        raise ConfigError(str(e)) from e


class RunConfig():
    """
    A filter run over one dataset.

    Perturbations given as a scalar are applied along a direction drawn from
    the run seed; a 3-list is applied as is (rotation vector in degrees or
    translation in metres). `bias` is the initial bias estimate (9 values).
    """
    def __init__(self, dataset: str, filter_kind: str = FILTER_EQF, noise: NoiseConfig | None = None,
                 attitude_deg: float | np.ndarray = 0.0, position_m: float | np.ndarray = 0.0,
                 bias: np.ndarray | None = None, extrinsic_rotation_deg: float | np.ndarray = 0.0,
                 extrinsic_translation_m: float | np.ndarray = 0.0, gravity_estimation: bool = False,
                 max_iter: int = 3, seed: int = 0, initial_sigma: dict | None = None, path: str | None = None):
        self.dataset = dataset
        self.filter = filter_kind
        self.noise = NoiseConfig() if noise is None else noise
        self.attitude_deg = attitude_deg
        self.position_m = position_m
        self.bias = np.zeros(9) if bias is None else np.asarray(bias, dtype=float)
        self.extrinsic_rotation_deg = extrinsic_rotation_deg
        self.extrinsic_translation_m = extrinsic_translation_m
        self.gravity_estimation = gravity_estimation
        self.max_iter = max_iter
        self.seed = seed
        self.initial_sigma = dict(INITIAL_SIGMA)
        self.initial_sigma.update(initial_sigma or {})
        self.path = path

    def __repr__(self):
        return f"RunConfig(dataset={self.dataset}, filter={self.filter}, seed={self.seed})"

    @property
    def name(self) -> str:
        """Short label for tables: the config file stem, else the filter kind."""
        if self.path:
            return os.path.splitext(os.path.basename(self.path))[0]
        return self.filter

    def as_dict(self) -> dict:
        def plain(x):
            return x.tolist() if isinstance(x, np.ndarray) else x
        return {
            "dataset": self.dataset,
            "filter": self.filter,
            "noise": self.noise.as_dict(),
            "initial_perturbation": {"attitude_deg": plain(self.attitude_deg), "position_m": plain(self.position_m),
                                     "bias": self.bias.tolist()},
            "extrinsic_error": {"rotation_deg": plain(self.extrinsic_rotation_deg),
                                "translation_m": plain(self.extrinsic_translation_m)},
            "gravity_estimation": self.gravity_estimation,
            "max_iter": self.max_iter,
            "seed": self.seed,
            "initial_sigma": dict(self.initial_sigma),
        }


def parse_run_config(doc: dict, base_dir: str = ".", path: str | None = None) -> RunConfig:
    _check_keys(doc, RUN_KEYS, "run config")
    if "dataset" not in doc:
        raise ConfigError("Run config needs a 'dataset' path")

    dataset = str(doc["dataset"])
    if not os.path.isabs(dataset):
        dataset = os.path.normpath(os.path.join(base_dir, dataset))
    if not os.path.isdir(dataset):
        raise ConfigError(f"Dataset directory does not exist: {dataset}")

    filter_kind = doc.get("filter", FILTER_EQF)
    if filter_kind not in (FILTER_EQF, FILTER_EKF):
        raise ConfigError(f"'filter' must be '{FILTER_EQF}' or '{FILTER_EKF}', got {filter_kind!r}")

    perturbation = doc.get("initial_perturbation") or {}
    _check_keys(perturbation, PERTURBATION_KEYS, "initial_perturbation")
    extrinsic = doc.get("extrinsic_error") or {}
    _check_keys(extrinsic, EXTRINSIC_ERROR_KEYS, "extrinsic_error")
    sigma = doc.get("initial_sigma") or {}
    _check_keys(sigma, tuple(INITIAL_SIGMA), "initial_sigma")

    max_iter = doc.get("max_iter", 3)
    seed = doc.get("seed", 0)
    if not isinstance(max_iter, int) or isinstance(max_iter, bool) or max_iter < 1:
        raise ConfigError(f"'max_iter' must be an integer >= 1, got {max_iter!r}")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"'seed' must be a nonnegative integer, got {seed!r}")
    gravity_estimation = doc.get("gravity_estimation", False)
    if not isinstance(gravity_estimation, bool):
        raise ConfigError(f"'gravity_estimation' must be true or false, got {gravity_estimation!r}")

    return RunConfig(
        dataset=dataset,
        filter_kind=filter_kind,
        noise=parse_noise(doc.get("noise")),
        attitude_deg=_magnitude_or_vector(perturbation.get("attitude_deg", 0.0), "initial_perturbation.attitude_deg"),
        position_m=_magnitude_or_vector(perturbation.get("position_m", 0.0), "initial_perturbation.position_m"),
        bias=_vector(perturbation.get("bias", [0.0] * 9), 9, "initial_perturbation.bias"),
        extrinsic_rotation_deg=_magnitude_or_vector(extrinsic.get("rotation_deg", 0.0), "extrinsic_error.rotation_deg"),
        extrinsic_translation_m=_magnitude_or_vector(extrinsic.get("translation_m", 0.0), "extrinsic_error.translation_m"),
        gravity_estimation=gravity_estimation,
        max_iter=max_iter,
        seed=seed,
        initial_sigma={k: _number(v, f"initial_sigma.{k}", 0.0) for k, v in sigma.items()},
        path=path,
    )


def load_run_config(path: str) -> RunConfig:
    """Read a run config; a relative dataset path is taken from the config's directory."""
    return parse_run_config(read_yaml(path), os.path.dirname(os.path.abspath(path)), path)


def parse_world(section: dict | None) -> tuple[PlanarWorld, dict]:
    if section is None:
        spec = SimulationSpec()
        return spec.world, spec.world_config
    _check_keys(section, ("room", "pillars", "rectangles"), "world")

    rectangles = []
    if "room" in section or "rectangles" not in section:
        room = tuple(_vector(section.get("room", [20.0, 20.0, 6.0]), 3, "world.room"))
        pillars = [tuple(_vector(p, 3, "world.pillars")) for p in section.get("pillars", [])]
        rectangles += PlanarWorld.room(room, pillars).rectangles

    for i, rect in enumerate(section.get("rectangles", [])):
        _check_keys(rect, ("corner", "edge1", "edge2"), f"world.rectangles[{i}]")
        try:
            rectangles.append(Rectangle(_vector(rect.get("corner"), 3, "corner"), _vector(rect.get("edge1"), 3, "edge1"),
                                        _vector(rect.get("edge2"), 3, "edge2")))
        except ValueError as e:
            raise ConfigError(f"world.rectangles[{i}]: {e}") from e

    if not rectangles:
        raise ConfigError("World needs a room or at least one rectangle")
    return PlanarWorld(rectangles), section


def parse_simulation_spec(doc: dict) -> SimulationSpec:
    """Build a SimulationSpec; a dataset's meta.yaml holds one under 'spec'."""
    if "spec" in doc and isinstance(doc["spec"], dict):
        doc = doc["spec"]
    _check_keys(doc, SIMULATION_KEYS, "simulation spec")

    trajectory = doc.get("trajectory") or {}
    _check_keys(trajectory, TrajectorySpec.FIELDS, "trajectory")
    lidar = doc.get("lidar") or {}
    _check_keys(lidar, LidarConfig.FIELDS, "lidar")
    bias = doc.get("bias") or {}
    _check_keys(bias, ("gyro", "accel"), "bias")
    extrinsic = doc.get("extrinsic") or {}
    _check_keys(extrinsic, ("rotation_deg", "translation_m"), "extrinsic")

    try:
        traj = TrajectorySpec(**trajectory)
        lidar_config = LidarConfig(**lidar)
        rig = SensorRig(
            extrinsic=Pose(euler_xyz_deg(_vector(extrinsic.get("rotation_deg", [0.0] * 3), 3, "extrinsic.rotation_deg")),
                           _vector(extrinsic.get("translation_m", [0.0] * 3), 3, "extrinsic.translation_m")),
            gyro_bias=_vector(bias.get("gyro", [0.0] * 3), 3, "bias.gyro"),
            accel_bias=_vector(bias.get("accel", [0.0] * 3), 3, "bias.accel"),
            gravity=_vector(doc.get("gravity", [0.0, 0.0, -9.81]), 3, "gravity"),
            imu_rate=_number(doc.get("imu_rate", 100.0), "imu_rate"),
            lidar_rate=_number(doc.get("lidar_rate", 10.0), "lidar_rate"),
            noise=parse_noise(doc.get("noise")),
            lidar=lidar_config,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid simulation spec: {e}") from e

    world, world_config = parse_world(doc.get("world"))
    return SimulationSpec(traj, rig, world, world_config)


def load_simulation_spec(path: str) -> SimulationSpec:
    return parse_simulation_spec(read_yaml(path))


def simulation_spec_to_dict(spec: SimulationSpec) -> dict:
    """Plain-data form of a spec for meta.yaml, loadable by parse_simulation_spec()."""
    rig = spec.rig
    return {
        "trajectory": spec.trajectory.as_dict(),
        "imu_rate": rig.imu_rate,
        "lidar_rate": rig.lidar_rate,
        "noise": rig.noise.as_dict(),
        "bias": {"gyro": rig.gyro_bias.tolist(), "accel": rig.accel_bias.tolist()},
        "extrinsic": {"rotation_deg": rotation_to_euler_xyz_deg(rig.extrinsic.C).tolist(),
                      "translation_m": rig.extrinsic.l.tolist()},
        "gravity": rig.gravity.tolist(),
        "world": spec.world_config,
        "lidar": rig.lidar.as_dict(),
    }
