"""
Trajectory and consistency metrics of a filter run against ground truth.
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
import numpy as np
from scipy.stats import chi2

from lie_algebra import so3_log
from simulator import quaternion_to_rotation

NEES_CONFIDENCE: float = 0.95   # two-sided chi-square band
SIGMA_BOUND: float = 3.0        # bias containment test, in standard deviations

# Report fields in table order; ms_per_scan only appears with timing enabled
REPORT_FIELDS = (
    "filter", "scans", "ate_rmse", "end_to_end", "start_end_error", "planar_east", "planar_north",
    "planar_horizontal", "velocity_rmse", "gyro_bias_error", "accel_bias_error", "extrinsic_rotation_error_deg",
    "extrinsic_translation_error_m", "gyro_bias_within_3sigma", "nees_mean", "nees_band_fraction", "nees_dof",
)


def chi2_band(dof: int, confidence: float = NEES_CONFIDENCE, runs: int = 1) -> tuple[float, float]:
    """
    Two-sided band of the NEES averaged over `runs` independent runs,
    chi2(runs * dof) / runs.
    """
    tail = 0.5 * (1.0 - confidence)
    lower, upper = chi2.ppf([tail, 1.0 - tail], runs * dof)
    return float(lower) / runs, float(upper) / runs


def nees(eps: np.ndarray, Sigma: np.ndarray) -> float:
    """eps^T Sigma^-1 eps"""
    return float(eps @ np.linalg.solve(Sigma, eps))


def band_fraction(values: np.ndarray, dof: int, runs: int = 1) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    lower, upper = chi2_band(dof, runs=runs)
    return float(np.mean((values >= lower) & (values <= upper)))


def average_nees_band_fraction(nees_runs: np.ndarray, dof: int) -> float:
    """Fraction of time steps whose NEES averaged over the runs (rows) lies in the band."""
    nees_runs = np.atleast_2d(np.asarray(nees_runs, dtype=float))
    return band_fraction(np.mean(nees_runs, axis=0), dof, runs=nees_runs.shape[0])


def ate_rmse(est_positions: np.ndarray, true_positions: np.ndarray) -> float:
    """Absolute trajectory error; both trajectories share the world frame, so no alignment."""
    return float(np.sqrt(np.mean(np.sum((est_positions - true_positions) ** 2, axis=1))))


def start_end_error(est_positions: np.ndarray, true_positions: np.ndarray) -> float:
    est = np.linalg.norm(est_positions[-1] - est_positions[0])
    true = np.linalg.norm(true_positions[-1] - true_positions[0])
    return float(abs(est - true))


class MetricsReport():
    """
    Metrics of one run. Distances in m, angles in degrees, biases in the
    units of the IMU (rad/s, m/s^2).
    """
    def __init__(self, **fields):
        missing = [name for name in REPORT_FIELDS if name not in fields]
        if missing:
            raise ValueError(f"Missing report fields: {', '.join(missing)}")
        self.fields = fields

    def __getitem__(self, name: str):
        return self.fields[name]

    def __eq__(self, other):
        return isinstance(other, MetricsReport) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return f"MetricsReport(filter={self['filter']}, ate_rmse={self['ate_rmse']:.4f})"

    def as_dict(self) -> dict:
        d = {}
        for name in REPORT_FIELDS + tuple(k for k in self.fields if k not in REPORT_FIELDS):
            value = self.fields[name]
            if isinstance(value, np.ndarray):
                value = value.tolist()
            elif isinstance(value, np.generic):
                value = value.item()
            d[name] = value
        return d

    @staticmethod
    def from_dict(d: dict) -> "MetricsReport":
        return MetricsReport(**d)

    def table_row(self) -> dict:
        """Flat row for comparison tables."""
        row = {}
        for name, value in self.as_dict().items():
            if isinstance(value, list):
                for axis, x in zip("xyz", value):
                    row[f"{name}_{axis}"] = x
            else:
                row[name] = value
        return row


def compute_report(filter_kind: str, est: np.ndarray, truth_rows: np.ndarray, true_extrinsic,
                   nees_values: np.ndarray, dof: int, ms_per_scan: float | None = None) -> MetricsReport:
    """
    Metrics of an estimated trajectory `est` (est.csv layout) against truth
    rows sampled at the same times (truth.csv layout).
    """
    if est.shape[0] == 0 or est.shape[0] != truth_rows.shape[0]:
        raise ValueError(f"Need matching, non-empty trajectories, got {est.shape[0]} and {truth_rows.shape[0]} rows")

    p_est, p_true = est[:, 1:4], truth_rows[:, 1:4]
    final = p_est[-1] - p_true[-1]
    bias_error = est[-1, 11:17] - truth_rows[-1, 11:17]

    fields = {
        "filter": filter_kind,
        "scans": int(est.shape[0] - 1),
        "ate_rmse": ate_rmse(p_est, p_true),
        "end_to_end": float(np.linalg.norm(final)),
        "start_end_error": start_end_error(p_est, p_true),
        "planar_east": float(final[0]),
        "planar_north": float(final[1]),
        "planar_horizontal": float(np.hypot(final[0], final[1])),
        "velocity_rmse": ate_rmse(est[:, 8:11], truth_rows[:, 8:11]),
        "gyro_bias_error": bias_error[0:3],
        "accel_bias_error": bias_error[3:6],
        "extrinsic_rotation_error_deg": float("nan"),
        "extrinsic_translation_error_m": float("nan"),
        "gyro_bias_within_3sigma": None,
        "nees_mean": float(np.mean(nees_values)) if len(nees_values) else float("nan"),
        "nees_band_fraction": band_fraction(nees_values, dof),
        "nees_dof": int(dof),
    }

    if est.shape[1] > 17:
        C_K = quaternion_to_rotation(est[-1, 20:24])
        fields["extrinsic_rotation_error_deg"] = float(np.degrees(np.linalg.norm(so3_log(true_extrinsic.C.T @ C_K))))
        fields["extrinsic_translation_error_m"] = float(np.linalg.norm(est[-1, 24:27] - true_extrinsic.l))
        sigma_bg = est[-1, 27:30]
        fields["gyro_bias_within_3sigma"] = bool(np.all(np.abs(bias_error[0:3]) <= SIGMA_BOUND * sigma_bg))

    if ms_per_scan is not None:
        fields["ms_per_scan"] = float(ms_per_scan)
    return MetricsReport(**fields)
