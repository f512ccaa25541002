"""
Exact matrix Lie group primitives for SO(3), SE(3) and SE_2(3).

Rotations are plain 3x3 numpy arrays. Poses (SE(3)) and extended poses
(SE_2(3)) are stored as a rotation plus translation vectors rather than as
dense homogeneous matrices; `as_matrix()` converts when the 4x4 or 5x5 form
is needed.

Coordinate ordering of the Lie algebras:
    so(3)       (omega)                  R^3
    se(3)       (omega, rho)             R^6
    se_2(3)     (omega, nu, rho)         R^9   nu = velocity slot, rho = position slot
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
from scipy.linalg import expm

# Group tags
GROUP_SO3 = "SO3"
GROUP_SE3 = "SE3"
GROUP_SE23 = "SE23"

# Below this rotation angle (rad), exp/log switch to Taylor branches
SMALL_ANGLE: float = 1e-6

# log() refuses rotations closer than this to pi (rad)
PI_MARGIN: float = 1e-6

# Re-orthonormalize only when |C^T C - I|_F exceeds this
ORTHONORMAL_TOLERANCE: float = 1e-9


class AngleNearPi(ValueError):
    """Rotation angle too close to pi for the principal logarithm."""


def hat(w: np.ndarray) -> np.ndarray:
    """Return the skew-symmetric matrix of a 3-vector, i.e. hat(w) @ x == cross(w, x)."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of hat()"""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _rodrigues_coefficients(theta: float) -> tuple[float, float]:
    """Return sin(t)/t and (1 - cos(t))/t^2 with a 4th order small-angle branch."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    half = 0.5 * theta
    return np.sin(theta) / theta, 2.0 * (np.sin(half) / theta) ** 2


def so3_exp(w: np.ndarray) -> np.ndarray:
    """
    Closed Rodrigues form of the SO(3) exponential.
    """
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    a, b = _rodrigues_coefficients(theta)
    w_hat = hat(w)
    return np.eye(3) + a * w_hat + b * (w_hat @ w_hat)


def so3_log(C: np.ndarray) -> np.ndarray:
    """
    Principal logarithm of a rotation matrix as a rotation vector.

    The angle is recovered with atan2 so that the result stays accurate
    close to (but not at) pi. Raises AngleNearPi within PI_MARGIN of pi.
    """
    skew = vee(C - C.T)
    s = 0.5 * float(np.linalg.norm(skew))
    c = 0.5 * (float(np.trace(C)) - 1.0)
    theta = float(np.arctan2(s, c))

    if theta > np.pi - PI_MARGIN:
        raise AngleNearPi(f"Rotation angle {theta:.9f} rad is within {PI_MARGIN} of pi")

    if theta < SMALL_ANGLE:
        return 0.5 * skew * (1.0 + theta * theta / 6.0)
    return theta * skew / (2.0 * s)


def so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    """Left Jacobian J_l(w) of SO(3)."""
    theta = float(np.linalg.norm(w))
    w_hat = hat(w)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return np.eye(3) + (0.5 - t2 / 24.0) * w_hat + (1.0 / 6.0 - t2 / 120.0) * (w_hat @ w_hat)
    half = 0.5 * theta
    b = 2.0 * (np.sin(half) / theta) ** 2
    c = (theta - np.sin(theta)) / theta ** 3
    return np.eye(3) + b * w_hat + c * (w_hat @ w_hat)


def so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    """Inverse of so3_left_jacobian()"""
    theta = float(np.linalg.norm(w))
    w_hat = hat(w)
    if theta < SMALL_ANGLE:
        d = 1.0 / 12.0 + theta * theta / 720.0
    else:
        d = 1.0 / theta ** 2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * w_hat + d * (w_hat @ w_hat)


def normalize_rotation(C: np.ndarray) -> np.ndarray:
    """
    Project a nearly orthogonal matrix back onto SO(3) (polar decomposition).
    Matrices already orthogonal to ORTHONORMAL_TOLERANCE are returned as-is.
    """
    if np.linalg.norm(C.T @ C - np.eye(3)) <= ORTHONORMAL_TOLERANCE:
        return C
    u, _, vt = np.linalg.svd(C)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


class Pose():
    """
    Element of SE(3): rotation C and translation l.
    """
    __slots__ = ("C", "l")

    def __init__(self, C: np.ndarray | None = None, l: np.ndarray | None = None):
        self.C = np.eye(3) if C is None else np.asarray(C, dtype=float)
        self.l = np.zeros(3) if l is None else np.asarray(l, dtype=float)

    def __repr__(self):
        return f"Pose(C={self.C.tolist()}, l={self.l.tolist()})"

    def __mul__(self, other: "Pose") -> "Pose":
        return Pose(self.C @ other.C, self.C @ other.l + self.l)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        return Pose(m[0:3, 0:3], m[0:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[0:3, 0:3] = self.C
        m[0:3, 3] = self.l
        return m

    def inverse(self) -> "Pose":
        return Pose(self.C.T, -self.C.T @ self.l)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply the pose to a (3,) point or an (N, 3) array of points."""
        return points @ self.C.T + self.l

    def normalized(self) -> "Pose":
        return Pose(normalize_rotation(self.C), self.l)

    @staticmethod
    def exp(u: np.ndarray) -> "Pose":
        u = np.asarray(u, dtype=float)
        return Pose(so3_exp(u[0:3]), so3_left_jacobian(u[0:3]) @ u[3:6])

    def log(self) -> np.ndarray:
        w = so3_log(self.C)
        return np.concatenate((w, so3_left_jacobian_inv(w) @ self.l))

    def adjoint(self) -> np.ndarray:
        ad = np.zeros((6, 6))
        ad[0:3, 0:3] = self.C
        ad[3:6, 0:3] = hat(self.l) @ self.C
        ad[3:6, 3:6] = self.C
        return ad


class ExtendedPose():
    """
    Element of SE_2(3): rotation C, velocity v and position r.

    Embeds as the 5x5 matrix [[C, v, r], [0, 1, 0], [0, 0, 1]].
    """
    __slots__ = ("C", "v", "r")

    def __init__(self, C: np.ndarray | None = None, v: np.ndarray | None = None, r: np.ndarray | None = None):
        self.C = np.eye(3) if C is None else np.asarray(C, dtype=float)
        self.v = np.zeros(3) if v is None else np.asarray(v, dtype=float)
        self.r = np.zeros(3) if r is None else np.asarray(r, dtype=float)

    def __repr__(self):
        return f"ExtendedPose(C={self.C.tolist()}, v={self.v.tolist()}, r={self.r.tolist()})"

    def __mul__(self, other: "ExtendedPose") -> "ExtendedPose":
        return ExtendedPose(self.C @ other.C, self.C @ other.v + self.v, self.C @ other.r + self.r)

    @staticmethod
    def identity() -> "ExtendedPose":
        return ExtendedPose()

    @staticmethod
    def from_matrix(m: np.ndarray) -> "ExtendedPose":
        return ExtendedPose(m[0:3, 0:3], m[0:3, 3], m[0:3, 4])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(5)
        m[0:3, 0:3] = self.C
        m[0:3, 3] = self.v
        m[0:3, 4] = self.r
        return m

    def inverse(self) -> "ExtendedPose":
        Ct = self.C.T
        return ExtendedPose(Ct, -Ct @ self.v, -Ct @ self.r)

    def pose(self) -> Pose:
        """Drop the velocity slot."""
        return Pose(self.C, self.r)

    def normalized(self) -> "ExtendedPose":
        return ExtendedPose(normalize_rotation(self.C), self.v, self.r)

    @staticmethod
    def exp(u: np.ndarray) -> "ExtendedPose":
        u = np.asarray(u, dtype=float)
        J = so3_left_jacobian(u[0:3])
        return ExtendedPose(so3_exp(u[0:3]), J @ u[3:6], J @ u[6:9])

    def log(self) -> np.ndarray:
        w = so3_log(self.C)
        J_inv = so3_left_jacobian_inv(w)
        return np.concatenate((w, J_inv @ self.v, J_inv @ self.r))

    def adjoint(self) -> np.ndarray:
        ad = np.zeros((9, 9))
        ad[0:3, 0:3] = self.C
        ad[3:6, 0:3] = hat(self.v) @ self.C
        ad[3:6, 3:6] = self.C
        ad[6:9, 0:3] = hat(self.r) @ self.C
        ad[6:9, 6:9] = self.C
        return ad


def se3_hat(u: np.ndarray) -> np.ndarray:
    m = np.zeros((4, 4))
    m[0:3, 0:3] = hat(u[0:3])
    m[0:3, 3] = u[3:6]
    return m


def se3_vee(m: np.ndarray) -> np.ndarray:
    return np.concatenate((vee(m[0:3, 0:3]), m[0:3, 3]))


def se23_hat(u: np.ndarray) -> np.ndarray:
    m = np.zeros((5, 5))
    m[0:3, 0:3] = hat(u[0:3])
    m[0:3, 3] = u[3:6]
    m[0:3, 4] = u[6:9]
    return m


def se23_vee(m: np.ndarray) -> np.ndarray:
    return np.concatenate((vee(m[0:3, 0:3]), m[0:3, 3], m[0:3, 4]))


def algebra_hat(group: str, u: np.ndarray) -> np.ndarray:
    """Coordinates to matrix Lie algebra element for the given group tag."""
    if group == GROUP_SO3:
        return hat(u)
    if group == GROUP_SE3:
        return se3_hat(u)
    if group == GROUP_SE23:
        return se23_hat(u)
    raise ValueError(f"Unknown group: {group}")


def algebra_vee(group: str, m: np.ndarray) -> np.ndarray:
    if group == GROUP_SO3:
        return vee(m)
    if group == GROUP_SE3:
        return se3_vee(m)
    if group == GROUP_SE23:
        return se23_vee(m)
    raise ValueError(f"Unknown group: {group}")


def exp(group: str, v: np.ndarray):
    """
    Group exponential. Returns a rotation matrix for SO(3), otherwise a
    Pose or ExtendedPose.
    """
    if group == GROUP_SO3:
        return so3_exp(v)
    if group == GROUP_SE3:
        return Pose.exp(v)
    if group == GROUP_SE23:
        return ExtendedPose.exp(v)
    raise ValueError(f"Unknown group: {group}")


def log(group: str, X) -> np.ndarray:
    """Principal logarithm, inverse of exp()."""
    if group == GROUP_SO3:
        return so3_log(X)
    if group in (GROUP_SE3, GROUP_SE23):
        return X.log()
    raise ValueError(f"Unknown group: {group}")


def compose(group: str, X, Y):
    """Group product XY in the representation exp() returns."""
    if group == GROUP_SO3:
        return np.asarray(X, dtype=float) @ Y
    if group in (GROUP_SE3, GROUP_SE23):
        return X * Y
    raise ValueError(f"Unknown group: {group}")


def adjoint_matrix(group: str, X) -> np.ndarray:
    """
    Big adjoint Ad_X as a matrix acting on algebra coordinates:
    adjoint_matrix(X) @ u == vee(X hat(u) X^-1)
    """
    if group == GROUP_SO3:
        return np.array(X, dtype=float)
    if group in (GROUP_SE3, GROUP_SE23):
        return X.adjoint()
    raise ValueError(f"Unknown group: {group}")


def little_adjoint(group: str, u: np.ndarray) -> np.ndarray:
    """
    Little adjoint ad_u as a matrix: little_adjoint(u) @ v == vee([hat(u), hat(v)])
    """
    u = np.asarray(u, dtype=float)
    if group == GROUP_SO3:
        return hat(u)

    w_hat = hat(u[0:3])
    if group == GROUP_SE3:
        ad = np.zeros((6, 6))
        ad[0:3, 0:3] = w_hat
        ad[3:6, 0:3] = hat(u[3:6])
        ad[3:6, 3:6] = w_hat
        return ad

    if group == GROUP_SE23:
        ad = np.zeros((9, 9))
        ad[0:3, 0:3] = w_hat
        ad[3:6, 0:3] = hat(u[3:6])
        ad[3:6, 3:6] = w_hat
        ad[6:9, 0:3] = hat(u[6:9])
        ad[6:9, 6:9] = w_hat
        return ad

    raise ValueError(f"Unknown group: {group}")


def se23_left_jacobian(u: np.ndarray) -> np.ndarray:
    """
    9x9 left Jacobian of SE_2(3), sum_n ad_u^n / (n+1)!.

    Evaluated exactly as the upper right block of expm([[ad_u, I], [0, 0]]).
    """
    block = np.zeros((18, 18))
    block[0:9, 0:9] = little_adjoint(GROUP_SE23, u)
    block[0:9, 9:18] = np.eye(9)
    return expm(block)[0:9, 9:18]


def as_matrix(group: str, X) -> np.ndarray:
    """Matrix embedding of a group element (3x3, 4x4 or 5x5)."""
    if group == GROUP_SO3:
        return np.asarray(X, dtype=float)
    if group in (GROUP_SE3, GROUP_SE23):
        return X.as_matrix()
    raise ValueError(f"Unknown group: {group}")


def left_translation_differential(group: str, X, u: np.ndarray) -> np.ndarray:
    """dL_X(u): the tangent vector X hat(u) at X, in matrix form."""
    return as_matrix(group, X) @ algebra_hat(group, u)


def right_translation_differential(group: str, X, u: np.ndarray) -> np.ndarray:
    """dR_X(u): the tangent vector hat(u) X at X, in matrix form."""
    return algebra_hat(group, u) @ as_matrix(group, X)
