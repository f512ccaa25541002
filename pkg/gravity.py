"""
Gravity direction on the sphere S^2.

The direction is perturbed through a 2-dim tangent vector x mapped to a
rotation vector by the isometry B_g:

    g_next = exp(B_g x) g
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

from lie_algebra import so3_exp

# Standard gravity (m/s^2)
GRAVITY_MAGNITUDE: float = 9.81

# B_g is undefined at z = -1; directions closer than this are refused
ANTIPODE_MARGIN: float = 1e-9

# Below this |g_k x g_k1| the two directions are treated as equal
PARALLEL_TOLERANCE: float = 1e-15


class AntipodeSingularity(ValueError):
    """The direction is the south pole (0, 0, -1), where B_g has a pole."""


class AntipodalPair(ValueError):
    """Two directions are opposite, the geodesic between them is not unique."""


def build_Bg(g: np.ndarray) -> np.ndarray:
    """
    Return the 3x2 isometry B_g whose columns span the plane orthogonal to g.
    """
    x, y, z = (float(c) for c in g)
    if z <= -1.0 + ANTIPODE_MARGIN:
        raise AntipodeSingularity(f"B_g is singular for direction {[x, y, z]}")

    d = 1.0 + z
    return np.array([
        [1.0 - x * x / d, -x * y / d],
        [-x * y / d, 1.0 - y * y / d],
        [-x, -y],
    ])


def s2_boxplus(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """exp(B_g x) g, renormalized against round-off."""
    g_next = so3_exp(build_Bg(g) @ np.asarray(x, dtype=float)) @ g
    return g_next / np.linalg.norm(g_next)


def s2_boxminus(g_k: np.ndarray, g_k1: np.ndarray) -> np.ndarray:
    """
    Tangent vector taking g_k to g_k1:

        eps = arccos(g_k . g_k1) B_{g_k}^T (g_k x g_k1) / |g_k x g_k1|

    The cross product is normalized so that |eps| equals the angle between
    the two directions and s2_boxplus() inverts this exactly.
    """
    c = float(np.clip(np.dot(g_k, g_k1), -1.0, 1.0))
    if c <= -1.0 + ANTIPODE_MARGIN:
        raise AntipodalPair(f"Directions {g_k.tolist()} and {g_k1.tolist()} are antipodal")

    axis = np.cross(g_k, g_k1)
    s = float(np.linalg.norm(axis))
    if s < PARALLEL_TOLERANCE:
        return np.zeros(2)

    theta = float(np.arctan2(s, c))
    return theta * (build_Bg(g_k).T @ (axis / s))


class GravityDir():
    """
    Unit direction on S^2 together with its magnitude (m/s^2).
    """
    __slots__ = ("g", "magnitude")

    def __init__(self, g: np.ndarray, magnitude: float = GRAVITY_MAGNITUDE):
        g = np.asarray(g, dtype=float)
        norm = float(np.linalg.norm(g))
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError(f"Invalid gravity direction: {g.tolist()}")
        self.g = g / norm
        self.magnitude = float(magnitude)

    def __repr__(self):
        return f"GravityDir(g={self.g.tolist()}, magnitude={self.magnitude})"

    @staticmethod
    def from_vector(v: np.ndarray) -> "GravityDir":
        v = np.asarray(v, dtype=float)
        return GravityDir(v, float(np.linalg.norm(v)))

    def vector(self) -> np.ndarray:
        return self.magnitude * self.g

    def basis(self) -> np.ndarray:
        return build_Bg(self.g)

    def boxplus(self, x: np.ndarray) -> "GravityDir":
        return GravityDir(s2_boxplus(self.g, x), self.magnitude)

    def boxminus(self, other: "GravityDir") -> np.ndarray:
        """Tangent vector taking this direction to other."""
        return s2_boxminus(self.g, other.g)
