"""
Symmetry of the LiDAR-inertial system.

The symmetry group is G = (SE_2(3) x| se_2(3)) x SE(3) acting on the state
manifold M = SE_2(3) x se_2(3) x SE(3) (navigation, bias, extrinsic) and on
the input space L = se_2(3)^3 x se(3).

This module provides the group law, the state action phi, the input action
psi, the equivariant lift and executable checks of the lift condition and of
equivariance. Tangent vectors of M are handled left-trivialized:
(T^-1 dT, db, K^-1 dK) in R^9 + R^9 + R^6.
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

from lie_algebra import (GROUP_SE3, GROUP_SE23, ExtendedPose, Pose,
                         little_adjoint, se23_hat, se23_left_jacobian,
                         se23_vee)

# Central finite difference step used by the verification paths
FD_STEP: float = 1e-6

# Slices of a 24-dim state tangent / lift vector
NAV = slice(0, 9)
BIAS = slice(9, 18)
EXTRINSIC = slice(18, 24)


class GroupElement():
    """
    X = (A, a, B) with A in SE_2(3), a in se_2(3) (R^9 coordinates), B in SE(3).
    """
    __slots__ = ("A", "a", "B")

    def __init__(self, A: ExtendedPose | None = None, a: np.ndarray | None = None, B: Pose | None = None):
        self.A = ExtendedPose() if A is None else A
        self.a = np.zeros(9) if a is None else np.asarray(a, dtype=float)
        self.B = Pose() if B is None else B

    def __repr__(self):
        return f"GroupElement(A={self.A!r}, a={self.a.tolist()}, B={self.B!r})"

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return g_compose(self, other)

    @staticmethod
    def identity() -> "GroupElement":
        return GroupElement()

    def inverse(self) -> "GroupElement":
        return g_inverse(self)


class SystemState():
    """
    xi = (T, b, K): navigation state T = (C, v, r) in SE_2(3), bias
    b = (b_g, b_a, b_mu) in R^9 and LiDAR extrinsic K = (C^b, l^b) in SE(3).
    """
    __slots__ = ("T", "b", "K")

    def __init__(self, T: ExtendedPose | None = None, b: np.ndarray | None = None, K: Pose | None = None):
        self.T = ExtendedPose() if T is None else T
        self.b = np.zeros(9) if b is None else np.asarray(b, dtype=float)
        self.K = Pose() if K is None else K

    def __repr__(self):
        return f"SystemState(T={self.T!r}, b={self.b.tolist()}, K={self.K!r})"

    @staticmethod
    def origin() -> "SystemState":
        """The fixed origin xi0 = (I, 0, I)."""
        return SystemState()


class SystemInput():
    """
    u = (w, g, tau, tau_k):
        w       IMU tuple (omega rad/s, a m/s^2, mu m/s)
        g       gravity in the world frame, housed in se_2(3) as (0, g, 0)
        tau     bias drift (R^9)
        tau_k   extrinsic drift (R^6)
    """
    __slots__ = ("w", "g", "tau", "tau_k")

    def __init__(self, w: np.ndarray | None = None, g: np.ndarray | None = None,
                 tau: np.ndarray | None = None, tau_k: np.ndarray | None = None):
        self.w = np.zeros(9) if w is None else np.asarray(w, dtype=float)
        self.g = np.zeros(3) if g is None else np.asarray(g, dtype=float)
        self.tau = np.zeros(9) if tau is None else np.asarray(tau, dtype=float)
        self.tau_k = np.zeros(6) if tau_k is None else np.asarray(tau_k, dtype=float)

    def __repr__(self):
        return f"SystemInput(w={self.w.tolist()}, g={self.g.tolist()})"

    @staticmethod
    def from_imu(omega: np.ndarray, acc: np.ndarray, gravity: np.ndarray, mu: np.ndarray | None = None) -> "SystemInput":
        """Build a measurement-driven input (no drift terms, mu = 0 unless given)."""
        mu = np.zeros(3) if mu is None else mu
        return SystemInput(np.concatenate((omega, acc, mu)), gravity)

    def gravity_coordinates(self) -> np.ndarray:
        """g^ as se_2(3) coordinates: zero rotation, zero position slot."""
        return np.concatenate((np.zeros(3), self.g, np.zeros(3)))


def f1_zero(X: ExtendedPose) -> np.ndarray:
    """The drift field (C, v, r) -> (0, 0, v), as algebra coordinates."""
    return np.concatenate((np.zeros(6), X.v))


def _rotation_only(C: np.ndarray) -> Pose:
    return Pose(C, np.zeros(3))


def g_compose(X: GroupElement, Y: GroupElement) -> GroupElement:
    """Semi-direct product law (A_X A_Y, a_X + Ad_{A_X} a_Y, B_X B_Y)."""
    return GroupElement(X.A * Y.A, X.a + X.A.adjoint() @ Y.a, X.B * Y.B)


def g_inverse(X: GroupElement) -> GroupElement:
    A_inv = X.A.inverse()
    return GroupElement(A_inv, -(A_inv.adjoint() @ X.a), X.B.inverse())


def g_exp(u: np.ndarray) -> GroupElement:
    """
    Exponential of G for u = (Lambda_1, Lambda_2, Lambda_3) in R^9 + R^9 + R^6.

    The semi-direct factor of the one-parameter subgroup is
    integral_0^1 Ad_{exp(s Lambda_1)} Lambda_2 ds = J(Lambda_1) Lambda_2.
    """
    u = np.asarray(u, dtype=float)
    return GroupElement(ExtendedPose.exp(u[NAV]), se23_left_jacobian(u[NAV]) @ u[BIAS], Pose.exp(u[EXTRINSIC]))


def action_phi(X: GroupElement, xi: SystemState) -> SystemState:
    """
    Right action of G on M:
        phi(X, xi) = (T A, Ad_{A^-1}(b - a), Gamma(A)^-1 K B)
    """
    A_inv = X.A.inverse()
    return SystemState(
        xi.T * X.A,
        A_inv.adjoint() @ (xi.b - X.a),
        _rotation_only(A_inv.C) * xi.K * X.B,
    )


def action_psi(X: GroupElement, u: SystemInput) -> SystemInput:
    """
    Right action of G on L:
        psi(X, u) = (Ad_{A^-1}(w - a) + f1_zero(A^-1), g, Ad_{A^-1} tau, Ad_{B^-1} tau_k)
    """
    A_inv = X.A.inverse()
    Ad_A_inv = A_inv.adjoint()
    return SystemInput(
        Ad_A_inv @ (u.w - X.a) + f1_zero(A_inv),
        u.g.copy(),
        Ad_A_inv @ u.tau,
        X.B.inverse().adjoint() @ u.tau_k,
    )


def lift_lambda(xi: SystemState, u: SystemInput) -> np.ndarray:
    """
    Equivariant lift Lambda(xi, u) in se_2(3) + se_2(3) + se(3) coordinates.

        Lambda_1 = w - b + Ad_{T^-1} g + T^-1 f1_zero(T)
        Lambda_2 = ad_b(Lambda_1) - tau
        Lambda_3 = Ad_{K^-1}(omega_1, 0) + tau_k
    """
    T_inv = xi.T.inverse()
    lambda_1 = u.w - xi.b + T_inv.adjoint() @ u.gravity_coordinates() + se23_vee(T_inv.as_matrix() @ se23_hat(f1_zero(xi.T)))
    lambda_2 = little_adjoint(GROUP_SE23, xi.b) @ lambda_1 - u.tau
    lambda_3 = xi.K.inverse().adjoint() @ np.concatenate((lambda_1[0:3], np.zeros(3))) + u.tau_k
    return np.concatenate((lambda_1, lambda_2, lambda_3))


def transport(xi_1: SystemState, xi_2: SystemState) -> GroupElement:
    """
    Return the unique X with phi(X, xi_1) = xi_2 (the action is transitive and free).
    """
    A = xi_1.T.inverse() * xi_2.T
    a = xi_1.b - A.adjoint() @ xi_2.b
    B = xi_1.K.inverse() * _rotation_only(A.C) * xi_2.K
    return GroupElement(A, a, B)


def system_velocity(xi: SystemState, u: SystemInput) -> np.ndarray:
    """
    f0(xi) + f_u(xi), left-trivialized, evaluated from the physical model:

        dC = C (omega - b_g)^         db = tau
        dv = C (a - b_a) + g          dK = K tau_k^
        dr = C (mu - b_mu) + v
    """
    C = xi.T.C
    omega, acc, mu = u.w[0:3], u.w[3:6], u.w[6:9]
    T_dot = np.zeros((5, 5))
    T_dot[0:3, 0:3] = C @ se23_hat(np.concatenate((omega - xi.b[0:3], np.zeros(6))))[0:3, 0:3]
    T_dot[0:3, 3] = C @ (acc - xi.b[3:6]) + u.g
    T_dot[0:3, 4] = C @ (mu - xi.b[6:9]) + xi.T.v
    nav = se23_vee(xi.T.inverse().as_matrix() @ T_dot)
    return np.concatenate((nav, u.tau, u.tau_k))


def state_retract(xi: SystemState, delta: np.ndarray) -> SystemState:
    """Move xi along a left-trivialized tangent vector: (T exp(d_T), b + d_b, K exp(d_K))."""
    return SystemState(xi.T * ExtendedPose.exp(delta[NAV]), xi.b + delta[BIAS], xi.K * Pose.exp(delta[EXTRINSIC]))


def state_local(xi_0: SystemState, xi_1: SystemState) -> np.ndarray:
    """Inverse of state_retract(): coordinates of xi_1 seen from xi_0."""
    return np.concatenate((
        (xi_0.T.inverse() * xi_1.T).log(),
        xi_1.b - xi_0.b,
        (xi_0.K.inverse() * xi_1.K).log(),
    ))


def _component_residual(diff: np.ndarray) -> float:
    return max(float(np.linalg.norm(diff[NAV])), float(np.linalg.norm(diff[BIAS])), float(np.linalg.norm(diff[EXTRINSIC])))


def _curve_derivative(base: SystemState, curve, h: float) -> np.ndarray:
    """Central difference of t -> state_local(base, curve(t)) at t = 0."""
    return (state_local(base, curve(h)) - state_local(base, curve(-h))) / (2.0 * h)


def lift_residual(xi: SystemState, u: SystemInput, h: float = FD_STEP) -> float:
    """
    Residual of the lift condition d phi^(xi) Lambda(xi, u) = f0(xi) + f_u(xi),
    with the left side differentiated numerically along t -> phi(exp(t Lambda), xi).
    """
    lam = lift_lambda(xi, u)
    numeric = _curve_derivative(xi, lambda t: action_phi(g_exp(t * lam), xi), h)
    return _component_residual(numeric - system_velocity(xi, u))


def check_equivariance(X: GroupElement, xi: SystemState, u: SystemInput, h: float = FD_STEP) -> float:
    """
    Residual of f0(xi) + f_{psi_X(u)}(xi) = d phi_X (f0(xi') + f_u(xi')), xi' = phi_{X^-1}(xi).

    Both sides go through the same central difference so that X = I gives an
    exact zero. Returns the largest residual norm over the three state components.
    """
    xi_prime = action_phi(g_inverse(X), xi)
    base = action_phi(X, xi_prime)

    v_left = system_velocity(xi, action_psi(X, u))
    v_prime = system_velocity(xi_prime, u)

    left = _curve_derivative(xi, lambda t: state_retract(xi, t * v_left), h)
    right = _curve_derivative(base, lambda t: action_phi(X, state_retract(xi_prime, t * v_prime)), h)
    return _component_residual(left - right)


def random_group_element(rng: np.random.Generator, scale: float = 1.0) -> GroupElement:
    """Random element with algebra coordinates drawn from N(0, scale^2)."""
    return GroupElement(
        ExtendedPose.exp(rng.normal(0.0, scale, 9)),
        rng.normal(0.0, scale, 9),
        Pose.exp(rng.normal(0.0, scale, 6)),
    )


def random_state(rng: np.random.Generator, scale: float = 1.0) -> SystemState:
    return SystemState(ExtendedPose.exp(rng.normal(0.0, scale, 9)), rng.normal(0.0, scale, 9), Pose.exp(rng.normal(0.0, scale, 6)))


def random_input(rng: np.random.Generator, scale: float = 1.0, drift: bool = True) -> SystemInput:
    """Random input; the gravity slot has the usual magnitude direction-randomized."""
    g = rng.normal(0.0, 1.0, 3)
    g = 9.81 * g / np.linalg.norm(g)
    if not drift:
        return SystemInput(rng.normal(0.0, scale, 9), g)
    return SystemInput(rng.normal(0.0, scale, 9), g, rng.normal(0.0, scale, 9), rng.normal(0.0, scale, 6))
