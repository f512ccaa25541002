"""
Equivariant filter on G = (SE_2(3) x| se_2(3)) x SE(3).

The filter state is an element X of the symmetry group plus a covariance
over the 24-dim error coordinates

    eps = (log e_T, e_b, log e_K),     e = phi(X^-1, xi)

taken at the fixed origin xi0 = (I, 0, I). The state estimate is always
recovered as xi_hat = phi(X, xi0).

With gravity estimation enabled the error grows by two S^2 coordinates
of the "up" direction (the rest specific-force direction).
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
from scipy.linalg import expm

from gravity import GravityDir, build_Bg
from lie_algebra import GROUP_SE23, ExtendedPose, Pose, hat, little_adjoint
from symmetry import (BIAS, EXTRINSIC, NAV, GroupElement, SystemInput,
                      SystemState, action_phi, g_exp, g_inverse, lift_lambda,
                      state_retract, system_velocity, transport)

logger = logging.getLogger(__name__)

# Filter kinds
FILTER_EQF = "eqf"
FILTER_EKF = "ekf"

STATE_DIM = 24
GRAVITY_DIM = 2
NOISE_DIM = 21              # gyro, accel, 3 bias walks, extrinsic drift (6)
GRAVITY = slice(24, 26)

MAX_DT: float = 0.1                 # s, longest accepted propagation step
CONVERGENCE_TOLERANCE: float = 1e-6 # iterated update stops when the iterate moves less
CONDITION_MAX: float = 1e12         # innovation covariance condition number limit
COVARIANCE_FLOOR: float = 1e-12     # eigenvalue floor applied after updates

# Mutation hook for the verification suite: multiplies the g^ block of F
GRAVITY_BLOCK_SIGN: float = 1.0

# Nested central differences of the error-dynamics oracle
FD_TIME_STEP: float = 1e-5
FD_STATE_STEP: float = 1e-4
FD_RELATIVE_TOLERANCE: float = 1e-4


class NonFiniteInput(ValueError):
    """An IMU sample or time step contains NaN or inf."""


class SingularInnovation(RuntimeError):
    """The innovation covariance H Sigma H^T + R is numerically singular."""


class NoiseConfig():
    """
    Sensor noise model. White noise densities are continuous-time:
        gyro            (rad/s)/sqrt(Hz)
        accel           (m/s^2)/sqrt(Hz)
        gyro_walk       gyro bias random walk, (rad/s^2)/sqrt(Hz)
        accel_walk      accel bias random walk, (m/s^3)/sqrt(Hz)
        velocity_walk   virtual velocity bias random walk
        extrinsic       extrinsic drift density (0 = rigid mount)
        lidar           per-point range noise sigma (m)
    """
    FIELDS = ("gyro", "accel", "gyro_walk", "accel_walk", "velocity_walk", "extrinsic", "lidar")

    def __init__(self, gyro: float = 1e-3, accel: float = 1e-2, gyro_walk: float = 1e-5, accel_walk: float = 1e-4,
                 velocity_walk: float = 1e-4, extrinsic: float = 0.0, lidar: float = 0.02):
        self.gyro = float(gyro)
        self.accel = float(accel)
        self.gyro_walk = float(gyro_walk)
        self.accel_walk = float(accel_walk)
        self.velocity_walk = float(velocity_walk)
        self.extrinsic = float(extrinsic)
        self.lidar = float(lidar)

        for name in self.FIELDS:
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"Noise density '{name}' must be finite and nonnegative, got {value}")

    def __repr__(self):
        return "NoiseConfig(" + ", ".join(f"{name}={getattr(self, name)}" for name in self.FIELDS) + ")"

    def __eq__(self, other):
        return isinstance(other, NoiseConfig) and all(getattr(self, n) == getattr(other, n) for n in self.FIELDS)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    def spectral_density(self) -> np.ndarray:
        """Diagonal of the continuous process noise, ordered as the noise input matrix columns."""
        return np.concatenate((
            np.full(3, self.gyro ** 2),
            np.full(3, self.accel ** 2),
            np.full(3, self.gyro_walk ** 2),
            np.full(3, self.accel_walk ** 2),
            np.full(3, self.velocity_walk ** 2),
            np.full(6, self.extrinsic ** 2),
        ))


class FilterState():
    """
    Filter estimate: group element X, covariance Sigma, time t (s) and the
    gravity vector estimate (m/s^2, world frame).

    `kind` tells which error coordinates Sigma is expressed in.
    """
    __slots__ = ("X", "Sigma", "t", "gravity", "estimate_gravity", "kind")

    def __init__(self, X: GroupElement, Sigma: np.ndarray, gravity: np.ndarray, t: float = 0.0,
                 estimate_gravity: bool = False, kind: str = FILTER_EQF):
        self.X = X
        self.Sigma = np.asarray(Sigma, dtype=float)
        self.t = float(t)
        self.gravity = np.asarray(gravity, dtype=float)
        self.estimate_gravity = estimate_gravity
        self.kind = kind

        if self.Sigma.shape != (self.dim, self.dim):
            raise ValueError(f"Covariance shape {self.Sigma.shape} does not match dimension {self.dim}")

    def __repr__(self):
        return f"FilterState(kind={self.kind}, t={self.t}, dim={self.dim})"

    @staticmethod
    def from_estimate(xi: SystemState, Sigma: np.ndarray, gravity: np.ndarray, t: float = 0.0,
                      estimate_gravity: bool = False, kind: str = FILTER_EQF) -> "FilterState":
        """Start a filter at the state estimate xi."""
        return FilterState(transport(SystemState.origin(), xi), Sigma, gravity, t, estimate_gravity, kind)

    @property
    def dim(self) -> int:
        return STATE_DIM + GRAVITY_DIM if self.estimate_gravity else STATE_DIM

    def xi_hat(self) -> SystemState:
        return action_phi(self.X, SystemState.origin())

    def up(self) -> GravityDir:
        """The S^2 element estimated when gravity estimation is on."""
        return GravityDir.from_vector(-self.gravity)

    def replace(self, **changes) -> "FilterState":
        fields = {name: getattr(self, name) for name in self.__slots__}
        fields.update(changes)
        return FilterState(**fields)


def new_filter(xi: SystemState, Sigma: np.ndarray, gravity: np.ndarray, t: float = 0.0,
               estimate_gravity: bool = False) -> FilterState:
    return FilterState.from_estimate(xi, Sigma, gravity, t, estimate_gravity, FILTER_EQF)


def gravity_from_up(up: GravityDir) -> np.ndarray:
    return -up.vector()


def error_state(X_hat: GroupElement, xi: SystemState) -> SystemState:
    """e = phi(X_hat^-1, xi)"""
    return action_phi(g_inverse(X_hat), xi)


def chart(e: SystemState) -> np.ndarray:
    """Local coordinates at the origin: (log e_T, e_b, log e_K)."""
    return np.concatenate((e.T.log(), e.b, e.K.log()))


def chart_inverse(eps: np.ndarray) -> SystemState:
    eps = np.asarray(eps, dtype=float)
    return SystemState(ExtendedPose.exp(eps[NAV]), eps[BIAS].copy(), Pose.exp(eps[EXTRINSIC]))


def apply_error(X_hat: GroupElement, eps: np.ndarray) -> SystemState:
    """The state whose error coordinates relative to X_hat are eps."""
    return action_phi(X_hat, chart_inverse(eps))


def correct(X_hat: GroupElement, eps: np.ndarray) -> GroupElement:
    """Move X_hat so that phi(X_new, xi0) = apply_error(X_hat, eps) exactly."""
    return transport(SystemState.origin(), chart_inverse(eps)) * X_hat


def error_coordinates(state: FilterState, xi: SystemState, gravity: np.ndarray | None = None) -> np.ndarray:
    """Error coordinates of a (true) state with respect to the estimate, as used for NEES."""
    eps = chart(error_state(state.X, xi))
    if not state.estimate_gravity:
        return eps
    truth = state.gravity if gravity is None else gravity
    return np.concatenate((eps, state.up().boxminus(GravityDir.from_vector(-truth))))


def build_F(xi_hat: SystemState, u: SystemInput, g_w: np.ndarray | None = None,
            use_printed_extrinsic_block: bool = False, up: GravityDir | None = None) -> np.ndarray:
    """
    Closed form of the linear error dynamics eps_dot = F eps.

        F = [[F_T, -I, 0], [0, F_b, 0], [0, 0, F_K]]

    F_T holds g^ and the velocity-to-position identity, F_b is
    [[W], [Y, W], [Z, 0, W]] and F_K is diag(W, W). Passing
    use_printed_extrinsic_block=True puts Z below the diagonal of F_K as well.

    With `up` given the gravity coupling adds two columns (and zero rows).
    """
    g_w = u.g if g_w is None else np.asarray(g_w, dtype=float)
    dim = STATE_DIM if up is None else STATE_DIM + GRAVITY_DIM

    C = xi_hat.T.C
    v = xi_hat.T.v
    r = xi_hat.T.r
    b = xi_hat.b
    omega, acc, mu = u.w[0:3], u.w[3:6], u.w[6:9]

    w = C @ (omega - b[0:3])
    y = C @ (acc - b[3:6]) + hat(v) @ w + g_w
    z = C @ (mu - b[6:9]) + hat(r) @ w + v
    W = hat(w)

    F = np.zeros((dim, dim))
    F[3:6, 0:3] = GRAVITY_BLOCK_SIGN * hat(g_w)
    F[6:9, 3:6] = np.eye(3)
    F[NAV, BIAS] = -np.eye(9)
    F[BIAS, BIAS] = little_adjoint(GROUP_SE23, np.concatenate((w, y, z)))
    F[18:21, 18:21] = W
    F[21:24, 21:24] = W
    if use_printed_extrinsic_block:
        F[21:24, 18:21] = hat(z)

    if up is not None:
        F[3:6, GRAVITY] = -hat(g_w) @ build_Bg(up.g)
    return F


def noise_input_matrix(X_hat: GroupElement, dim: int = STATE_DIM) -> np.ndarray:
    """
    Map the 21 noise channels into error coordinates at the current estimate:
    white gyro/accel through the first six columns of Ad_T, bias walks
    through Ad_T and extrinsic drift through Ad_B.
    """
    Ad_T = X_hat.A.adjoint()
    G = np.zeros((dim, NOISE_DIM))
    G[NAV, 0:6] = Ad_T[:, 0:6]
    G[BIAS, 6:15] = Ad_T
    G[EXTRINSIC, 15:21] = X_hat.B.adjoint()
    return G


def transition_matrix(F: np.ndarray, dt: float, exact: bool = False) -> np.ndarray:
    """Phi = exp(F dt), truncated after the quadratic term unless exact."""
    if exact:
        return expm(F * dt)
    Fdt = F * dt
    return np.eye(F.shape[0]) + Fdt + 0.5 * (Fdt @ Fdt)


def check_imu(omega: np.ndarray, acc: np.ndarray, dt: float):
    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(acc)) and np.isfinite(dt)):
        raise NonFiniteInput(f"Non-finite IMU sample: omega={np.asarray(omega).tolist()}, a={np.asarray(acc).tolist()}, dt={dt}")
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"Propagation step {dt} s outside (0, {MAX_DT}]")


def imu_input(omega: np.ndarray, acc: np.ndarray, gravity: np.ndarray, mu: np.ndarray | None = None) -> SystemInput:
    return SystemInput.from_imu(np.asarray(omega, dtype=float), np.asarray(acc, dtype=float), gravity, mu)


def propagate_mean(X_hat: GroupElement, xi_hat: SystemState, u: SystemInput, dt: float) -> GroupElement:
    """X <- X exp_G(dt Lambda(xi_hat, u)), rotations kept orthonormal."""
    X = X_hat * g_exp(dt * lift_lambda(xi_hat, u))
    return GroupElement(X.A.normalized(), X.a, X.B.normalized())


def propagate_covariance(Sigma: np.ndarray, F: np.ndarray, G: np.ndarray, noise: NoiseConfig, dt: float,
                         exact: bool = False) -> np.ndarray:
    Phi = transition_matrix(F, dt, exact)
    Q = (G * noise.spectral_density()) @ G.T
    Sigma = Phi @ Sigma @ Phi.T + Q * dt
    return 0.5 * (Sigma + Sigma.T)


def propagate(state: FilterState, omega: np.ndarray, acc: np.ndarray, dt: float, noise: NoiseConfig,
              mu: np.ndarray | None = None, exact_discretization: bool = False,
              use_printed_extrinsic_block: bool = False) -> FilterState:
    """
    Advance the filter by one IMU sample (omega rad/s, acc m/s^2) over dt seconds.
    Bias and extrinsic drift inputs are zero in the mean.
    """
    check_imu(omega, acc, dt)
    u = imu_input(omega, acc, state.gravity, mu)
    xi_hat = state.xi_hat()
    up = state.up() if state.estimate_gravity else None

    F = build_F(xi_hat, u, state.gravity, use_printed_extrinsic_block, up)
    G = noise_input_matrix(state.X, state.dim)
    Sigma = propagate_covariance(state.Sigma, F, G, noise, dt, exact_discretization)
    return state.replace(X=propagate_mean(state.X, xi_hat, u, dt), Sigma=Sigma, t=state.t + dt)


def condition_covariance(Sigma: np.ndarray) -> np.ndarray:
    """Symmetrize and floor the eigenvalues at COVARIANCE_FLOOR when needed."""
    Sigma = 0.5 * (Sigma + Sigma.T)
    eigvals = np.linalg.eigvalsh(Sigma)
    if eigvals[0] >= COVARIANCE_FLOOR:
        return Sigma

    logger.debug("Clamping covariance, smallest eigenvalue %.3e", eigvals[0])
    eigvals, eigvecs = np.linalg.eigh(Sigma)
    Sigma = (eigvecs * np.maximum(eigvals, COVARIANCE_FLOOR)) @ eigvecs.T
    return 0.5 * (Sigma + Sigma.T)


def kalman_gain(Sigma: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    """K = Sigma H^T (H Sigma H^T + R)^-1 for per-row variances R."""
    HS = H @ Sigma
    S = HS @ H.T + np.diag(R)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > CONDITION_MAX:
        raise SingularInnovation(f"Innovation covariance condition number {cond:.3e} exceeds {CONDITION_MAX:.0e}")
    return np.linalg.solve(S, HS).T


def pad_rows(H: np.ndarray, dim: int) -> np.ndarray:
    """Measurement rows carry no gravity columns; widen them with zeros."""
    if H.shape[1] == dim:
        return H
    wide = np.zeros((H.shape[0], dim))
    wide[:, 0:H.shape[1]] = H
    return wide


Rows = tuple[np.ndarray, np.ndarray, np.ndarray]
Measure = Callable[[SystemState], Rows]


def iterated_update(state: FilterState, measure: Measure | Rows, max_iter: int,
                    local: Callable[[FilterState, FilterState], np.ndarray],
                    retract: Callable[[FilterState, np.ndarray], FilterState]) -> FilterState:
    """
    Shared iterated update. `measure` returns (z, H, R) linearized at a given
    state estimate, or is a fixed row set (then a single pass is made).
    `local(iterate, prior)` expresses the prior mean in the iterate's error
    coordinates, `retract(iterate, delta)` applies a correction.
    """
    if not callable(measure):
        rows = measure
        measure = lambda _xi: rows
        max_iter = 1
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")

    prior = state
    current = state
    K = H = None
    for iteration in range(max_iter):
        z, H_i, R = measure(current.xi_hat())
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.size == 0:
            if iteration == 0:
                raise ValueError("Update needs at least one measurement row")
            break
        R = np.atleast_1d(np.asarray(R, dtype=float))
        if np.any(R <= 0.0):
            raise ValueError(f"Measurement variances must be positive, got minimum {R.min()}")

        H = pad_rows(np.atleast_2d(np.asarray(H_i, dtype=float)), state.dim)
        d = local(current, prior)
        K = kalman_gain(prior.Sigma, H, R)
        delta = d + K @ (z - H @ d)
        current = retract(current, delta)

        step = float(np.linalg.norm(delta))
        logger.debug("Update iteration %d: %d rows, step %.3e", iteration + 1, z.size, step)
        if step < CONVERGENCE_TOLERANCE:
            break

    Sigma = (np.eye(state.dim) - K @ H) @ prior.Sigma
    return current.replace(Sigma=condition_covariance(Sigma))


def _local(current: FilterState, prior: FilterState) -> np.ndarray:
    return error_coordinates(current, prior.xi_hat(), prior.gravity)


def _retract(current: FilterState, delta: np.ndarray) -> FilterState:
    X = correct(current.X, delta[0:STATE_DIM])
    if not current.estimate_gravity:
        return current.replace(X=X)
    return current.replace(X=X, gravity=gravity_from_up(current.up().boxplus(delta[GRAVITY])))


def update(state: FilterState, measure: Measure | Rows, max_iter: int = 1) -> FilterState:
    """
    (Iterated) update. The correction is applied on the left through the
    origin chart: X_new = transport(xi0, chart^-1(delta)) X.
    """
    return iterated_update(state, measure, max_iter, _local, _retract)


def error_velocity(X_hat: GroupElement, eps: np.ndarray, u_true: SystemInput, u_hat: SystemInput,
                   dt: float = FD_TIME_STEP) -> np.ndarray:
    """
    Time derivative of the exact error coordinates when the true state sits at
    apply_error(X_hat, eps) and follows u_true while the estimate follows u_hat.
    """
    xi = apply_error(X_hat, eps)
    lam = lift_lambda(action_phi(X_hat, SystemState.origin()), u_hat)
    velocity = system_velocity(xi, u_true)

    def at(t: float) -> np.ndarray:
        return chart(error_state(X_hat * g_exp(t * lam), state_retract(xi, t * velocity)))

    return (at(dt) - at(-dt)) / (2.0 * dt)


def numerical_F(X_hat: GroupElement, u: SystemInput, up: GravityDir | None = None,
                h: float = FD_STATE_STEP) -> np.ndarray:
    """
    Finite-difference Jacobian of the exact error dynamics at eps = 0.
    Gravity columns perturb the true gravity direction, its rows stay zero.
    """
    dim = STATE_DIM if up is None else STATE_DIM + GRAVITY_DIM
    F = np.zeros((dim, dim))
    for j in range(STATE_DIM):
        step = np.zeros(STATE_DIM)
        step[j] = h
        F[0:STATE_DIM, j] = (error_velocity(X_hat, step, u, u) - error_velocity(X_hat, -step, u, u)) / (2.0 * h)

    if up is not None:
        zero = np.zeros(STATE_DIM)
        for j in range(GRAVITY_DIM):
            step = np.zeros(GRAVITY_DIM)
            step[j] = h
            u_plus = SystemInput(u.w, gravity_from_up(up.boxplus(step)), u.tau, u.tau_k)
            u_minus = SystemInput(u.w, gravity_from_up(up.boxplus(-step)), u.tau, u.tau_k)
            F[0:STATE_DIM, STATE_DIM + j] = (error_velocity(X_hat, zero, u_plus, u) - error_velocity(X_hat, zero, u_minus, u)) / (2.0 * h)
    return F


# Block partition of F for reporting
F_BLOCKS = (("nav", NAV), ("bias", BIAS), ("extrinsic", EXTRINSIC), ("gravity", GRAVITY))


def compare_blocks(F_closed: np.ndarray, F_numeric: np.ndarray,
                   tolerance: float = FD_RELATIVE_TOLERANCE) -> list[dict]:
    """
    Compare two Jacobians block by block. A block passes when
    |dF| <= tolerance * max(1, |F_numeric block|) (Frobenius norms).
    """
    dim = F_closed.shape[0]
    blocks = [(name, s) for name, s in F_BLOCKS if s.start < dim]
    result = []
    for row_name, rows in blocks:
        for col_name, cols in blocks:
            reference = F_numeric[rows, cols]
            error = float(np.linalg.norm(F_closed[rows, cols] - reference))
            allowed = tolerance * max(1.0, float(np.linalg.norm(reference)))
            result.append({
                "block": f"{row_name}/{col_name}",
                "rows": (rows.start, rows.stop),
                "cols": (cols.start, cols.stop),
                "error": error,
                "allowed": allowed,
                "ok": error <= allowed,
            })
    return result
