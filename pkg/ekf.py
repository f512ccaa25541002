"""
Conventional error-state EKF on the same state as the equivariant filter.

Error coordinates (24, plus 2 for gravity when estimated):
    dtheta  body-frame attitude, C = C_hat exp(dtheta)
    dv, dr  additive velocity and position
    db      additive gyro, accel and virtual velocity bias
    dphi    body-frame extrinsic rotation, C_K = C_K_hat exp(dphi)
    dl      additive lever arm

The mean is propagated exactly as the equivariant filter does it, so the two
estimates only differ through their covariances and updates.
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

import eqf
from eqf import (FILTER_EKF, GRAVITY, NOISE_DIM, STATE_DIM, FilterState,
                 Measure, NoiseConfig, Rows)
from gravity import GravityDir, build_Bg
from lie_algebra import ExtendedPose, Pose, hat, so3_exp, so3_log
from symmetry import SystemInput, SystemState, transport


def new_filter(xi: SystemState, Sigma: np.ndarray, gravity: np.ndarray, t: float = 0.0,
               estimate_gravity: bool = False) -> FilterState:
    return FilterState.from_estimate(xi, Sigma, gravity, t, estimate_gravity, FILTER_EKF)


def local_coordinates(xi_0: SystemState, xi_1: SystemState) -> np.ndarray:
    """EKF error of xi_1 with respect to the estimate xi_0."""
    return np.concatenate((
        so3_log(xi_0.T.C.T @ xi_1.T.C),
        xi_1.T.v - xi_0.T.v,
        xi_1.T.r - xi_0.T.r,
        xi_1.b - xi_0.b,
        so3_log(xi_0.K.C.T @ xi_1.K.C),
        xi_1.K.l - xi_0.K.l,
    ))


def retract_state(xi: SystemState, delta: np.ndarray) -> SystemState:
    T = ExtendedPose(xi.T.C @ so3_exp(delta[0:3]), xi.T.v + delta[3:6], xi.T.r + delta[6:9])
    K = Pose(xi.K.C @ so3_exp(delta[18:21]), xi.K.l + delta[21:24])
    return SystemState(T.normalized(), xi.b + delta[9:18], K.normalized())


def error_coordinates(state: FilterState, xi: SystemState, gravity: np.ndarray | None = None) -> np.ndarray:
    eps = local_coordinates(state.xi_hat(), xi)
    if not state.estimate_gravity:
        return eps
    truth = state.gravity if gravity is None else gravity
    return np.concatenate((eps, state.up().boxminus(GravityDir.from_vector(-truth))))


def build_F(xi_hat: SystemState, u: SystemInput, g_w: np.ndarray | None = None,
            up: GravityDir | None = None) -> np.ndarray:
    """Jacobian of the EKF error dynamics at the estimate."""
    g_w = u.g if g_w is None else np.asarray(g_w, dtype=float)
    dim = STATE_DIM if up is None else STATE_DIM + 2
    C = xi_hat.T.C
    b = xi_hat.b
    omega, acc, mu = u.w[0:3], u.w[3:6], u.w[6:9]
    I = np.eye(3)

    F = np.zeros((dim, dim))
    F[0:3, 0:3] = -hat(omega - b[0:3])
    F[0:3, 9:12] = -I
    F[3:6, 0:3] = -C @ hat(acc - b[3:6])
    F[3:6, 12:15] = -C
    F[6:9, 0:3] = -C @ hat(mu - b[6:9])
    F[6:9, 3:6] = I
    F[6:9, 15:18] = -C
    if up is not None:
        F[3:6, GRAVITY] = -hat(g_w) @ build_Bg(up.g)
    return F


def noise_input_matrix(xi_hat: SystemState, dim: int = STATE_DIM) -> np.ndarray:
    G = np.zeros((dim, NOISE_DIM))
    G[0:3, 0:3] = np.eye(3)
    G[3:6, 3:6] = xi_hat.T.C
    G[9:18, 6:15] = np.eye(9)
    G[18:21, 15:18] = np.eye(3)
    G[21:24, 18:21] = xi_hat.K.C
    return G


def propagate(state: FilterState, omega: np.ndarray, acc: np.ndarray, dt: float, noise: NoiseConfig,
              mu: np.ndarray | None = None, exact_discretization: bool = False) -> FilterState:
    eqf.check_imu(omega, acc, dt)
    u = eqf.imu_input(omega, acc, state.gravity, mu)
    xi_hat = state.xi_hat()
    up = state.up() if state.estimate_gravity else None

    F = build_F(xi_hat, u, state.gravity, up)
    G = noise_input_matrix(xi_hat, state.dim)
    Sigma = eqf.propagate_covariance(state.Sigma, F, G, noise, dt, exact_discretization)
    return state.replace(X=eqf.propagate_mean(state.X, xi_hat, u, dt), Sigma=Sigma, t=state.t + dt)


def _local(current: FilterState, prior: FilterState) -> np.ndarray:
    return error_coordinates(current, prior.xi_hat(), prior.gravity)


def _retract(current: FilterState, delta: np.ndarray) -> FilterState:
    xi = retract_state(current.xi_hat(), delta)
    X = transport(SystemState.origin(), xi)
    if not current.estimate_gravity:
        return current.replace(X=X)
    return current.replace(X=X, gravity=eqf.gravity_from_up(current.up().boxplus(delta[GRAVITY])))


def update(state: FilterState, measure: Measure | Rows, max_iter: int = 1) -> FilterState:
    """Additive/body-frame correction of the estimate, same gain and iteration as the EqF."""
    return eqf.iterated_update(state, measure, max_iter, _local, _retract)


def ekf_baseline_step(state: FilterState, imu: np.ndarray, noise: NoiseConfig,
                      measure: Measure | Rows | None = None, max_iter: int = 1) -> FilterState:
    """
    One scan interval of the baseline: propagate through the rows of `imu`
    (dt, wx, wy, wz, ax, ay, az) then update with `measure` when given.
    """
    for row in np.atleast_2d(imu):
        state = propagate(state, row[1:4], row[4:7], float(row[0]), noise)
    if measure is None:
        return state
    return update(state, measure, max_iter)
