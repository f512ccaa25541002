"""
Executable property suite: Lie group primitives, group laws, actions,
lift, equivariance, the closed-form Jacobians against finite differences,
S^2 utilities and map search exactness. Every check is seeded and reports
its worst residual.
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

import eqf
from ekf import retract_state
from gravity import GravityDir, build_Bg, s2_boxminus, s2_boxplus
from lie_algebra import (GROUP_SE3, GROUP_SE23, GROUP_SO3, adjoint_matrix,
                         algebra_vee, as_matrix, compose, exp,
                         left_translation_differential, little_adjoint, log,
                         right_translation_differential)
from measurement import (MapIndex, PlaneFit, build_row, numerical_row, residual,
                         to_world)
from symmetry import (GroupElement, SystemInput, SystemState, action_phi,
                      action_psi, check_equivariance, g_compose, g_inverse,
                      lift_residual, random_group_element, random_input,
                      random_state, transport)

logger = logging.getLogger(__name__)

VERIFY_SEED = 2025
GROUP_CASES = 1000
JACOBIAN_CASES = 100
RANDOM_SCALE: float = 0.5   # std of the algebra coordinates of random elements

# Named faults for mutation testing: module attribute and the value injected
FAULTS = {
    "f-gravity-sign": (eqf, "GRAVITY_BLOCK_SIGN", -1.0),
}


class CheckResult():
    __slots__ = ("name", "residual", "tolerance", "cases", "seconds")

    def __init__(self, name: str, residual: float, tolerance: float, cases: int, seconds: float):
        self.name = name
        self.residual = residual
        self.tolerance = tolerance
        self.cases = cases
        self.seconds = seconds

    def __repr__(self):
        return f"CheckResult({self.name}, residual={self.residual:.3e}, ok={self.ok})"

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.residual)) and self.residual <= self.tolerance


CHECKS = []


def check(name: str, tolerance: float, cases: int):
    """Register a check function fn(rng, cases) -> worst residual."""
    def register(fn: Callable[[np.random.Generator, int], float]):
        CHECKS.append((name, tolerance, cases, fn))
        return fn
    return register


def group_distance(X: GroupElement, Y: GroupElement) -> float:
    return max(float(np.linalg.norm(X.A.as_matrix() - Y.A.as_matrix())), float(np.linalg.norm(X.a - Y.a)),
               float(np.linalg.norm(X.B.as_matrix() - Y.B.as_matrix())))


def state_distance(xi: SystemState, zeta: SystemState) -> float:
    return max(float(np.linalg.norm(xi.T.as_matrix() - zeta.T.as_matrix())), float(np.linalg.norm(xi.b - zeta.b)),
               float(np.linalg.norm(xi.K.as_matrix() - zeta.K.as_matrix())))


def input_distance(u: SystemInput, w: SystemInput) -> float:
    return max(float(np.linalg.norm(u.w - w.w)), float(np.linalg.norm(u.g - w.g)),
               float(np.linalg.norm(u.tau - w.tau)), float(np.linalg.norm(u.tau_k - w.tau_k)))


LIE_GROUPS = ((GROUP_SO3, 3), (GROUP_SE3, 6), (GROUP_SE23, 9))
LIE_FD_STEP: float = 1e-5


def _random_element(rng: np.random.Generator, group: str, size: int):
    return exp(group, RANDOM_SCALE * rng.normal(size=size))


@check("lie-exp-log", 1e-9, GROUP_CASES)
def check_exp_log(rng: np.random.Generator, cases: int) -> float:
    """log(exp(v)) = v for |v| <= 2 on every group."""
    worst = 0.0
    for _ in range(cases):
        for group, size in LIE_GROUPS:
            v = rng.normal(size=size)
            v *= rng.uniform(0.0, 2.0) / np.linalg.norm(v)
            worst = max(worst, float(np.linalg.norm(log(group, exp(group, v)) - v)))
    return worst


@check("lie-adjoint", 1e-6, GROUP_CASES)
def check_adjoint(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        for group, size in LIE_GROUPS:
            X, Y = _random_element(rng, group, size), _random_element(rng, group, size)
            u = RANDOM_SCALE * rng.normal(size=size)
            conjugated = left_translation_differential(group, X, u) @ np.linalg.inv(as_matrix(group, X))
            derivative = (adjoint_matrix(group, exp(group, LIE_FD_STEP * u)) -
                          adjoint_matrix(group, exp(group, -LIE_FD_STEP * u))) / (2.0 * LIE_FD_STEP)
            worst = max(worst,
                        float(np.max(np.abs(adjoint_matrix(group, compose(group, X, Y)) -
                                            adjoint_matrix(group, X) @ adjoint_matrix(group, Y)))),
                        float(np.max(np.abs(adjoint_matrix(group, X) @ u - algebra_vee(group, conjugated)))),
                        float(np.max(np.abs(derivative - little_adjoint(group, u)))))
    return worst


@check("lie-translation", 1e-6, JACOBIAN_CASES)
def check_translation_differentials(rng: np.random.Generator, cases: int) -> float:
    """Left and right translation differentials against d/dt X exp(tu) and exp(tu) X."""
    worst = 0.0
    for _ in range(cases):
        for group, size in LIE_GROUPS:
            X = _random_element(rng, group, size)
            u = RANDOM_SCALE * rng.normal(size=size)
            plus, minus = exp(group, LIE_FD_STEP * u), exp(group, -LIE_FD_STEP * u)
            left = (as_matrix(group, compose(group, X, plus)) - as_matrix(group, compose(group, X, minus))) / (2.0 * LIE_FD_STEP)
            right = (as_matrix(group, compose(group, plus, X)) - as_matrix(group, compose(group, minus, X))) / (2.0 * LIE_FD_STEP)
            worst = max(worst,
                        float(np.max(np.abs(left - left_translation_differential(group, X, u)))),
                        float(np.max(np.abs(right - right_translation_differential(group, X, u)))))
    return worst


@check("group-axioms", 1e-10, GROUP_CASES)
def check_group_axioms(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    I = GroupElement.identity()
    for _ in range(cases):
        X, Y, Z = (random_group_element(rng, RANDOM_SCALE) for _ in range(3))
        worst = max(worst,
                    group_distance(g_compose(g_compose(X, Y), Z), g_compose(X, g_compose(Y, Z))),
                    group_distance(g_compose(X, I), X),
                    group_distance(g_compose(I, X), X),
                    group_distance(g_compose(X, g_inverse(X)), I),
                    group_distance(g_compose(g_inverse(X), X), I))
    return worst


@check("phi-right-action", 1e-10, GROUP_CASES)
def check_phi_action(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        X, Y = random_group_element(rng, RANDOM_SCALE), random_group_element(rng, RANDOM_SCALE)
        xi = random_state(rng, RANDOM_SCALE)
        worst = max(worst,
                    state_distance(action_phi(GroupElement.identity(), xi), xi),
                    state_distance(action_phi(Y, action_phi(X, xi)), action_phi(X * Y, xi)))
    return worst


@check("psi-right-action", 1e-10, GROUP_CASES)
def check_psi_action(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        X, Y = random_group_element(rng, RANDOM_SCALE), random_group_element(rng, RANDOM_SCALE)
        u = random_input(rng, RANDOM_SCALE)
        worst = max(worst,
                    input_distance(action_psi(GroupElement.identity(), u), u),
                    input_distance(action_psi(Y, action_psi(X, u)), action_psi(X * Y, u)))
    return worst


@check("transitive-free", 1e-10, GROUP_CASES)
def check_transport(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        xi_1, xi_2 = random_state(rng, RANDOM_SCALE), random_state(rng, RANDOM_SCALE)
        X = random_group_element(rng, RANDOM_SCALE)
        worst = max(worst,
                    state_distance(action_phi(transport(xi_1, xi_2), xi_1), xi_2),
                    group_distance(transport(xi_1, action_phi(X, xi_1)), X))
    return worst


@check("lift-condition", 1e-5, GROUP_CASES)
def check_lift(rng: np.random.Generator, cases: int) -> float:
    return max(lift_residual(random_state(rng, RANDOM_SCALE), random_input(rng, RANDOM_SCALE)) for _ in range(cases))


@check("equivariance", 1e-5, GROUP_CASES)
def check_equivariance_residual(rng: np.random.Generator, cases: int) -> float:
    return max(check_equivariance(random_group_element(rng, RANDOM_SCALE), random_state(rng, RANDOM_SCALE),
                                  random_input(rng, RANDOM_SCALE)) for _ in range(cases))


def _block_residual(F_closed: np.ndarray, F_numeric: np.ndarray) -> float:
    """Largest block error relative to max(1, |block|)."""
    blocks = eqf.compare_blocks(F_closed, F_numeric)
    for block in blocks:
        if not block["ok"]:
            logger.warning("F block %s off by %.3e (allowed %.3e)", block["block"], block["error"], block["allowed"])
    return max(block["error"] / block["allowed"] * eqf.FD_RELATIVE_TOLERANCE for block in blocks)


@check("f-jacobian", eqf.FD_RELATIVE_TOLERANCE, JACOBIAN_CASES)
def check_F(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        X_hat = random_group_element(rng, RANDOM_SCALE)
        u = random_input(rng, RANDOM_SCALE, drift=False)
        F = eqf.build_F(action_phi(X_hat, SystemState.origin()), u)
        worst = max(worst, _block_residual(F, eqf.numerical_F(X_hat, u)))
    return worst


def _down_gravity(rng: np.random.Generator) -> np.ndarray:
    """Gravity tilted at most ~30 degrees from straight down."""
    up = s2_boxplus(np.array([0.0, 0.0, 1.0]), rng.uniform(-0.35, 0.35, 2))
    return -9.81 * up


@check("f-jacobian-gravity", eqf.FD_RELATIVE_TOLERANCE, JACOBIAN_CASES)
def check_F_gravity(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        X_hat = random_group_element(rng, RANDOM_SCALE)
        u = random_input(rng, RANDOM_SCALE, drift=False)
        u = SystemInput(u.w, _down_gravity(rng))
        up = GravityDir.from_vector(-u.g)
        F = eqf.build_F(action_phi(X_hat, SystemState.origin()), u, up=up)
        worst = max(worst, _block_residual(F, eqf.numerical_F(X_hat, u, up)))
    return worst


def _random_plane(rng: np.random.Generator, xi: SystemState, p: np.ndarray) -> PlaneFit:
    """A valid plane passing within 0.5 m of the world point of p."""
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    q = to_world(xi, p) + rng.uniform(-0.5, 0.5) * n
    return PlaneFit(n, q, 0.0, 0.0, True)


@check("h-row-eqf", 1e-5, JACOBIAN_CASES)
def check_H_eqf(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        X_hat = random_group_element(rng, RANDOM_SCALE)
        xi_hat = action_phi(X_hat, SystemState.origin())
        p = rng.normal(0.0, 2.0, 3)
        plane = _random_plane(rng, xi_hat, p)
        _, H = build_row(xi_hat, p, plane, eqf.FILTER_EQF, gate=np.inf)
        worst = max(worst, float(np.max(np.abs(H - numerical_row(X_hat, p, plane)))))
    return worst


@check("h-row-ekf", 1e-5, JACOBIAN_CASES)
def check_H_ekf(rng: np.random.Generator, cases: int) -> float:
    step = 1e-6
    worst = 0.0
    for _ in range(cases):
        xi_hat = random_state(rng, RANDOM_SCALE)
        p = rng.normal(0.0, 2.0, 3)
        plane = _random_plane(rng, xi_hat, p)
        _, H = build_row(xi_hat, p, plane, eqf.FILTER_EKF, gate=np.inf)
        numeric = np.zeros(eqf.STATE_DIM)
        for j in range(eqf.STATE_DIM):
            e = np.zeros(eqf.STATE_DIM)
            e[j] = step
            numeric[j] = (residual(retract_state(xi_hat, e), p, plane) - residual(retract_state(xi_hat, -e), p, plane)) / (2.0 * step)
        worst = max(worst, float(np.max(np.abs(H - numeric))))
    return worst


def _random_direction(rng: np.random.Generator) -> np.ndarray:
    """Unit vector away from the B_g pole."""
    while True:
        g = rng.normal(size=3)
        g /= np.linalg.norm(g)
        if g[2] > -0.9:
            return g


@check("s2-basis", 1e-12, GROUP_CASES)
def check_s2_basis(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        g = _random_direction(rng)
        B = build_Bg(g)
        worst = max(worst,
                    float(np.max(np.abs(B.T @ B - np.eye(2)))),
                    float(np.max(np.abs(B.T @ g))),
                    float(np.max(np.abs(B @ B.T - (np.eye(3) - np.outer(g, g))))))
    return worst


@check("s2-round-trip", 1e-9, GROUP_CASES)
def check_s2_round_trip(rng: np.random.Generator, cases: int) -> float:
    worst = 0.0
    for _ in range(cases):
        g = _random_direction(rng)
        x = rng.uniform(-1.0, 1.0, 2)
        x *= rng.uniform(0.0, 0.99) / max(np.linalg.norm(x), 1e-12)
        worst = max(worst, float(np.linalg.norm(s2_boxminus(g, s2_boxplus(g, x)) - x)))
    return worst


@check("knn-exact", 0.0, 50)
def check_knn(rng: np.random.Generator, cases: int) -> float:
    """Number of queries whose neighbours differ from a linear scan."""
    index = MapIndex(voxel_size=0.0)
    points = rng.uniform(-10.0, 10.0, (1000, 3))
    index.insert(points[:800])
    index.insert(points[800:])
    mismatches = 0
    for _ in range(cases):
        p = rng.uniform(-10.0, 10.0, 3)
        distances = np.linalg.norm(points - p, axis=1)
        expected = np.lexsort((np.arange(len(points)), distances))[:5]
        mismatches += int(not np.array_equal(index.knn(p, 5)[2], expected))
    return float(mismatches)


def check_names() -> list[str]:
    return [name for name, _, _, _ in CHECKS]


def run_checks(name_filter: str | None = None, fault: str | None = None, seed: int = VERIFY_SEED,
               progress: Callable[[str, int, int], None] | None = None) -> list[CheckResult]:
    """
    Run the registered checks whose name contains name_filter. A named
    fault from FAULTS is injected for the duration of the run.
    """
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"Unknown fault '{fault}', expected one of {sorted(FAULTS)}")
    selected = [c for c in CHECKS if not name_filter or name_filter in c[0]]

    saved = None
    if fault is not None:
        module, attribute, value = FAULTS[fault]
        saved = getattr(module, attribute)
        setattr(module, attribute, value)
        logger.warning("Injected fault %s", fault)

    results = []
    try:
        for i, (name, tolerance, cases, fn) in enumerate(selected):
            if progress:
                progress(name, i, len(selected))
            start = time.perf_counter()
            value = fn(np.random.default_rng(seed), cases)
            result = CheckResult(name, float(value), tolerance, cases, time.perf_counter() - start)
            if not result.ok:
                logger.warning("Check %s failed: residual %.3e > %.1e", name, result.residual, tolerance)
            results.append(result)
    finally:
        if fault is not None:
            module, attribute, _ = FAULTS[fault]
            setattr(module, attribute, saved)
    return results
