"""
Tests for the equivariant filter: F matrix, propagation and the update.
"""
import unittest

import numpy as np

import eqf
from eqf import (FilterState, NoiseConfig, NonFiniteInput, SingularInnovation,
                 apply_error, build_F, compare_blocks, error_coordinates,
                 new_filter, numerical_F, propagate, update)
from gravity import GravityDir
from lie_algebra import GROUP_SE23, hat, little_adjoint, so3_exp
from symmetry import (GroupElement, SystemInput, SystemState, action_phi,
                      random_group_element, random_input)

GRAVITY = np.array([0.0, 0.0, -9.81])


def quiet_noise() -> NoiseConfig:
    return NoiseConfig(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.02)


def yaw(C: np.ndarray) -> float:
    return float(np.arctan2(C[1, 0], C[0, 0]))


class BuildFTest(unittest.TestCase):
    """
    Closed form of the error dynamics against substitution and finite differences.
    """
    def test_origin_blocks(self):
        """At rest in the origin only the gravity, velocity and bias coupling blocks are set"""
        u = SystemInput.from_imu(np.zeros(3), np.zeros(3), GRAVITY)
        F = build_F(SystemState.origin(), u)
        expected = np.zeros((24, 24))
        expected[3:6, 0:3] = hat(GRAVITY)
        expected[6:9, 3:6] = np.eye(3)
        expected[0:9, 9:18] = -np.eye(9)
        expected[12:15, 9:12] = hat(GRAVITY)
        np.testing.assert_array_equal(F, expected)

    def test_w_vanishes_when_gyro_equals_bias(self):
        """omega = b_g gives W = 0 whatever the attitude"""
        xi = SystemState(action_phi(random_group_element(np.random.default_rng(3)), SystemState.origin()).T,
                         np.concatenate(([0.1, -0.2, 0.05], np.zeros(6))))
        u = SystemInput.from_imu(np.array([0.1, -0.2, 0.05]), np.zeros(3), GRAVITY)
        F = build_F(xi, u)
        np.testing.assert_array_equal(F[18:21, 18:21], np.zeros((3, 3)))
        np.testing.assert_array_equal(F[21:24, 21:24], np.zeros((3, 3)))
        np.testing.assert_array_equal(F[9:12, 9:12], np.zeros((3, 3)))

    def test_bias_block_is_little_adjoint(self):
        """F_b is ad of (w, y, z) on se_2(3)"""
        rng = np.random.default_rng(5)
        X = random_group_element(rng, 0.5)
        xi = action_phi(X, SystemState.origin())
        u = random_input(rng, 0.5, drift=False)
        F = build_F(xi, u)
        C, v, r, b = xi.T.C, xi.T.v, xi.T.r, xi.b
        w = C @ (u.w[0:3] - b[0:3])
        y = C @ (u.w[3:6] - b[3:6]) + hat(v) @ w + u.g
        z = C @ (u.w[6:9] - b[6:9]) + hat(r) @ w + v
        np.testing.assert_allclose(F[9:18, 9:18], little_adjoint(GROUP_SE23, np.concatenate((w, y, z))), atol=1e-14)

    def test_matches_numerical_jacobian(self):
        """Every block agrees with the finite-difference Jacobian of the exact error dynamics"""
        rng = np.random.default_rng(2025)
        for _ in range(3):
            X = random_group_element(rng, 0.5)
            u = random_input(rng, 0.5, drift=False)
            blocks = compare_blocks(build_F(action_phi(X, SystemState.origin()), u), numerical_F(X, u))
            self.assertEqual([b["block"] for b in blocks if not b["ok"]], [])

    def test_gravity_columns(self):
        """With gravity estimation the 24-state part is unchanged and the gravity columns match"""
        rng = np.random.default_rng(9)
        X = random_group_element(rng, 0.5)
        u = random_input(rng, 0.5, drift=False)
        u = SystemInput(u.w, GRAVITY)
        up = GravityDir.from_vector(-GRAVITY)
        xi = action_phi(X, SystemState.origin())
        F = build_F(xi, u, up=up)
        np.testing.assert_array_equal(F[0:24, 0:24], build_F(xi, u))
        blocks = compare_blocks(F, numerical_F(X, u, up))
        self.assertEqual([b["block"] for b in blocks if not b["ok"]], [])

    def test_printed_extrinsic_block_flag(self):
        """The alternative F_K form only adds the off-diagonal block"""
        rng = np.random.default_rng(4)
        xi = action_phi(random_group_element(rng, 0.5), SystemState.origin())
        u = random_input(rng, 0.5, drift=False)
        F, F_printed = build_F(xi, u), build_F(xi, u, use_printed_extrinsic_block=True)
        diff = F_printed - F
        np.testing.assert_array_equal(diff[0:21], np.zeros((21, 24)))
        self.assertGreater(np.abs(diff[21:24, 18:21]).max(), 0.0)


class PropagateTest(unittest.TestCase):
    """
    Mean and covariance propagation.
    """
    def test_stationary_equilibrium(self):
        """Exact stationary IMU keeps the estimate in place for 10 s"""
        state = new_filter(SystemState.origin(), np.eye(24) * 1e-4, GRAVITY)
        for _ in range(1000):
            state = propagate(state, np.zeros(3), -GRAVITY, 0.01, quiet_noise())
        xi = state.xi_hat()
        np.testing.assert_allclose(xi.T.as_matrix(), np.eye(5), atol=1e-9)
        self.assertAlmostEqual(state.t, 10.0, places=9)

    def test_constant_yaw_rate(self):
        """0.1 rad/s about z for 10 s turns by 1 rad without moving"""
        state = new_filter(SystemState.origin(), np.eye(24) * 1e-4, GRAVITY)
        omega = np.array([0.0, 0.0, 0.1])
        for _ in range(1000):
            C = state.xi_hat().T.C
            state = propagate(state, omega, -C.T @ GRAVITY, 0.01, quiet_noise())
        xi = state.xi_hat()
        self.assertAlmostEqual(yaw(xi.T.C), 1.0, places=9)
        self.assertLess(float(np.linalg.norm(xi.T.r)), 1e-6)

    def test_trace_grows_with_noise(self):
        """Process noise strictly inflates the covariance"""
        state = new_filter(SystemState.origin(), np.eye(24) * 1e-4, GRAVITY)
        noise = NoiseConfig(1e-3, 1e-2, 1e-5, 1e-4, 1e-4, 1e-6, 0.02)
        traces = []
        for _ in range(20):
            state = propagate(state, np.array([0.01, 0.0, 0.02]), -GRAVITY + 0.1, 0.01, noise)
            traces.append(np.trace(state.Sigma))
        self.assertTrue(np.all(np.diff(traces) > 0.0))

    def test_exact_discretization_close(self):
        """The truncated transition matrix stays close to expm at IMU rates"""
        rng = np.random.default_rng(8)
        state = new_filter(action_phi(random_group_element(rng, 0.3), SystemState.origin()), np.eye(24) * 1e-3, GRAVITY)
        a = propagate(state, np.array([0.1, 0.2, -0.1]), np.array([0.3, -0.1, 9.7]), 0.005, quiet_noise())
        b = propagate(state, np.array([0.1, 0.2, -0.1]), np.array([0.3, -0.1, 9.7]), 0.005, quiet_noise(), exact_discretization=True)
        np.testing.assert_allclose(a.Sigma, b.Sigma, atol=1e-8)

    def test_non_finite_input(self):
        """NaN samples and bad steps are refused"""
        state = new_filter(SystemState.origin(), np.eye(24), GRAVITY)
        with self.assertRaises(NonFiniteInput):
            propagate(state, np.array([np.nan, 0.0, 0.0]), -GRAVITY, 0.01, quiet_noise())
        with self.assertRaises(ValueError):
            propagate(state, np.zeros(3), -GRAVITY, 0.5, quiet_noise())
        with self.assertRaises(ValueError):
            propagate(state, np.zeros(3), -GRAVITY, 0.0, quiet_noise())

    def test_deterministic(self):
        """Identical inputs give bit-identical outputs"""
        def run():
            state = new_filter(SystemState.origin(), np.eye(24) * 1e-3, GRAVITY)
            for k in range(50):
                state = propagate(state, np.array([0.1, 0.0, 0.01 * k]), np.array([0.0, 0.2, 9.81]), 0.01, NoiseConfig())
            return state
        a, b = run(), run()
        np.testing.assert_array_equal(a.Sigma, b.Sigma)
        np.testing.assert_array_equal(a.X.A.as_matrix(), b.X.A.as_matrix())

    def test_noise_config_validation(self):
        """Negative densities are rejected"""
        with self.assertRaises(ValueError):
            NoiseConfig(gyro=-1.0)
        self.assertEqual(NoiseConfig().as_dict()["velocity_walk"], 1e-4)


class UpdateTest(unittest.TestCase):
    """
    Gain, correction and covariance of the update.
    """
    def test_scalar_kalman(self):
        """One x-position row with unit covariances halves the variance"""
        state = new_filter(SystemState.origin(), np.eye(24), GRAVITY)
        H = np.zeros((1, 24))
        H[0, 6] = 1.0
        state = update(state, (np.array([0.5]), H, np.array([1.0])))
        self.assertAlmostEqual(state.Sigma[6, 6], 0.5, places=12)
        np.testing.assert_allclose(state.xi_hat().T.r, [0.25, 0.0, 0.0], atol=1e-12)

    def test_zero_innovation(self):
        """z = 0 leaves the mean alone and only shrinks along H^T"""
        rng = np.random.default_rng(1)
        X = random_group_element(rng, 0.5)
        state = FilterState(X, np.eye(24), GRAVITY)
        H = np.zeros((2, 24))
        H[0, 0] = H[1, 10] = 1.0
        posterior = update(state, (np.zeros(2), H, np.ones(2)))
        np.testing.assert_allclose(posterior.xi_hat().T.as_matrix(), state.xi_hat().T.as_matrix(), atol=1e-12)
        untouched = [i for i in range(24) if i not in (0, 10)]
        np.testing.assert_allclose(posterior.Sigma[np.ix_(untouched, untouched)], np.eye(22), atol=1e-12)

    def test_information_form(self):
        """The posterior covariance matches the information-form solve"""
        rng = np.random.default_rng(12)
        A = rng.normal(size=(24, 24))
        Sigma = A @ A.T / 24 + np.eye(24)
        H = rng.normal(size=(5, 24))
        R = rng.uniform(0.5, 2.0, 5)
        state = FilterState(GroupElement.identity(), Sigma, GRAVITY)
        posterior = update(state, (np.zeros(5), H, R))
        expected = np.linalg.inv(np.linalg.inv(Sigma) + H.T @ np.diag(1.0 / R) @ H)
        np.testing.assert_allclose(posterior.Sigma, expected, rtol=1e-9, atol=1e-9)

    def test_singular_innovation(self):
        """Duplicate rows with negligible noise are refused"""
        state = new_filter(SystemState.origin(), np.eye(24), GRAVITY)
        H = np.zeros((2, 24))
        H[:, 3] = 1.0
        with self.assertRaises(SingularInnovation):
            update(state, (np.zeros(2), H, np.full(2, 1e-20)))

    def test_invalid_rows(self):
        """Empty row sets and nonpositive variances are refused"""
        state = new_filter(SystemState.origin(), np.eye(24), GRAVITY)
        with self.assertRaises(ValueError):
            update(state, (np.zeros(0), np.zeros((0, 24)), np.zeros(0)))
        with self.assertRaises(ValueError):
            update(state, (np.zeros(1), np.ones((1, 24)), np.zeros(1)))

    def test_iterated_converges_on_linear_rows(self):
        """A measurement linear in the gyro bias needs one step; extra iterations change nothing"""
        state = new_filter(SystemState.origin(), np.eye(24), GRAVITY)
        H = np.zeros((1, 24))
        H[0, 9] = 1.0

        def measure(xi: SystemState):
            return np.array([0.2 - xi.b[0]]), H, np.array([1.0])

        once = update(state, measure, max_iter=1)
        iterated = update(state, measure, max_iter=5)
        self.assertAlmostEqual(once.xi_hat().b[0], 0.1, places=12)
        np.testing.assert_allclose(iterated.xi_hat().b, once.xi_hat().b, atol=1e-12)
        np.testing.assert_allclose(iterated.Sigma, once.Sigma, atol=1e-12)

    def test_psd_after_many_steps(self):
        """Covariance stays symmetric positive semi-definite over a fuzz run"""
        rng = np.random.default_rng(21)
        state = new_filter(SystemState.origin(), np.eye(24) * 1e-2, GRAVITY)
        for _ in range(200):
            state = propagate(state, rng.normal(0.0, 0.1, 3), -GRAVITY + rng.normal(0.0, 0.2, 3), 0.01, NoiseConfig())
            H = rng.normal(size=(3, 24))
            state = update(state, (rng.normal(0.0, 0.01, 3), H, np.full(3, 1e-4)))
            np.testing.assert_array_equal(state.Sigma, state.Sigma.T)
            self.assertGreater(np.linalg.eigvalsh(state.Sigma)[0], -1e-10)


class ChartTest(unittest.TestCase):
    """
    Error coordinates and their inverse.
    """
    def test_round_trip(self):
        """error_coordinates(apply_error(eps)) = eps"""
        rng = np.random.default_rng(6)
        for _ in range(50):
            X = random_group_element(rng, 0.5)
            state = FilterState(X, np.eye(24), GRAVITY)
            eps = rng.normal(size=24)
            eps *= rng.uniform(0.0, 0.5) / np.linalg.norm(eps)
            np.testing.assert_allclose(error_coordinates(state, apply_error(X, eps)), eps, atol=1e-8)

    def test_estimate_has_zero_error(self):
        """The estimate itself sits at the chart origin"""
        X = random_group_element(np.random.default_rng(2), 0.5)
        state = FilterState(X, np.eye(24), GRAVITY)
        np.testing.assert_allclose(error_coordinates(state, state.xi_hat()), np.zeros(24), atol=1e-12)

    def test_gravity_error(self):
        """With gravity estimation the last two coordinates are the S^2 difference"""
        state = new_filter(SystemState.origin(), np.eye(26), GRAVITY, estimate_gravity=True)
        tilted = -9.81 * (so3_exp(np.array([0.05, 0.0, 0.0])) @ np.array([0.0, 0.0, 1.0]))
        eps = error_coordinates(state, SystemState.origin(), tilted)
        np.testing.assert_allclose(eps[0:24], np.zeros(24), atol=1e-15)
        np.testing.assert_allclose(eps[24:26], [0.05, 0.0], atol=1e-12)

    def test_gravity_block_sign_default(self):
        """The gravity block is used with its natural sign"""
        self.assertEqual(eqf.GRAVITY_BLOCK_SIGN, 1.0)
