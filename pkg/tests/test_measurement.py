"""
Tests for de-skewing, the point map, plane fitting and measurement rows.
"""
import unittest

import numpy as np

import measurement
from ekf import retract_state
from eqf import FILTER_EKF, FILTER_EQF
from lie_algebra import Pose, so3_exp
from measurement import (DegenerateCloud, GatedOutlier, InsufficientMap,
                         MapIndex, MissingPoseCoverage, PlaneFit, PoseTrack,
                         Scan, build_row, deskew, fit_plane, knn, map_insert,
                         numerical_row, residual, scan_rows, to_world)
from symmetry import (SystemState, action_phi, random_group_element,
                      random_state)


def yaw_track(rate: float, t_end: float, samples: int = 11) -> PoseTrack:
    times = np.linspace(0.0, t_end, samples)
    return PoseTrack(times, [Pose(so3_exp(np.array([0.0, 0.0, rate * t])), np.zeros(3)) for t in times])


def angle_between(n: np.ndarray, m: np.ndarray) -> float:
    """Angle between two lines, sign of the normals ignored."""
    return float(np.arctan2(np.linalg.norm(np.cross(n, m)), abs(np.dot(n, m))))


class DeskewTest(unittest.TestCase):
    """
    Motion compensation of a sweep.
    """
    def test_stationary_is_identity(self):
        """A platform at rest leaves the points where they are"""
        rng = np.random.default_rng(0)
        scan = Scan(0.0, 0.1, rng.normal(size=(50, 3)), rng.uniform(0.0, 0.1, 50))
        track = PoseTrack([0.0, 0.1], [Pose(), Pose()])
        np.testing.assert_allclose(deskew(scan, track, Pose()).points, scan.points, atol=1e-12)

    def test_constant_yaw(self):
        """A point taken at scan start is rotated by -omega T about z"""
        rate, period = 0.5, 0.1
        scan = Scan(0.0, period, np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 1.0]]), np.array([0.0, period]))
        out = deskew(scan, yaw_track(rate, period), Pose())
        np.testing.assert_allclose(out.points[0], so3_exp(np.array([0.0, 0.0, -rate * period])) @ [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(out.points[1], [0.0, 2.0, 1.0], atol=1e-12)
        np.testing.assert_array_equal(out.offsets, [period, period])

    def test_missing_coverage(self):
        """A track that stops before the scan ends is refused"""
        scan = Scan(0.0, 0.1, np.zeros((1, 3)), np.zeros(1))
        with self.assertRaises(MissingPoseCoverage):
            deskew(scan, PoseTrack([0.0, 0.05], [Pose(), Pose()]), Pose())

    def test_track_interpolation(self):
        """Poses between samples follow the geodesic"""
        track = yaw_track(1.0, 1.0, samples=2)
        np.testing.assert_allclose(track.at(0.25).C, so3_exp(np.array([0.0, 0.0, 0.25])), atol=1e-12)
        with self.assertRaises(ValueError):
            track.append(0.5, Pose())

    def test_scan_shape_mismatch(self):
        """Points and offsets must pair up"""
        with self.assertRaises(ValueError):
            Scan(0.0, 0.1, np.zeros((3, 3)), np.zeros(2))


class PlaneFitTest(unittest.TestCase):
    """
    Five-point plane fits.
    """
    SQUARE = np.array([[-2.0, -2.0], [2.0, -2.0], [2.0, 2.0], [-2.0, 2.0], [0.0, 0.0]])

    def test_exact_plane(self):
        """Points on z = 2 give the z axis, a centroid on the plane and zero rms"""
        points = np.column_stack((self.SQUARE, np.full(5, 2.0)))
        plane = fit_plane(points)
        np.testing.assert_allclose(np.abs(plane.n), [0.0, 0.0, 1.0], atol=1e-12)
        self.assertAlmostEqual(plane.q[2], 2.0, places=12)
        self.assertAlmostEqual(plane.rms, 0.0, places=12)
        self.assertTrue(plane.valid)

    def test_normal_faces_sensor(self):
        """The normal points toward the given origin"""
        points = np.column_stack((self.SQUARE, np.full(5, 2.0)))
        np.testing.assert_allclose(fit_plane(points).n, [0.0, 0.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(fit_plane(points, np.array([0.0, 0.0, 5.0])).n, [0.0, 0.0, 1.0], atol=1e-12)

    def test_noisy_plane(self):
        """1 cm noise keeps rms below 2 cm and the normal within 2 degrees"""
        rng = np.random.default_rng(42)
        for _ in range(100):
            points = np.column_stack((self.SQUARE, rng.normal(0.0, 0.01, 5)))
            plane = fit_plane(points)
            self.assertLess(plane.rms, 0.02)
            self.assertLess(np.degrees(angle_between(plane.n, np.array([0.0, 0.0, 1.0]))), 2.0)

    def test_collinear(self):
        """Points on a line have no plane"""
        with self.assertRaises(DegenerateCloud):
            fit_plane(np.outer(np.arange(5.0), [1.0, 2.0, 3.0]))

    def test_invalid_when_not_flat(self):
        """A support point far off the plane invalidates the fit"""
        points = np.column_stack((self.SQUARE, [0.0, 0.0, 0.0, 0.0, 0.8]))
        self.assertFalse(fit_plane(points).valid)

    def test_corner_rejected(self):
        """Four points on one wall and one around the corner are not a plane"""
        points = np.array([[0.0, 0.4, 0.0], [0.0, 0.4, 0.75], [0.0, 0.9, 0.0], [0.0, 0.9, 0.75], [0.15, 0.0, 0.375]])
        for sigma in (0.0, 0.01, 0.02, 0.05):
            with self.subTest(sigma=sigma):
                plane = fit_plane(points, sigma=sigma)
                self.assertGreater(plane.max_distance, 0.04)
                self.assertLess(plane.max_distance, 0.1)
                self.assertFalse(plane.valid)

    def test_bent_cluster_rejected(self):
        """A tight cluster with a bump is refused even inside the distance limit"""
        points = np.column_stack((0.005 * self.SQUARE, [0.0, 0.0, 0.0, 0.0, 0.009]))
        plane = fit_plane(points, sigma=0.02)
        self.assertLess(plane.max_distance, measurement.plane_distance_limit(0.02))
        self.assertFalse(plane.valid)

    def test_distance_limit_follows_noise(self):
        """The distance limit is three sigmas, floored and capped"""
        self.assertAlmostEqual(measurement.plane_distance_limit(0.0), 0.003)
        self.assertAlmostEqual(measurement.plane_distance_limit(0.002), 0.006)
        self.assertAlmostEqual(measurement.plane_distance_limit(0.02), measurement.PLANE_DIST_MAX)
        points = np.column_stack((self.SQUARE, [0.0, 0.0, 0.0, 0.0, 0.01]))
        self.assertFalse(fit_plane(points).valid)
        self.assertTrue(fit_plane(points, sigma=0.005).valid)

    def test_rigid_invariance(self):
        """The normal moves with a rigid transform of the support points"""
        rng = np.random.default_rng(3)
        points = np.column_stack((self.SQUARE, rng.normal(0.0, 0.01, 5)))
        T = Pose.exp(rng.normal(size=6))
        n = fit_plane(points).n
        moved = fit_plane(T.transform(points)).n
        self.assertLess(angle_between(moved, T.C @ n), 1e-9)


class MapIndexTest(unittest.TestCase):
    """
    Exactness of the neighbour search and the insertion policy.
    """
    def test_self_query(self):
        """A map point is its own nearest neighbour at distance 0"""
        index = map_insert(MapIndex(voxel_size=0.0), np.random.default_rng(1).uniform(-5.0, 5.0, (100, 3)))
        points, distances, indices = index.knn(index.points[17], 5)
        self.assertEqual(indices[0], 17)
        self.assertEqual(distances[0], 0.0)
        np.testing.assert_array_equal(knn(index, index.points[17])[0], index.points[17])

    def test_matches_linear_scan(self):
        """k = 5 neighbours equal a brute-force scan, also with points pending a rebuild"""
        rng = np.random.default_rng(2)
        points = rng.uniform(-10.0, 10.0, (1000, 3))
        index = MapIndex(voxel_size=0.0)
        index.insert(points[:900])
        index.insert(points[900:])
        self.assertGreater(index.pending, 0)
        for _ in range(100):
            p = rng.uniform(-10.0, 10.0, 3)
            distances = np.linalg.norm(points - p, axis=1)
            expected = np.lexsort((np.arange(len(points)), distances))[:5]
            np.testing.assert_array_equal(index.knn(p, 5)[2], expected)

    def test_duplicate_tie_break(self):
        """Duplicates come back in insertion order"""
        index = MapIndex(voxel_size=0.0)
        index.insert(np.array([[1.0, 0.0, 0.0]] * 3 + [[5.0, 5.0, 5.0]] * 3))
        np.testing.assert_array_equal(index.knn(np.array([1.0, 0.0, 0.0]), 4)[2], [0, 1, 2, 3])

    def test_voxel_filter(self):
        """Two points in one voxel leave a single survivor"""
        index = MapIndex()
        self.assertEqual(index.insert(np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]])), 1)
        self.assertEqual(index.insert(np.array([[0.3, 0.3, 0.3]])), 0)
        self.assertEqual(len(index), 1)

    def test_rebuild_threshold(self):
        """The tree is only rebuilt when pending points pass the ratio"""
        index = MapIndex(voxel_size=0.0, rebuild_ratio=0.2)
        index.insert(np.random.default_rng(4).uniform(size=(100, 3)))
        rebuilds = index.rebuilds
        index.insert(np.random.default_rng(5).uniform(size=(10, 3)))
        self.assertEqual(index.rebuilds, rebuilds)
        self.assertEqual(index.pending, 10)
        index.insert(np.random.default_rng(6).uniform(size=(15, 3)))
        self.assertEqual(index.rebuilds, rebuilds + 1)
        self.assertEqual(index.pending, 0)

    def test_insufficient_map(self):
        """Asking for more neighbours than points fails"""
        index = map_insert(MapIndex(voxel_size=0.0), np.zeros((3, 3)))
        with self.assertRaises(InsufficientMap):
            index.knn(np.zeros(3), 5)

    def test_non_finite_points(self):
        """NaN points are not inserted"""
        with self.assertRaises(ValueError):
            MapIndex().insert(np.array([[np.nan, 0.0, 0.0]]))


class MeasurementRowTest(unittest.TestCase):
    """
    Point-to-plane residuals and their Jacobian rows.
    """
    @classmethod
    def setUpClass(cls):
        cls.rng = np.random.default_rng(31)
        return super().setUpClass()

    def random_plane(self, xi: SystemState, p: np.ndarray) -> PlaneFit:
        n = self.rng.normal(size=3)
        n /= np.linalg.norm(n)
        return PlaneFit(n, to_world(xi, p) + self.rng.uniform(-0.5, 0.5) * n, 0.0, 0.0, True)

    def test_residual_example(self):
        """n = z, p = (1, 2, 3), q = (0, 0, 2.5) gives h = 0.5"""
        plane = PlaneFit(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 2.5]), 0.0, 0.0, True)
        p = np.array([1.0, 2.0, 3.0])
        self.assertAlmostEqual(residual(SystemState.origin(), p, plane), 0.5)
        z, _ = build_row(SystemState.origin(), p, plane)
        self.assertAlmostEqual(z, -0.5)

    def test_point_on_plane(self):
        """A point on the plane has zero innovation"""
        xi = random_state(self.rng, 0.5)
        p = self.rng.normal(size=3)
        plane = PlaneFit(np.array([1.0, 0.0, 0.0]), to_world(xi, p), 0.0, 0.0, True)
        self.assertAlmostEqual(build_row(xi, p, plane)[0], 0.0, places=12)

    def test_eqf_row_matches_finite_difference(self):
        """The closed-form row equals the numerical derivative through the chart"""
        for _ in range(20):
            X = random_group_element(self.rng, 0.5)
            xi = action_phi(X, SystemState.origin())
            p = self.rng.normal(0.0, 2.0, 3)
            plane = self.random_plane(xi, p)
            _, H = build_row(xi, p, plane, FILTER_EQF, gate=np.inf)
            np.testing.assert_allclose(H, numerical_row(X, p, plane), atol=1e-5)

    def test_ekf_row_matches_finite_difference(self):
        """The EKF row equals the numerical derivative of the additive retraction"""
        step = 1e-6
        for _ in range(20):
            xi = random_state(self.rng, 0.5)
            p = self.rng.normal(0.0, 2.0, 3)
            plane = self.random_plane(xi, p)
            _, H = build_row(xi, p, plane, FILTER_EKF, gate=np.inf)
            numeric = np.zeros(24)
            for j in range(24):
                e = np.zeros(24)
                e[j] = step
                numeric[j] = (residual(retract_state(xi, e), p, plane) - residual(retract_state(xi, -e), p, plane)) / (2.0 * step)
            np.testing.assert_allclose(H, numeric, atol=1e-5)

    def test_printed_extrinsic_row_differs(self):
        """The world-point form of the extrinsic row only differs by the position term"""
        X = random_group_element(self.rng, 0.5)
        xi = action_phi(X, SystemState.origin())
        p = self.rng.normal(size=3)
        plane = self.random_plane(xi, p)
        _, H = build_row(xi, p, plane, gate=np.inf)
        _, H_printed = build_row(xi, p, plane, use_printed_extrinsic_row=True, gate=np.inf)
        np.testing.assert_array_equal(H[0:18], H_printed[0:18])
        self.assertGreater(np.abs(H[18:21] - H_printed[18:21]).max(), 0.0)

    def test_gate(self):
        """Residuals beyond the gate are rejected"""
        plane = PlaneFit(np.array([0.0, 0.0, 1.0]), np.zeros(3), 0.0, 0.0, True)
        with self.assertRaises(GatedOutlier):
            build_row(SystemState.origin(), np.array([0.0, 0.0, 1.5]), plane)
        self.assertAlmostEqual(build_row(SystemState.origin(), np.array([0.0, 0.0, 1.5]), plane, gate=2.0)[0], -1.5)

    def test_invalid_plane(self):
        """Rows need a valid plane and a known filter kind"""
        plane = PlaneFit(np.array([0.0, 0.0, 1.0]), np.zeros(3), 0.0, 0.0, False)
        with self.assertRaises(ValueError):
            build_row(SystemState.origin(), np.zeros(3), plane)
        plane.valid = True
        with self.assertRaises(ValueError):
            build_row(SystemState.origin(), np.zeros(3), plane, "ukf")


class ScanRowsTest(unittest.TestCase):
    """
    Stacking rows for a whole scan against a flat floor.
    """
    @classmethod
    def setUpClass(cls):
        xs, ys = np.meshgrid(np.arange(-3.0, 3.01, 0.1), np.arange(-3.0, 3.01, 0.1))
        cls.floor = np.column_stack((xs.ravel(), ys.ravel(), np.full(xs.size, -1.0)))
        return super().setUpClass()

    def test_floor_rows(self):
        """Points on the floor give zero innovations and vertical rows"""
        index = map_insert(MapIndex(voxel_size=0.0), self.floor)
        points = np.array([[0.33, 0.47, -1.0], [-1.21, 0.9, -1.0], [2.05, -1.6, -1.0]])
        z, H, R, stats = scan_rows(SystemState.origin(), points, index, 0.02)
        self.assertEqual(stats["accepted"], 3)
        np.testing.assert_allclose(z, np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(np.abs(H[:, 8]), np.ones(3), atol=1e-12)
        np.testing.assert_allclose(R, np.full(3, 0.02 ** 2), atol=1e-12)

    def test_offset_floor(self):
        """A 5 cm height error shows up as a 5 cm innovation on every row"""
        index = map_insert(MapIndex(voxel_size=0.0), self.floor)
        points = np.array([[0.33, 0.47, -0.95], [-1.21, 0.9, -0.95]])
        z, H, _, _ = scan_rows(SystemState.origin(), points, index, 0.02)
        np.testing.assert_allclose(np.abs(z), [0.05, 0.05], atol=1e-12)
        np.testing.assert_allclose(z * H[:, 8], [-0.05, -0.05], atol=1e-12)

    def test_gated_rows_are_counted(self):
        """Points far off the floor are rejected by the gate"""
        index = map_insert(MapIndex(voxel_size=0.0), self.floor)
        z, H, R, stats = scan_rows(SystemState.origin(), np.array([[0.1, 0.1, 1.5]]), index, 0.02)
        self.assertEqual(stats["gated"] + stats["plane"], 1)
        self.assertEqual(z.shape, (0,))
        self.assertEqual(H.shape, (0, 24))

    def test_small_map(self):
        """Fewer than five map points cannot support a plane"""
        index = map_insert(MapIndex(voxel_size=0.0), self.floor[:4])
        with self.assertRaises(InsufficientMap):
            scan_rows(SystemState.origin(), np.zeros((1, 3)), index, 0.02)

    def test_neighbour_count(self):
        """Planes are fitted to five neighbours"""
        self.assertEqual(measurement.NEIGHBOURS, 5)
