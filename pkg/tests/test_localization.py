import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np
from scipy.spatial.transform import Rotation

from evpriv import exceptions
from evpriv.events import FrameImage
from evpriv.localization import (Correspondences, GlobalDescriptor, Intrinsics, LocalizationConfig, MatchNoise,
                                 Pose, Query, RansacConfig, Reference, SceneMap, accuracy_report,
                                 build_synthetic_scene, global_descriptor, is_correct, localize_queries,
                                 match_and_lift, pack_scene_map, pnp_ransac, pose_errors, read_map, retrieve_topk,
                                 rotation_angle, select_reference, visible_points, write_map)
from evpriv.privacy_sensor import FilterParams
from tests import oracles

CAMERA = Intrinsics(500.0, 500.0, 320.0, 240.0)


def _correspondences(seed: int, n: int, pixel_sigma: float = 0.0, outliers: float = 0.0):
    rng = np.random.default_rng(seed)
    pose = Pose.look_at([2.0, 0.4, 0.3], rng.normal(0.0, 0.05, 3))
    world = rng.uniform(-0.5, 0.5, (n, 3))
    pixels, _ = pose.project(world, CAMERA)
    pixels = pixels + rng.normal(0.0, pixel_sigma, pixels.shape)
    wrong = np.zeros(n, dtype=bool)
    wrong[rng.choice(n, int(round(outliers * n)), replace=False)] = True
    lifted = np.where(wrong[:, None], rng.uniform(-0.5, 0.5, (n, 3)), world)
    return pose, Correspondences(pixels, lifted, wrong)


def _descriptor_map(descriptors) -> SceneMap:
    references = [Reference(Pose(np.eye(3), np.zeros(3)), GlobalDescriptor(d), np.zeros((0, 2)),
                            np.zeros(0, dtype=int)) for d in descriptors]
    return SceneMap(np.zeros((1, 3)), references)


class TestPose(TestCase):
    def test_rejects_reflection(self):
        with self.assertRaises(exceptions.DataError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_rejects_scaled(self):
        with self.assertRaises(exceptions.DataError):
            Pose(1.001 * np.eye(3), np.zeros(3))

    def test_shape(self):
        with self.assertRaises(exceptions.ShapeError):
            Pose(np.eye(3), np.zeros(2))

    def test_look_at(self):
        pose = Pose.look_at([2.0, 0.0, 0.0], np.zeros(3))
        np.testing.assert_allclose(pose.center, [2.0, 0.0, 0.0], atol=1e-12)
        pixels, depth = pose.project(np.zeros((1, 3)), CAMERA)
        np.testing.assert_allclose(pixels, [[320.0, 240.0]], atol=1e-9)
        self.assertAlmostEqual(depth[0], 2.0, delta=1e-12)


class TestErrors(TestCase):
    def test_identical(self):
        pose = Pose.look_at([1.0, 2.0, 0.5], np.zeros(3))
        t_error, r_error = pose_errors(pose, pose)
        self.assertEqual(t_error, 0.0)
        self.assertAlmostEqual(r_error, 0.0, delta=1e-9)
        self.assertTrue(is_correct(t_error, r_error))

    def test_five_degrees(self):
        base = Rotation.random(random_state=1).as_matrix()
        turned = Rotation.from_euler('z', 5.0, degrees=True).as_matrix() @ base
        self.assertAlmostEqual(rotation_angle(base, turned), 5.0, delta=1e-9)
        self.assertFalse(is_correct(0.0, 5.0))
        self.assertFalse(is_correct(0.1, 0.0))

    def test_quaternion_oracle(self):
        for seed in range(50):
            a, b = Rotation.random(2, random_state=seed).as_matrix()
            self.assertAlmostEqual(rotation_angle(a, b), oracles.rotation_angle(a, b), delta=1e-9)

    def test_left_invariance(self):
        for seed in range(20):
            q, a, b = Rotation.random(3, random_state=100 + seed).as_matrix()
            self.assertAlmostEqual(rotation_angle(q @ a, q @ b), rotation_angle(a, b), delta=1e-9)

    def test_half_turn(self):
        self.assertAlmostEqual(rotation_angle(np.eye(3), np.diag([1.0, -1.0, -1.0])), 180.0, delta=1e-9)

    def test_translation_uses_camera_centers(self):
        truth = Pose.look_at([2.0, 0.0, 0.0], np.zeros(3))
        moved = Pose.look_at([2.0, 0.05, 0.0], [0.0, 0.05, 0.0])
        t_error, r_error = pose_errors(moved, truth)
        self.assertAlmostEqual(t_error, 0.05, delta=1e-12)
        self.assertAlmostEqual(r_error, 0.0, delta=1e-6)


class TestAccuracy(TestCase):
    def test_single(self):
        self.assertEqual(accuracy_report([(0.0, 0.0)]), (0.0, 0.0, 1.0, 1))

    def test_even_count(self):
        report = accuracy_report([(1.0, 4.0), (3.0, 1.0), (2.0, 2.0), (4.0, 3.0)])
        self.assertEqual((report.median_t, report.median_r), (2.5, 2.5))
        self.assertEqual(report.accuracy, 0.0)

    def test_recomputed(self):
        rng = np.random.default_rng(2)
        results = [(float(t), float(r)) for t, r in zip(rng.exponential(0.1, 200), rng.exponential(5.0, 200))]
        report = accuracy_report(results)

        def median(values):
            ordered = sorted(values)
            return (ordered[99] + ordered[100]) / 2

        self.assertEqual(report.median_t, median([t for t, _ in results]))
        self.assertEqual(report.median_r, median([r for _, r in results]))
        self.assertEqual(report.accuracy, sum(1 for t, r in results if t < 0.1 and r < 5.0) / 200)

    def test_failures_count_as_wrong(self):
        report = accuracy_report([(0.0, 0.0), (float('inf'), float('inf'))])
        self.assertEqual(report.accuracy, 0.5)

    def test_empty(self):
        with self.assertRaises(exceptions.OperationalError):
            accuracy_report([])


class TestPnP(TestCase):
    def test_exact(self):
        pose, matches = _correspondences(1, 50)
        result = pnp_ransac(matches, CAMERA, RansacConfig(iterations=50))
        t_error, r_error = pose_errors(result.pose, pose)
        self.assertLess(t_error, 1e-6)
        self.assertLess(r_error, 1e-4)
        self.assertEqual(len(result.inliers), 50)
        pixels, _ = result.pose.project(matches.world_points, CAMERA)
        self.assertLess(np.abs(pixels - matches.image_points).max(), 1e-6)

    def test_outliers_and_noise(self):
        successes = 0
        for seed in range(100):
            pose, matches = _correspondences(1000 + seed, 100, pixel_sigma=0.5, outliers=0.3)
            try:
                result = pnp_ransac(matches, CAMERA, RansacConfig(iterations=1000, seed=seed))
            except exceptions.OperationalError:
                continue
            successes += pose_errors(result.pose, pose)[0] < 0.01
        self.assertGreaterEqual(successes, 95)

    def test_deterministic(self):
        _, matches = _correspondences(3, 40, pixel_sigma=1.0, outliers=0.2)
        a = pnp_ransac(matches, CAMERA, RansacConfig(iterations=200, seed=4))
        b = pnp_ransac(matches, CAMERA, RansacConfig(iterations=200, seed=4))
        np.testing.assert_array_equal(a.pose.R, b.pose.R)
        np.testing.assert_array_equal(a.inliers, b.inliers)

    def test_rotation_is_proper(self):
        _, matches = _correspondences(5, 30, pixel_sigma=2.0, outliers=0.1)
        rotation = pnp_ransac(matches, CAMERA).pose.R
        self.assertLess(np.abs(rotation.T @ rotation - np.eye(3)).max(), 1e-9)
        self.assertGreater(np.linalg.det(rotation), 0)

    def test_too_few(self):
        _, matches = _correspondences(6, 5)
        with self.assertRaises(exceptions.DataError):
            pnp_ransac(matches, CAMERA)

    def test_all_outliers(self):
        _, matches = _correspondences(7, 20, outliers=1.0)
        with self.assertRaises(exceptions.OperationalError):
            pnp_ransac(matches, CAMERA, RansacConfig(iterations=20, inlier_px=0.01))


class TestRetrieval(TestCase):
    def test_exact_match_first(self):
        rng = np.random.default_rng(8)
        descriptors = rng.normal(size=(12, 256))
        scene_map = _descriptor_map(descriptors)
        ranked = retrieve_topk(GlobalDescriptor(descriptors[7]), scene_map, 3)
        self.assertEqual(ranked[0], 7)
        self.assertEqual(GlobalDescriptor(descriptors[7]).distance(scene_map.references[7].descriptor), 0.0)

    def test_all_references(self):
        rng = np.random.default_rng(9)
        scene_map = _descriptor_map(rng.normal(size=(6, 256)))
        ranked = retrieve_topk(GlobalDescriptor(rng.normal(size=256)), scene_map, 6)
        self.assertEqual(sorted(ranked), list(range(6)))
        self.assertEqual(len(retrieve_topk(GlobalDescriptor(rng.normal(size=256)), scene_map, 10)), 6)

    def test_brute_force_with_ties(self):
        rng = np.random.default_rng(10)
        descriptors = rng.normal(size=(10, 256))
        descriptors[6] = descriptors[2]
        descriptors[9] = descriptors[2]
        scene_map = _descriptor_map(descriptors)
        query = GlobalDescriptor(rng.normal(size=256))
        distances = [query.distance(r.descriptor) for r in scene_map.references]
        expected = sorted(range(10), key=lambda i: (distances[i], i))
        self.assertEqual(retrieve_topk(query, scene_map, 5), expected[:5])

    def test_errors(self):
        scene_map = _descriptor_map(np.ones((2, 256)))
        with self.assertRaises(exceptions.ConfigError):
            retrieve_topk(GlobalDescriptor(np.ones(256)), scene_map, 0)
        with self.assertRaises(exceptions.OperationalError):
            retrieve_topk(GlobalDescriptor(np.ones(256)), _descriptor_map([]), 1)
        with self.assertRaises(exceptions.ShapeError):
            retrieve_topk(GlobalDescriptor(np.ones(128)), scene_map, 1)


class TestDescriptor(TestCase):
    def test_identical_images(self):
        pixels = np.random.default_rng(11).uniform(size=(48, 64))
        a, b = global_descriptor(FrameImage(pixels)), global_descriptor(FrameImage(pixels.copy()))
        self.assertEqual(a.distance(b), 0.0)

    def test_constant_image(self):
        values = global_descriptor(FrameImage(np.full((16, 16), 0.5))).values
        self.assertEqual(len(values), 256)
        self.assertFalse(values[1:128:2].any())
        self.assertFalse(values[128:].any())
        self.assertAlmostEqual(np.linalg.norm(values), 1.0, delta=1e-12)

    def test_symmetric_distance(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            a = global_descriptor(FrameImage(rng.uniform(size=(20, 24))))
            b = global_descriptor(FrameImage(rng.uniform(size=(20, 24))))
            self.assertEqual(a.distance(b), b.distance(a))

    def test_small_image(self):
        with self.assertRaises(exceptions.ShapeError):
            global_descriptor(FrameImage(np.zeros((4, 16))))


class TestMatching(TestCase):
    def setUp(self):
        rng = np.random.default_rng(13)
        points = rng.uniform(-0.5, 0.5, (150, 3))
        self.query_pose = Pose.look_at([2.0, 0.2, 0.1], np.zeros(3))
        self.camera = Intrinsics(60.0, 60.0, 32.0, 24.0)
        reference_pose = Pose.look_at([2.0, -0.2, 0.0], np.zeros(3))
        ref_pixels, _ = reference_pose.project(points, self.camera)
        visible = np.arange(100)
        reference = Reference(reference_pose, GlobalDescriptor(np.zeros(256)), ref_pixels[visible], visible)
        self.scene_map = SceneMap(points, [reference], self.camera, (64, 48))
        query_visible = np.arange(20, 150)
        query_pixels, _ = self.query_pose.project(points[query_visible], self.camera)
        self.query = Query(self.query_pose, query_pixels, query_visible)

    def test_exact_matches_reproject(self):
        matches = match_and_lift(self.query, 0, self.scene_map)
        self.assertEqual(len(matches), 80)
        pixels, _ = self.query_pose.project(matches.world_points, self.camera)
        np.testing.assert_allclose(pixels, matches.image_points, rtol=0, atol=1e-9)
        self.assertFalse(matches.outliers.any())

    def test_outlier_count(self):
        matches = match_and_lift(self.query, 0, self.scene_map, MatchNoise(0.0, 0.3), np.random.default_rng(14))
        self.assertEqual(matches.outliers.sum(), 24)
        pixels, _ = self.query_pose.project(matches.world_points, self.camera)
        moved = np.abs(pixels - matches.image_points).max(axis=1) > 1e-9
        np.testing.assert_array_equal(moved, matches.outliers)

    def test_outlier_count_hundred(self):
        points = np.random.default_rng(15).uniform(-0.5, 0.5, (100, 3))
        visible = np.arange(100)
        pixels, _ = self.query_pose.project(points, self.camera)
        scene_map = SceneMap(points, [Reference(self.query_pose, GlobalDescriptor(np.zeros(256)), pixels, visible)],
                             self.camera, (64, 48))
        query = Query(self.query_pose, pixels, visible)
        matches = match_and_lift(query, 0, scene_map, MatchNoise(0.0, 0.3), np.random.default_rng(16))
        self.assertEqual(matches.outliers.sum(), 30)

    def test_too_few(self):
        query = Query(self.query_pose, np.zeros((3, 2)), np.array([0, 1, 2]))
        with self.assertRaises(exceptions.OperationalError):
            match_and_lift(query, 0, self.scene_map)

    def test_select_most_shared(self):
        rng = np.random.default_rng(17)
        references = []
        for _ in range(5):
            visible = np.sort(rng.choice(150, int(rng.integers(10, 100)), replace=False))
            references.append(Reference(self.query_pose, GlobalDescriptor(np.zeros(256)), np.zeros((len(visible), 2)),
                                        visible))
        scene_map = SceneMap(self.scene_map.points3d, references, self.camera, (64, 48))
        shared = [len(set(self.query.visibility) & set(r.visibility)) for r in references]
        chosen = select_reference(self.query.visibility, [0, 1, 2, 3, 4], scene_map)
        self.assertEqual(shared[chosen], max(shared))
        self.assertEqual(chosen, shared.index(max(shared)))


class TestScene(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scene = build_synthetic_scene(18, n_points=80, n_refs=6, n_queries=4, bins=4)

    def test_keypoints_are_projections(self):
        scene_map = self.scene.map
        for reference in scene_map.references:
            pixels, depth = reference.pose.project(scene_map.points3d[reference.visibility], scene_map.intrinsics)
            np.testing.assert_allclose(pixels, reference.keypoints, rtol=0, atol=1e-12)
            self.assertTrue(np.all(depth > 0))
            self.assertGreaterEqual(len(reference.visibility), 6)

    def test_keypoints_in_frame(self):
        width, height = self.scene.map.size
        for reference in self.scene.map.references:
            self.assertTrue(np.all((reference.keypoints >= 0) & (reference.keypoints < [width, height])))

    def test_same_seed_same_bytes(self):
        again = build_synthetic_scene(18, n_points=80, n_refs=6, n_queries=4, bins=4)
        self.assertEqual(pack_scene_map(again.map), pack_scene_map(self.scene.map))

    def test_map_file(self):
        with tempfile.TemporaryDirectory() as folder:
            path = Path(folder) / "scene.map"
            write_map(path, self.scene.map)
            self.assertEqual(pack_scene_map(read_map(path)), pack_scene_map(self.scene.map))
            path.write_bytes(path.read_bytes()[:-1])
            with self.assertRaises(exceptions.FormatError):
                read_map(path)

    def test_queries(self):
        self.assertEqual(len(self.scene.queries), 4)
        for query in self.scene.queries:
            indices, pixels = visible_points(self.scene.map.points3d, query.pose, self.scene.map.intrinsics,
                                             self.scene.map.size)
            np.testing.assert_array_equal(indices, query.visibility)

    def test_noise_free_localization(self):
        cfg = LocalizationConfig(top_k=3, bins=4, noise=MatchNoise(0.0, 0.0), ransac=RansacConfig(iterations=100))
        results = localize_queries(self.scene.map, self.scene.queries, cfg)
        self.assertEqual([r.query_id for r in results], [0, 1, 2, 3])
        self.assertTrue(all(r.correct for r in results))

    def test_protected_localization_runs(self):
        cfg = LocalizationConfig(bins=4, ransac=RansacConfig(iterations=200))
        results = localize_queries(self.scene.map, self.scene.queries, cfg, FilterParams(k_t=1, k_s=2))
        self.assertEqual(len(results), 4)
        again = localize_queries(self.scene.map, self.scene.queries, cfg, FilterParams(k_t=1, k_s=2))
        self.assertEqual(results, again)

    def test_invalid_config(self):
        with self.assertRaises(exceptions.ConfigError):
            build_synthetic_scene(1, n_points=3)


class TestEndToEnd(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scene = build_synthetic_scene(21, n_points=200, n_refs=20, n_queries=50)
        cls.cfg = LocalizationConfig(top_k=3, bins=10, noise=MatchNoise(1.0, 0.1), seed=22)
        cls.plain = accuracy_report([(r.t_error, r.r_error)
                                     for r in localize_queries(cls.scene.map, cls.scene.queries, cls.cfg)])

    def test_accuracy(self):
        self.assertEqual(self.plain.n, 50)
        self.assertGreaterEqual(self.plain.accuracy, 0.9)
        self.assertLess(self.plain.median_t, 0.1)
        self.assertLess(self.plain.median_r, 5.0)

    def test_protected_queries(self):
        results = localize_queries(self.scene.map, self.scene.queries, self.cfg, FilterParams())
        protected = accuracy_report([(r.t_error, r.r_error) for r in results])
        self.assertLessEqual(self.plain.accuracy - protected.accuracy, 0.10)
