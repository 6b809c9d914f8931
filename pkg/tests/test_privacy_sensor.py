import time
from unittest import TestCase

import numpy as np

from evpriv import exceptions
from evpriv.events import EventStream, VoxelGrid, voxelize
from evpriv.privacy_sensor import (BlendMask, FilterParams, accumulation_mask, blend, max_reflection_filter,
                                   median_filter_temporal, protect)
from evpriv.synth import SceneSpec, ramp_bins, simulate_events
from tests import oracles


def _grid(seed: int, shape) -> VoxelGrid:
    return VoxelGrid(np.random.default_rng(seed).normal(size=shape))


class TestMedian(TestCase):
    def test_window_of_one(self):
        grid = _grid(1, (5, 3, 4))
        np.testing.assert_array_equal(median_filter_temporal(grid, 0).data, grid.data)

    def test_monotone_interior(self):
        rng = np.random.default_rng(2)
        data = np.cumsum(rng.uniform(0.1, 1.0, size=(10, 3, 3)), axis=0)
        k_t = 2
        filtered = median_filter_temporal(VoxelGrid(data), k_t).data
        np.testing.assert_array_equal(filtered[k_t:10 - k_t], data[k_t:10 - k_t])

    def test_ramp_scenes_keep_interior(self):
        rng = np.random.default_rng(32)
        for seed in range(20):
            spec = SceneSpec(kind='ramp', width=int(rng.integers(8, 33)), height=int(rng.integers(4, 17)),
                             velocity=(float(rng.uniform(5.0, 30.0)) * float(rng.choice([-1.0, 1.0])), 0.0),
                             threshold=float(rng.uniform(0.02, 0.06)))
            bins = ramp_bins(spec)
            data = voxelize(simulate_events(spec), bins).data
            for k_t in (1, 2):
                filtered = median_filter_temporal(VoxelGrid(data), k_t).data
                with self.subTest(seed=seed, k_t=k_t, bins=bins):
                    np.testing.assert_array_equal(filtered[k_t:bins - k_t], data[k_t:bins - k_t])

    def test_brute_force(self):
        grid = _grid(3, (7, 4, 4))
        np.testing.assert_array_equal(median_filter_temporal(grid, 2).data, oracles.median_filter(grid.data, 2))

    def test_window_wider_than_grid(self):
        grid = _grid(4, (4, 2, 2))
        expected = np.broadcast_to(np.median(grid.data, axis=0), grid.shape)
        np.testing.assert_allclose(median_filter_temporal(grid, 13).data, expected, rtol=0, atol=1e-15)

    def test_negative_window(self):
        with self.assertRaises(exceptions.ConfigError):
            median_filter_temporal(_grid(1, (2, 2, 2)), -1)


class TestReflection(TestCase):
    def test_window_of_one(self):
        grid = _grid(5, (3, 5, 5))
        np.testing.assert_array_equal(max_reflection_filter(grid, 0).data, grid.data)

    def test_symmetric_profile(self):
        rows, cols = np.mgrid[0:9, 0:9]
        profile = 10.0 - (np.abs(rows - 4) + np.abs(cols - 4))
        grid = VoxelGrid(profile[None, :, :])
        np.testing.assert_array_equal(max_reflection_filter(grid, 4).data, grid.data)

    def test_brute_force(self):
        grid = _grid(6, (3, 6, 6))
        np.testing.assert_array_equal(max_reflection_filter(grid, 1).data, oracles.max_reflection(grid.data, 1))

    def test_brute_force_ties(self):
        data = np.random.default_rng(7).integers(-2, 3, size=(2, 7, 5)).astype(float)
        grid = VoxelGrid(data)
        np.testing.assert_array_equal(max_reflection_filter(grid, 2).data, oracles.max_reflection(data, 2))


class TestMask(TestCase):
    def test_all_zero(self):
        self.assertFalse(accumulation_mask(VoxelGrid(np.zeros((3, 4, 4)))).bits.any())

    def test_constant(self):
        self.assertFalse(accumulation_mask(VoxelGrid(np.full((3, 4, 4), 0.5))).bits.any())

    def test_single_hot_pixel(self):
        data = np.zeros((1, 10, 10))
        data[0, 2, 7] = 100.0
        mask = accumulation_mask(VoxelGrid(data))
        np.testing.assert_array_equal(mask.bits, oracles.accumulation_mask(data))
        self.assertEqual(mask.bits.sum(), 1)
        self.assertTrue(mask.bits[2, 7])
        self.assertEqual(mask.density, 0.01)

    def test_oracle(self):
        grid = _grid(8, (4, 9, 7))
        np.testing.assert_array_equal(accumulation_mask(grid).bits, oracles.accumulation_mask(grid.data))


class TestBlend(TestCase):
    def setUp(self):
        self.grid = _grid(9, (2, 2, 2))
        self.median = median_filter_temporal(self.grid, 1)
        self.reflected = max_reflection_filter(self.grid, 1)

    def test_mask_off(self):
        out = blend(self.grid, self.median, self.reflected, BlendMask(np.zeros((2, 2))))
        np.testing.assert_array_equal(out.data, self.grid.data)

    def test_mask_on(self):
        out = blend(self.grid, self.median, self.reflected, BlendMask(np.ones((2, 2))))
        np.testing.assert_array_equal(out.data, (self.median.data + self.reflected.data) / 2)

    def test_mixed(self):
        mask = np.array([[True, False], [False, True]])
        out = blend(self.grid, self.median, self.reflected, BlendMask(mask))
        expected = oracles.blend(self.grid.data, self.median.data, self.reflected.data, mask)
        np.testing.assert_array_equal(out.data, expected)
        self.assertEqual(out.data[0, 0, 1], self.grid.data[0, 0, 1])

    def test_shape_mismatch(self):
        with self.assertRaises(exceptions.ShapeError):
            blend(self.grid, self.median, self.reflected, BlendMask(np.ones((3, 2))))


class TestProtect(TestCase):
    def test_empty_grid(self):
        grid = VoxelGrid(np.zeros((5, 0, 0)))
        self.assertEqual(protect(grid, mode='sparse').shape, (5, 0, 0))

    def test_pipeline_oracle(self):
        grid = _grid(10, (6, 7, 8))
        params = FilterParams(k_t=2, k_s=2)
        mask = oracles.accumulation_mask(grid.data)
        expected = oracles.blend(grid.data, oracles.median_filter(grid.data, 2),
                                 oracles.max_reflection(grid.data, 2), mask)
        np.testing.assert_array_equal(protect(grid, params).data, expected)

    def test_sparse_matches_dense(self):
        rng = np.random.default_rng(11)
        params = FilterParams(k_t=2, k_s=2)
        for _ in range(200):
            shape = tuple(rng.integers(1, 8, size=3))
            grid = VoxelGrid(rng.normal(size=shape) * rng.integers(0, 2, size=shape))
            for variant in ('full', 'median', 'reflection', 'no_blend'):
                dense = protect(grid, params, mode='dense', variant=variant)
                sparse = protect(grid, params, mode='sparse', variant=variant)
                self.assertTrue(np.array_equal(dense.data, sparse.data))

    def test_no_blend_filters_everything(self):
        grid = _grid(12, (5, 6, 6))
        params = FilterParams(k_t=1, k_s=1)
        expected = (oracles.median_filter(grid.data, 1) + oracles.max_reflection(grid.data, 1)) / 2
        np.testing.assert_array_equal(protect(grid, params, variant='no_blend').data, expected)

    def test_median_variant(self):
        grid = _grid(13, (5, 6, 6))
        params = FilterParams(k_t=1, k_s=1)
        median = oracles.median_filter(grid.data, 1)
        expected = oracles.blend(grid.data, median, median, oracles.accumulation_mask(grid.data))
        np.testing.assert_array_equal(protect(grid, params, variant='median').data, expected)

    def test_unknown_mode(self):
        with self.assertRaises(exceptions.ConfigError):
            protect(_grid(1, (2, 2, 2)), mode='lazy')
        with self.assertRaises(exceptions.ConfigError):
            protect(_grid(1, (2, 2, 2)), variant='blur')

    def test_sparse_is_faster(self):
        rng = np.random.default_rng(14)
        n = 300000
        stream = EventStream.from_arrays(rng.uniform(0, 1, n), rng.integers(20, 28, n), rng.integers(16, 24, n),
                                         rng.choice([-1, 1], n), width=64, height=48, t0=0.0, duration=1.0)
        grid = voxelize(stream, bins=20)
        self.assertLessEqual(accumulation_mask(grid).density, 0.05)

        start = time.perf_counter()
        dense = protect(grid, mode='dense')
        dense_time = time.perf_counter() - start
        start = time.perf_counter()
        sparse = protect(grid, mode='sparse')
        sparse_time = time.perf_counter() - start

        self.assertTrue(np.array_equal(dense.data, sparse.data))
        self.assertGreaterEqual(dense_time / sparse_time, 5.0)
