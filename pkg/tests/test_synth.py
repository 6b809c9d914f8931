from unittest import TestCase

import numpy as np
from scipy import ndimage

from evpriv import exceptions
from evpriv.events import voxelize
from evpriv.synth import (MIN_INTENSITY, SceneSpec, make_dataset, ramp_bins, ramp_crossings, ramp_gradient,
                          render_frame, scene_presets, scene_tile, simulate_events, simulate_frames)


class TestRender(TestCase):
    def test_static_scene(self):
        spec = SceneSpec(kind='texture', width=12, height=10, velocity=(0.0, 0.0), seed=3)
        np.testing.assert_array_equal(render_frame(spec, 0.1).pixels, render_frame(spec, 0.9).pixels)

    def test_ramp_linear_along_x(self):
        spec = SceneSpec(kind='ramp', width=16, height=4, velocity=(5.0, 0.0))
        log = np.log(render_frame(spec, 0.0).pixels)
        np.testing.assert_allclose(np.diff(log, axis=1), ramp_gradient(spec), rtol=0, atol=1e-12)
        np.testing.assert_array_equal(log[0], log[3])

    def test_texture_shift(self):
        spec = SceneSpec(kind='texture', width=20, height=14, velocity=(6.0, -3.0), duration=1.0, seed=9)
        tile = scene_tile(spec)
        t = spec.duration / 2
        shifted = ndimage.shift(tile, (-3.0 * t, 6.0 * t), order=1, mode="grid-wrap")
        np.testing.assert_allclose(render_frame(spec, t).pixels, shifted, rtol=0, atol=1e-12)

    def test_time_out_of_range(self):
        with self.assertRaises(exceptions.InterfaceError):
            render_frame(SceneSpec(), 2.0)

    def test_intensity_range(self):
        pixels = render_frame(SceneSpec(kind='step', width=8, height=8), 0.3).pixels
        self.assertGreaterEqual(pixels.min(), MIN_INTENSITY - 1e-12)
        self.assertLessEqual(pixels.max(), 1.0)

    def test_bad_kind(self):
        with self.assertRaises(exceptions.ConfigError):
            SceneSpec(kind='spiral')


class TestSimulate(TestCase):
    def test_static_scene_is_silent(self):
        spec = SceneSpec(kind='texture', width=10, height=10, velocity=(0.0, 0.0))
        self.assertEqual(len(simulate_events(spec, substeps=8)), 0)

    def test_ramp_constant_polarity(self):
        spec = SceneSpec(kind='ramp', width=12, height=3, velocity=(10.0, 0.0), threshold=0.05)
        stream = simulate_events(spec, substeps=16)
        self.assertGreater(len(stream), 0)
        # the ramp brightens towards +x, moving it right darkens every pixel
        self.assertTrue(np.all(stream.p == -1))

    def test_count_per_pixel(self):
        spec = SceneSpec(kind='texture', width=12, height=9, velocity=(7.0, 3.0), threshold=0.1, seed=4)
        stream = simulate_events(spec, substeps=20)
        first = np.log(render_frame(spec, 0.0).pixels)
        last = np.log(render_frame(spec, spec.duration).pixels)
        counts = np.zeros((spec.height, spec.width), dtype=int)
        np.add.at(counts, (stream.y, stream.x), 1)
        expected = np.floor(np.abs(last - first) / spec.threshold)
        self.assertTrue(np.all(counts >= expected - 1))

    def test_sorted_and_bounded(self):
        stream = simulate_events(SceneSpec(width=10, height=8, seed=2), substeps=10)
        self.assertTrue(np.all(np.diff(stream.t) >= 0))
        self.assertEqual((stream.t0, stream.duration), (0.0, 1.0))

    def test_frames_single_crossing(self):
        frames = [np.full((1, 1), 1.0), np.full((1, 1), np.exp(0.5))]
        stream = simulate_frames(frames, [0.0, 1.0], threshold=0.2)
        self.assertEqual(len(stream), 2)
        np.testing.assert_allclose(stream.t, [0.4, 0.8])
        self.assertTrue(np.all(stream.p == 1))

    def test_frames_validation(self):
        with self.assertRaises(exceptions.ShapeError):
            simulate_frames([np.ones((2, 2))], [0.0], 0.2)
        with self.assertRaises(exceptions.DataError):
            simulate_frames([np.ones((2, 2)), np.ones((2, 2))], [1.0, 0.5], 0.2)

    def test_substeps(self):
        with self.assertRaises(exceptions.ConfigError):
            simulate_events(SceneSpec(), substeps=1)


def _ramp_scene(rng: np.random.Generator) -> SceneSpec:
    speed = float(rng.uniform(5.0, 30.0)) * float(rng.choice([-1.0, 1.0]))
    return SceneSpec(kind='ramp', width=int(rng.integers(8, 25)), height=int(rng.integers(4, 13)),
                     velocity=(speed, float(rng.uniform(-10.0, 10.0))), threshold=float(rng.uniform(0.02, 0.06)))


class TestRamp(TestCase):
    def test_crossings_power_of_two(self):
        rng = np.random.default_rng(30)
        for _ in range(20):
            spec = _ramp_scene(rng)
            crossings = ramp_crossings(spec)
            self.assertGreaterEqual(crossings, 4)
            self.assertEqual(crossings & (crossings - 1), 0)
            for t in (0.0, spec.duration):
                pixels = render_frame(spec, t).pixels
                self.assertGreaterEqual(pixels.min(), MIN_INTENSITY - 1e-12)

    def test_at_rest(self):
        spec = SceneSpec(kind='ramp', width=8, height=4, velocity=(0.0, 3.0))
        self.assertEqual(ramp_crossings(spec), 0)
        self.assertEqual(len(simulate_events(spec)), 0)

    def test_preset(self):
        spec = scene_presets['ramp']
        self.assertEqual(ramp_crossings(spec), 8)
        self.assertEqual(len(simulate_events(spec)), 8 * spec.width * spec.height)

    def test_monotone_accumulation(self):
        rng = np.random.default_rng(31)
        for seed in range(20):
            spec = _ramp_scene(rng)
            stream = simulate_events(spec)
            grid = voxelize(stream, ramp_bins(spec)).data
            polarity = int(stream.p[0])
            with self.subTest(seed=seed):
                self.assertTrue(np.all(stream.p == polarity))
                steps = np.diff(grid, axis=0)
                self.assertTrue(np.all(polarity * steps >= 0))
                self.assertFalse(grid[0].any())
                np.testing.assert_array_equal(grid[1:], np.full(grid[1:].shape, float(polarity)))

    def test_matches_frame_simulation(self):
        spec = SceneSpec(kind='ramp', width=10, height=3, velocity=(-12.0, 0.0), threshold=0.05)
        crossings = ramp_crossings(spec)
        times = np.linspace(0.0, spec.duration, 33)
        frames = [render_frame(spec, t).pixels for t in times]
        reference = simulate_frames(frames, times, spec.threshold)
        closed = simulate_events(spec)
        self.assertTrue(np.all(reference.p == 1) and np.all(closed.p == 1))
        expected = spec.duration * np.arange(1, crossings + 1) / crossings
        for x, y in ((0, 0), (9, 2), (4, 1)):
            at_pixel = reference.t[(reference.x == x) & (reference.y == y)]
            self.assertIn(len(at_pixel), (crossings - 1, crossings))
            np.testing.assert_allclose(at_pixel, expected[:len(at_pixel)], rtol=0, atol=1e-9)
            np.testing.assert_array_equal(closed.t[(closed.x == x) & (closed.y == y)], expected)


class TestStep(TestCase):
    def test_slices_symmetric_about_peak(self):
        spec = scene_presets['step']
        # the edge moves 1/8 pixel per substep, so every pixel sees the same crossing pattern
        grid = voxelize(simulate_events(spec, substeps=161), bins=10).data
        columns = np.arange(spec.width)
        for l, row in enumerate(grid[:, spec.height // 2, :]):  # noqa: E741
            for sign in (1, -1):
                profile = np.where(sign * row > 0, np.abs(row), 0.0)
                with self.subTest(slice=l, sign=sign):
                    self.assertGreater(profile.sum(), 0)
                    centre = (columns * profile).sum() / profile.sum()
                    self.assertLessEqual(abs(centre - np.argmax(profile)), 1.0)

    def test_rows_identical(self):
        spec = scene_presets['step']
        grid = voxelize(simulate_events(spec, substeps=33), bins=5).data
        np.testing.assert_array_equal(grid[:, 0, :], grid[:, -1, :])


class TestDataset(TestCase):
    def test_deterministic(self):
        template = SceneSpec(width=8, height=8)
        a = make_dataset(5, 2, template, bins=4)
        b = make_dataset(5, 2, template, bins=4)
        for first, second in zip(a, b):
            np.testing.assert_array_equal(first.voxel.data, second.voxel.data)
            np.testing.assert_array_equal(first.frame.pixels, second.frame.pixels)

    def test_shapes(self):
        samples = make_dataset(1, 3, SceneSpec(width=10, height=6), bins=5)
        self.assertEqual(len(samples), 3)
        self.assertEqual(samples[0].voxel.shape, (5, 6, 10))
        self.assertEqual(samples[0].frame.pixels.shape, (6, 10))
