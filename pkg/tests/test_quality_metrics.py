import math
from unittest import TestCase

import numpy as np

from evpriv import exceptions
from evpriv.events import FrameImage
from evpriv.quality_metrics import MetricConfig, compare, mae, psnr, psnr_or_inf, ssim
from tests import oracles


def _pair(seed: int, shape=(16, 16)):
    rng = np.random.default_rng(seed)
    return FrameImage(rng.uniform(size=shape)), FrameImage(rng.uniform(size=shape))


class TestMae(TestCase):
    def test_identical(self):
        a, _ = _pair(1)
        self.assertEqual(mae(a, a), 0.0)

    def test_constant_extremes(self):
        self.assertEqual(mae(np.zeros((4, 4)), np.ones((4, 4))), 1.0)

    def test_oracle(self):
        a, b = _pair(2)
        self.assertAlmostEqual(mae(a, b), oracles.mae(a.pixels, b.pixels), delta=1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(exceptions.ShapeError):
            mae(np.zeros((2, 2)), np.zeros((2, 3)))


class TestPsnr(TestCase):
    def test_zero(self):
        self.assertEqual(psnr(np.zeros((3, 3)), np.ones((3, 3))), 0.0)

    def test_identical(self):
        a, _ = _pair(3)
        with self.assertRaises(exceptions.IdenticalImagesError):
            psnr(a, a)
        self.assertEqual(psnr_or_inf(a, a), math.inf)

    def test_oracle(self):
        a, b = _pair(4)
        self.assertAlmostEqual(psnr(a, b), oracles.psnr(a.pixels, b.pixels), delta=1e-9)

    def test_symmetric(self):
        a, b = _pair(5)
        self.assertEqual(psnr(a, b), psnr(b, a))

    def test_peak(self):
        a, b = _pair(6)
        cfg = MetricConfig(psnr_max=255.0)
        self.assertAlmostEqual(psnr(a, b, cfg) - psnr(a, b), 20 * math.log10(255.0), delta=1e-9)


class TestSsim(TestCase):
    def test_identical(self):
        a, _ = _pair(7)
        self.assertEqual(ssim(a, a), 1.0)

    def test_symmetric(self):
        a, b = _pair(8)
        self.assertAlmostEqual(ssim(a, b), ssim(b, a), delta=1e-12)

    def test_oracle(self):
        a, b = _pair(9)
        self.assertAlmostEqual(ssim(a, b), oracles.ssim(a.pixels, b.pixels), delta=1e-9)

    def test_oracle_unscaled(self):
        a, b = _pair(10, (13, 15))
        cfg = MetricConfig(ssim_window=7, ssim_scale=False)
        self.assertAlmostEqual(ssim(a, b, cfg), oracles.ssim(a.pixels, b.pixels, 7, scale=1.0), delta=1e-9)

    def test_bounded(self):
        a, b = _pair(11)
        self.assertLessEqual(abs(ssim(a, FrameImage(1 - a.pixels))), 1.0)
        self.assertLessEqual(abs(ssim(a, b)), 1.0)

    def test_too_small(self):
        with self.assertRaises(exceptions.ShapeError):
            ssim(np.zeros((10, 12)), np.zeros((10, 12)))

    def test_even_window(self):
        with self.assertRaises(exceptions.ConfigError):
            MetricConfig(ssim_window=10)


class TestCompare(TestCase):
    def test_identical(self):
        a, _ = _pair(12)
        self.assertEqual(compare(a, a), {'mae': 0.0, 'psnr': math.inf, 'ssim': 1.0})
