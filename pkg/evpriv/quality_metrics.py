"""
Image similarity metrics: mean absolute error, PSNR and SSIM.

MAE and PSNR work on the [0, 1] pixel range. The SSIM constants belong to a 255 range,
so SSIM scales its inputs by 255 unless told otherwise.
"""
import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from evpriv import exceptions
from evpriv.events import FrameImage

_logger = logging.getLogger(__name__)

Image = Union[FrameImage, np.ndarray]


@dataclass(frozen=True)
class MetricConfig:
    """
    Args:
        ssim_window: side N of the square SSIM window
        c1: SSIM luminance stabiliser
        c2: SSIM contrast stabiliser
        psnr_max: the largest possible pixel value MAX_I
        ssim_scale: multiply pixels by 255 before computing SSIM
    """
    ssim_window: int = 11
    c1: float = 6.5025
    c2: float = 58.5225
    psnr_max: float = 1.0
    ssim_scale: bool = True

    def __post_init__(self):
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise exceptions.ConfigError(f"SSIM window must be odd and at least 3, got {self.ssim_window}")
        if not (self.c1 > 0 and self.c2 > 0):
            raise exceptions.ConfigError(f"SSIM constants must be positive, got c1={self.c1} c2={self.c2}")
        if not self.psnr_max > 0:
            raise exceptions.ConfigError(f"PSNR peak value must be positive, got {self.psnr_max}")


def _pair(a: Image, b: Image):
    x = a.pixels if isinstance(a, FrameImage) else np.asarray(a, dtype=np.float64)
    y = b.pixels if isinstance(b, FrameImage) else np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise exceptions.ShapeError(f"cannot compare images of shape {x.shape} and {y.shape}")
    return x, y


def mae(a: Image, b: Image) -> float:
    x, y = _pair(a, b)
    return float(np.abs(x - y).mean())


def psnr(a: Image, b: Image, cfg: MetricConfig = MetricConfig()) -> float:
    """
    ``20 log10(MAX_I) - 10 log10(MSE)``

    Raises:
        IdenticalImagesError: when the images are identical and the PSNR is infinite
    """
    x, y = _pair(a, b)
    mse = float(((x - y) ** 2).mean())
    if mse == 0:
        raise exceptions.IdenticalImagesError("PSNR of identical images is infinite")
    return 20 * math.log10(cfg.psnr_max) - 10 * math.log10(mse)


def psnr_or_inf(a: Image, b: Image, cfg: MetricConfig = MetricConfig()) -> float:
    """psnr(), reporting identical images as ``inf``."""
    try:
        return psnr(a, b, cfg)
    except exceptions.IdenticalImagesError:
        return math.inf


def ssim(a: Image, b: Image, cfg: MetricConfig = MetricConfig()) -> float:
    """
    Mean SSIM over every N x N window of the valid region (stride 1), with population
    window statistics.

    Raises:
        ShapeError: if the images are smaller than the window
    """
    x, y = _pair(a, b)
    n = cfg.ssim_window
    if x.ndim != 2 or x.shape[0] < n or x.shape[1] < n:
        raise exceptions.ShapeError(f"SSIM needs images of at least {n}x{n} pixels, got shape {x.shape}")
    if cfg.ssim_scale:
        x, y = x * 255.0, y * 255.0

    wx = sliding_window_view(x, (n, n))
    wy = sliding_window_view(y, (n, n))
    mu_x = wx.mean(axis=(-2, -1))
    mu_y = wy.mean(axis=(-2, -1))
    dx = wx - mu_x[..., None, None]
    dy = wy - mu_y[..., None, None]
    var_x = (dx * dx).mean(axis=(-2, -1))
    var_y = (dy * dy).mean(axis=(-2, -1))
    cov = (dx * dy).mean(axis=(-2, -1))

    patches = ((2 * mu_x * mu_y + cfg.c1) * (2 * cov + cfg.c2)) \
        / ((mu_x * mu_x + mu_y * mu_y + cfg.c1) * (var_x + var_y + cfg.c2))
    return float(patches.mean())


def compare(a: Image, b: Image, cfg: MetricConfig = MetricConfig()) -> dict:
    """All three metrics; an infinite PSNR is reported as ``inf``."""
    return {'mae': mae(a, b), 'psnr': psnr_or_inf(a, b, cfg), 'ssim': ssim(a, b, cfg)}
