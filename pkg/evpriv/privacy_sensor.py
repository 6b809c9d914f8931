"""
Sensor level privacy protection of event voxel grids.

Two filters smear temporally inconsistent and curved structure: a temporal median and a
maximum-reflection filter that mirrors every entry about the strongest accumulation in
its spatial neighbourhood. The filtered grids are averaged and blended into the original
only where the accumulated event mass is high (mean plus one standard deviation).

The sparse mode evaluates the filters only at masked pixels; both modes produce the
same grid.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from evpriv import exceptions
from evpriv.events import VoxelGrid

_logger = logging.getLogger(__name__)

MODES = ('dense', 'sparse')
VARIANTS = ('full', 'median', 'reflection', 'no_blend')


@dataclass(frozen=True)
class FilterParams:
    """
    Args:
        k_t: temporal half window of the median filter
        k_s: spatial half window of the maximum-reflection filter
    """
    k_t: int = 13
    k_s: int = 23

    def __post_init__(self):
        if self.k_t < 0 or self.k_s < 0:
            raise exceptions.ConfigError(f"filter windows must be non-negative, got k_t={self.k_t} k_s={self.k_s}")


@dataclass(frozen=True)
class BlendMask:
    """Per pixel blend selector, broadcast along the temporal axis."""
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2:
            raise exceptions.ShapeError(f"blend mask must be 2 dimensional, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, 'bits', bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def density(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0


def _median_of_sorted(window: np.ndarray) -> np.ndarray:
    """Median along axis 0; even windows average the two central order statistics."""
    ordered = np.sort(window, axis=0)
    n = len(ordered)
    if n % 2:
        return ordered[n // 2]
    return (ordered[n // 2 - 1] + ordered[n // 2]) / 2


def _temporal_median(data: np.ndarray, k_t: int) -> np.ndarray:
    bins = data.shape[0]
    out = np.empty_like(data)
    for index in range(bins):
        out[index] = _median_of_sorted(data[max(0, index - k_t):min(bins, index + k_t + 1)])
    return out


def median_filter_temporal(grid: VoxelGrid, k_t: int) -> VoxelGrid:
    """
    Replace every entry with the median of its temporal window ``[l - k_t, l + k_t]``,
    truncated at the first and last bin.
    """
    if k_t < 0:
        raise exceptions.ConfigError(f"temporal window must be non-negative, got {k_t}")
    return grid.replace(_temporal_median(grid.data, k_t))


def _reflect(data: np.ndarray, rows: np.ndarray, cols: np.ndarray, k_s: int) -> np.ndarray:
    """
    Maximum reflection evaluated at pixels (rows, cols), all bins at once.

    Returns:
        a bins x len(rows) array
    """
    bins, height, width = data.shape
    magnitude = np.abs(data)
    best = np.full((bins, len(rows)), -1.0)
    best_rows = np.broadcast_to(rows, best.shape).copy()
    best_cols = np.broadcast_to(cols, best.shape).copy()
    # row major scan with strict comparison: ties keep the smallest row, then column
    for dm in range(-k_s, k_s + 1):
        r = rows + dm
        for dn in range(-k_s, k_s + 1):
            c = cols + dn
            inside = (r >= 0) & (r < height) & (c >= 0) & (c < width)
            candidate = np.where(inside, magnitude[:, np.clip(r, 0, height - 1), np.clip(c, 0, width - 1)], -1.0)
            better = candidate > best
            best[better] = candidate[better]
            best_rows[better] = np.broadcast_to(r, best.shape)[better]
            best_cols[better] = np.broadcast_to(c, best.shape)[better]

    mirrored_rows = 2 * best_rows - rows
    mirrored_cols = 2 * best_cols - cols
    inside = (mirrored_rows >= 0) & (mirrored_rows < height) & (mirrored_cols >= 0) & (mirrored_cols < width)
    layers = np.broadcast_to(np.arange(bins)[:, None], best.shape)
    reflected = data[layers, np.clip(mirrored_rows, 0, height - 1), np.clip(mirrored_cols, 0, width - 1)]
    return np.where(inside, reflected, data[:, rows, cols])


def max_reflection_filter(grid: VoxelGrid, k_s: int) -> VoxelGrid:
    """
    Replace ``E(l, m, n)`` with ``E(l, 2m* - m, 2n* - n)``, where ``(m*, n*)`` maximises
    ``|E(l, ., .)|`` over the ``(2 k_s + 1)^2`` window around ``(m, n)`` clipped to the
    frame. Reflections that leave the frame keep the original value.
    """
    if k_s < 0:
        raise exceptions.ConfigError(f"spatial window must be non-negative, got {k_s}")
    bins, height, width = grid.shape
    rows, cols = np.divmod(np.arange(height * width), width)
    return grid.replace(_reflect(grid.data, rows, cols, k_s).reshape(bins, height, width))


def accumulation_mask(grid: VoxelGrid) -> BlendMask:
    """
    Select the pixels whose temporally summed absolute accumulation exceeds ``mu + sigma``
    (population statistics over all pixels, strict inequality).
    """
    mass = np.abs(grid.data).sum(axis=0)
    if not mass.size:
        return BlendMask(np.zeros(mass.shape, dtype=bool))
    mu = mass.mean()
    sigma = mass.std()
    return BlendMask(mass > mu + sigma)


def blend(grid: VoxelGrid, median: VoxelGrid, reflected: VoxelGrid, mask: BlendMask) -> VoxelGrid:
    """
    ``U * ((E_med + E_max) / 2) + (1 - U) * E`` with the mask U broadcast over bins.

    Raises:
        ShapeError: if the operands disagree in shape
    """
    if not (grid.shape == median.shape == reflected.shape) or mask.bits.shape != grid.shape[1:]:
        raise exceptions.ShapeError(f"blend operands disagree: {grid.shape}, {median.shape}, {reflected.shape} "
                                    f"and mask {mask.bits.shape}")
    u = mask.bits.astype(np.float64)[None, :, :]
    return grid.replace(_mix(grid.data, median.data, reflected.data, u))


def _mix(original: np.ndarray, median: np.ndarray, reflected: np.ndarray, u) -> np.ndarray:
    return u * ((median + reflected) / 2) + (1 - u) * original


def _filtered_pair(variant: str, median: np.ndarray, reflected: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if variant == 'median':
        return median, median
    if variant == 'reflection':
        return reflected, reflected
    return median, reflected


def protect(grid: VoxelGrid, params: FilterParams = FilterParams(), mode: str = 'dense',
            variant: str = 'full') -> VoxelGrid:
    """
    Run the sensor level protection pipeline.

    Args:
        grid: the event voxel grid
        params: filter windows
        mode: ``dense`` filters the whole grid, ``sparse`` only the masked pixels
        variant: ``full`` (median and reflection), ``median`` or ``reflection`` alone, or
            ``no_blend`` which applies the averaged filters to every pixel

    Returns:
        the protected grid; unmasked pixels are copied from the input
    """
    if mode not in MODES:
        raise exceptions.ConfigError(f"unknown filter mode '{mode}', choose from {', '.join(MODES)}")
    if variant not in VARIANTS:
        raise exceptions.ConfigError(f"unknown filter variant '{variant}', choose from {', '.join(VARIANTS)}")

    bins, height, width = grid.shape
    if params.k_s >= max(height, width) or 2 * params.k_t + 1 > bins:
        _logger.debug("filter windows k_t=%d k_s=%d cover the whole %s grid", params.k_t, params.k_s, grid.shape)

    if variant == 'no_blend':
        mask = BlendMask(np.ones((height, width), dtype=bool))
    else:
        mask = accumulation_mask(grid)

    if mode == 'dense':
        median = median_filter_temporal(grid, params.k_t).data
        reflected = max_reflection_filter(grid, params.k_s).data
        first, second = _filtered_pair(variant, median, reflected)
        out = _mix(grid.data, first, second, mask.bits.astype(np.float64)[None, :, :])
    else:
        rows, cols = np.nonzero(mask.bits)
        out = np.array(grid.data)
        if len(rows):
            column = grid.data[:, rows, cols]
            median = _temporal_median(column, params.k_t)
            reflected = _reflect(grid.data, rows, cols, params.k_s)
            first, second = _filtered_pair(variant, median, reflected)
            out[:, rows, cols] = _mix(column, first, second, np.ones(len(rows))[None, :])

    _logger.debug("protected %s grid in %s mode (%s), mask density %.4f", grid.shape, mode, variant, mask.density)
    return grid.replace(out)
