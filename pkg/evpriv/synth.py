"""
Ground-truth event streams from translating intensity scenes.

A scene is an intensity tile that moves with constant velocity. The tile repeats
periodically, so every frame pixel always sees scene content. Events come from a
per-pixel residual accumulator on the log intensity: each time the accumulated change
reaches the contrast threshold an event of that sign fires and the residual drops by
``p * C``.

A ramp scene is sloped so that every pixel crosses the threshold a power of two number
of times over the duration, which makes its voxel accumulations monotone when the bins
match the crossing period.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage

from evpriv import exceptions, seeds
from evpriv.events import EventStream, FrameImage, VoxelGrid, voxelize

_logger = logging.getLogger(__name__)

SCENE_KINDS = ('ramp', 'step', 'texture')

# scene intensities stay within [MIN_INTENSITY, 1] so the log is always defined
MIN_INTENSITY = 0.1


@dataclass(frozen=True)
class SceneSpec:
    """
    A constant velocity translation of a ``ramp``, ``step`` or ``texture`` scene.

    Args:
        kind: scene type
        width: frame width in pixels
        height: frame height in pixels
        velocity: (vx, vy) in pixels per second
        threshold: contrast threshold C in log intensity units
        duration: seconds
        seed: texture seed
    """
    kind: str = 'texture'
    width: int = 32
    height: int = 32
    velocity: Tuple[float, float] = (8.0, 0.0)
    threshold: float = 0.2
    duration: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise exceptions.ConfigError(f"unknown scene kind '{self.kind}', choose from {', '.join(SCENE_KINDS)}")
        if self.width < 2 or self.height < 2:
            raise exceptions.ConfigError(f"scene must be at least 2x2 pixels, got {self.width}x{self.height}")
        if not self.threshold > 0:
            raise exceptions.ConfigError(f"contrast threshold must be positive, got {self.threshold}")
        if not self.duration > 0:
            raise exceptions.ConfigError(f"scene duration must be positive, got {self.duration}")
        object.__setattr__(self, 'velocity', (float(self.velocity[0]), float(self.velocity[1])))


scene_presets: Dict[str, SceneSpec] = {
    'ramp': SceneSpec(kind='ramp', width=64, height=48, velocity=(20.0, 0.0), threshold=0.05),
    'step': SceneSpec(kind='step', width=64, height=48, velocity=(20.0, 0.0), threshold=0.05),
    'texture': SceneSpec(kind='texture', width=64, height=48, velocity=(12.0, 5.0)),
}


def ramp_crossings(spec: SceneSpec) -> int:
    """
    Threshold crossings every pixel of a ramp scene makes over the whole duration: the
    largest power of two that keeps the ramp inside [MIN_INTENSITY, 1] at every position
    visited during the scene, 0 for a ramp at rest or one too shallow to cross once.

    With a power of two duration the crossing times are exact binary fractions, and
    voxelising with ramp_bins() bins puts exactly one crossing on every bin but the first.
    """
    travel = abs(spec.velocity[0]) * spec.duration
    whole = int(np.floor(np.log(1.0 / MIN_INTENSITY) * travel / ((spec.width - 1 + travel) * spec.threshold)))
    return 1 << (whole.bit_length() - 1) if whole > 0 else 0


def ramp_bins(spec: SceneSpec) -> int:
    """Voxel bins whose spacing equals the crossing period of a ramp scene."""
    return ramp_crossings(spec) + 1


def ramp_gradient(spec: SceneSpec) -> float:
    """
    Log intensity slope along x of a ramp scene. A ramp that crosses the threshold
    changes every pixel by exactly ramp_crossings() thresholds over the duration; any
    other ramp spans exactly [ln 0.1, 0] over every position visited during the scene.
    """
    crossings = ramp_crossings(spec)
    if crossings:
        return crossings * spec.threshold / (abs(spec.velocity[0]) * spec.duration)
    span = (spec.width - 1) + abs(spec.velocity[0]) * spec.duration
    return float(np.log(1.0 / MIN_INTENSITY)) / span


def ramp_rate(spec: SceneSpec) -> float:
    """dL/dt of every pixel of a ramp scene; constant in space and time."""
    return -ramp_gradient(spec) * spec.velocity[0]


def _ramp_log(spec: SceneSpec, t: float) -> np.ndarray:
    # leftmost scene coordinate ever sampled maps to ln(MIN_INTENSITY)
    origin = min(0.0, -spec.velocity[0] * spec.duration)
    x = np.arange(spec.width, dtype=np.float64) - spec.velocity[0] * t - origin
    row = np.log(MIN_INTENSITY) + ramp_gradient(spec) * x
    return np.broadcast_to(row, (spec.height, spec.width)).copy()


def _texture_tile(spec: SceneSpec) -> np.ndarray:
    rng = seeds.generator(spec.seed, 'texture')
    noise = rng.standard_normal((spec.height, spec.width))
    fy = np.fft.fftfreq(spec.height)[:, None]
    fx = np.fft.fftfreq(spec.width)[None, :]
    lowpass = np.exp(-(fx ** 2 + fy ** 2) / (2 * 0.08 ** 2))
    field = np.fft.ifft2(np.fft.fft2(noise) * lowpass).real
    lo, hi = field.min(), field.max()
    if hi - lo == 0:
        return np.full(field.shape, 1.0)
    return MIN_INTENSITY + (1.0 - MIN_INTENSITY) * (field - lo) / (hi - lo)


def _step_tile(spec: SceneSpec) -> np.ndarray:
    tile = np.full((spec.height, spec.width), MIN_INTENSITY)
    tile[:, :spec.width // 2] = 1.0
    return tile


def scene_tile(spec: SceneSpec) -> np.ndarray:
    """
    The periodic intensity tile of a raster scene (``step`` or ``texture``) at t = 0.
    """
    if spec.kind == 'step':
        return _step_tile(spec)
    if spec.kind == 'texture':
        return _texture_tile(spec)
    raise exceptions.ConfigError("ramp scenes are analytic and have no raster tile")


def _log_frames(spec: SceneSpec, times: Sequence[float]) -> np.ndarray:
    if spec.kind == 'ramp':
        return np.stack([_ramp_log(spec, t) for t in times])
    tile = scene_tile(spec)
    rows, cols = np.meshgrid(np.arange(spec.height, dtype=np.float64), np.arange(spec.width, dtype=np.float64),
                             indexing='ij')
    vx, vy = spec.velocity
    frames = [ndimage.map_coordinates(tile, [rows - vy * t, cols - vx * t], order=1, mode='grid-wrap')
              for t in times]
    return np.log(np.stack(frames))


def render_frame(spec: SceneSpec, t: float) -> FrameImage:
    """
    Sample the translated scene at time ``t``, bilinearly and with periodic wrap.

    Raises:
        InterfaceError: if t lies outside [0, duration]
    """
    if not 0 <= t <= spec.duration:
        raise exceptions.InterfaceError(f"time {t} outside the scene duration [0, {spec.duration}]")
    return FrameImage(np.clip(np.exp(_log_frames(spec, [t])[0]), 0.0, 1.0))


def _simulate_log(log_frames: np.ndarray, times: np.ndarray, threshold: float, width: int, height: int,
                  duration: float) -> EventStream:
    residual = np.zeros((height, width))
    ts: List[np.ndarray] = []
    xs: List[np.ndarray] = []
    ys: List[np.ndarray] = []
    ps: List[np.ndarray] = []
    for i in range(1, len(log_frames)):
        delta = log_frames[i] - log_frames[i - 1]
        start = residual
        end = start + delta
        polarity = np.where(end >= 0, 1, -1)
        counts = np.floor(np.abs(end) / threshold).astype(np.int64)
        t_a, t_b = times[i - 1], times[i]
        for j in range(1, int(counts.max(initial=0)) + 1):
            rows, cols = np.nonzero(counts >= j)
            p = polarity[rows, cols]
            # fraction of the substep at which the residual reaches p * j * C
            fraction = (p * j * threshold - start[rows, cols]) / delta[rows, cols]
            ts.append(t_a + fraction * (t_b - t_a))
            xs.append(cols)
            ys.append(rows)
            ps.append(p)
        residual = end - polarity * counts * threshold

    if ts:
        t, x, y, p = (np.concatenate(c) for c in (ts, xs, ys, ps))
    else:
        t, x, y, p = (np.zeros(0) for _ in range(4))
    t = np.clip(t, times[0], times[-1])
    return EventStream.from_arrays(t, x, y, p, width, height, t0=float(times[0]), duration=duration)


def simulate_frames(frames: Sequence[np.ndarray], times: Sequence[float], threshold: float) -> EventStream:
    """
    Emit events from a sequence of intensity frames with the residual accumulator.

    Args:
        frames: T frames of shape H x W with intensities in (0, 1]
        times: T increasing timestamps in seconds
        threshold: contrast threshold C

    Returns:
        the events, stable sorted on time, spanning [times[0], times[-1]]
    """
    frames = np.asarray(frames, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if frames.ndim != 3 or len(frames) != len(times) or len(frames) < 2:
        raise exceptions.ShapeError(f"need at least two frames with one timestamp each, got {frames.shape} and "
                                    f"{times.shape}")
    if np.any(np.diff(times) <= 0):
        raise exceptions.DataError("frame times must be increasing")
    if not threshold > 0:
        raise exceptions.ConfigError(f"contrast threshold must be positive, got {threshold}")
    if np.any(frames <= 0):
        raise exceptions.DataError("frame intensities must be positive")
    _, height, width = frames.shape
    return _simulate_log(np.log(frames), times, threshold, width, height, float(times[-1] - times[0]))


def _ramp_events(spec: SceneSpec) -> EventStream:
    # every residual starts at zero and moves at the same constant rate, so all pixels
    # cross together at t_j = j * duration / N
    crossings = ramp_crossings(spec)
    times = spec.duration * np.arange(1, crossings + 1) / crossings if crossings else np.zeros(0)
    rows, cols = np.divmod(np.arange(spec.width * spec.height), spec.width)
    polarity = 1 if ramp_rate(spec) > 0 else -1
    t = np.repeat(times, len(rows))
    return EventStream.from_arrays(t, np.tile(cols, crossings), np.tile(rows, crossings), np.full(len(t), polarity),
                                   spec.width, spec.height, t0=0.0, duration=spec.duration)


def simulate_events(spec: SceneSpec, substeps: int = 16) -> EventStream:
    """
    Simulate the events of a scene from ``substeps`` equally spaced log frames covering
    [0, duration]. Crossing times are interpolated linearly inside each substep.

    Ramp scenes change every pixel at one constant rate, so their crossing times are
    taken in closed form and ``substeps`` does not affect them.
    """
    if substeps < 2:
        raise exceptions.ConfigError(f"need at least 2 substeps, got {substeps}")
    if spec.kind == 'ramp':
        stream = _ramp_events(spec)
    else:
        times = np.array([i * spec.duration / (substeps - 1) for i in range(substeps)])
        stream = _simulate_log(_log_frames(spec, times), times, spec.threshold, spec.width, spec.height,
                               spec.duration)
    _logger.debug("simulated %d events for a %s scene", len(stream), spec.kind)
    return stream


class Sample(NamedTuple):
    voxel: VoxelGrid
    frame: FrameImage


def make_dataset(seed: int, count: int, template: SceneSpec, bins: int, substeps: int = 8) -> List[Sample]:
    """
    Voxelised texture scenes paired with their final intensity frame.

    Every sample has its own texture and velocity, both derived from ``seed``.
    """
    rng = seeds.generator(seed, 'dataset')
    samples = []
    for i in range(count):
        speed = template.width / (4 * template.duration)
        spec = replace(template, kind='texture', seed=seeds.derive(seed, 'scene', i),
                       velocity=tuple(rng.uniform(-speed, speed, size=2)))
        stream = simulate_events(spec, substeps)
        samples.append(Sample(voxelize(stream, bins), render_frame(spec, spec.duration)))
    return samples
