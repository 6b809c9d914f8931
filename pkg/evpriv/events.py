"""
Event streams, voxel grids and the frame-like event representations.

An event camera reports per-pixel brightness changes ``(t, x, y, p)``. Streams are kept
column-wise in numpy arrays; the ``Event`` tuple is only materialised when iterating.
"""
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from evpriv import exceptions
from evpriv._codec import formats

__all__ = [
    "DEFAULT_BINS", "Event", "EventStream", "VoxelGrid", "FrameImage", "parse_events", "format_events",
    "normalized_time", "voxelize", "slice_stream", "binary_event_image", "event_histogram", "timestamp_image",
    "sorted_timestamp_image", "representations", "voxel_frame", "read_voxel", "write_voxel", "read_image",
    "write_image",
]

_logger = logging.getLogger(__name__)

DEFAULT_BINS = 50

_header_geometry = re.compile(r"width\s*=\s*(?P<width>\d+).*height\s*=\s*(?P<height>\d+)")


class Event(NamedTuple):
    t: float
    x: int
    y: int
    p: int


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class EventStream:
    """
    A time ordered stream of events from a ``width`` x ``height`` sensor, spanning
    ``[t0, t0 + duration]`` seconds. The column arrays are read-only.
    """
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    t0: float = 0.0
    duration: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 't', _frozen(self.t, np.float64))
        object.__setattr__(self, 'x', _frozen(self.x, np.int64))
        object.__setattr__(self, 'y', _frozen(self.y, np.int64))
        object.__setattr__(self, 'p', _frozen(self.p, np.int8))

        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise exceptions.ShapeError("event columns differ in length")
        if self.width < 1 or self.height < 1:
            raise exceptions.DataError(f"invalid sensor size {self.width}x{self.height}")
        if self.duration < 0:
            raise exceptions.DataError(f"negative stream duration {self.duration}")
        if n == 0:
            return
        if np.any((self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)):
            raise exceptions.DataError("event coordinates outside the sensor")
        if np.any((self.p != 1) & (self.p != -1)):
            raise exceptions.DataError("event polarity must be +1 or -1")
        if np.any(np.diff(self.t) < 0):
            raise exceptions.DataError("events are not ordered in time")
        if self.t[0] < self.t0 or self.t[-1] > self.t0 + self.duration:
            raise exceptions.DataError(
                f"events span [{self.t[0]}, {self.t[-1]}] outside [{self.t0}, {self.t0 + self.duration}]")

    @classmethod
    def from_events(cls, events: Sequence[Event], width: int, height: int, t0: Optional[float] = None,
                    duration: Optional[float] = None, sort: bool = True) -> 'EventStream':
        """
        Build a stream from Event tuples.

        Args:
            events: the events, in any order when ``sort`` is set
            width: sensor width in pixels
            height: sensor height in pixels
            t0: stream start, defaults to the earliest timestamp (0 for an empty stream)
            duration: stream length, defaults to reach the latest timestamp
            sort: apply a stable sort on time
        """
        if events:
            t, x, y, p = (np.array(column) for column in zip(*events))
        else:
            t, x, y, p = (np.zeros(0) for _ in range(4))
        return cls.from_arrays(t, x, y, p, width, height, t0=t0, duration=duration, sort=sort)

    @classmethod
    def from_arrays(cls, t, x, y, p, width: int, height: int, t0: Optional[float] = None,
                    duration: Optional[float] = None, sort: bool = True) -> 'EventStream':
        t = np.asarray(t, dtype=np.float64)
        if sort and len(t):
            order = np.argsort(t, kind='stable')
            t, x, y, p = t[order], np.asarray(x)[order], np.asarray(y)[order], np.asarray(p)[order]
        if t0 is None:
            t0 = float(t.min()) if len(t) else 0.0
        if duration is None:
            duration = float(t.max()) - t0 if len(t) else 0.0
        return cls(t, x, y, p, width, height, t0, duration)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(t, x, y, p)

    @property
    def events(self) -> List[Event]:
        return list(self)

    def take(self, start: int, stop: int, t0: Optional[float] = None, duration: Optional[float] = None
             ) -> 'EventStream':
        """The events ``[start, stop)`` as a new stream, by default spanning exactly those events."""
        t = self.t[start:stop]
        if t0 is None:
            t0 = float(t[0]) if len(t) else self.t0
        if duration is None:
            duration = float(t[-1]) - t0 if len(t) else 0.0
        return EventStream(t, self.x[start:stop], self.y[start:stop], self.p[start:stop],
                           self.width, self.height, t0, duration)


@dataclass(frozen=True)
class VoxelGrid:
    """
    A ``bins`` x ``height`` x ``width`` accumulation of event polarities. ``t0`` and
    ``duration`` record the time span the grid was built from.
    """
    data: np.ndarray
    t0: float = 0.0
    duration: float = 0.0

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise exceptions.ShapeError(f"voxel grid must be 3 dimensional, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise exceptions.DataError("voxel grid contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def replace(self, data: np.ndarray) -> 'VoxelGrid':
        """A grid with new values and the same provenance."""
        return VoxelGrid(data, self.t0, self.duration)


@dataclass(frozen=True)
class FrameImage:
    """A grayscale image with values in [0, 1]."""
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64, copy=True)
        if pixels.ndim != 2:
            raise exceptions.ShapeError(f"frame image must be 2 dimensional, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min(initial=0.0) < 0.0 or pixels.max(initial=0.0) > 1.0:
            raise exceptions.DataError("frame image pixels must be finite and within [0, 1]")
        pixels.setflags(write=False)
        object.__setattr__(self, 'pixels', pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


Source = Union[bytes, BinaryIO, str, Path]


def _read_source(source: Source) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def _parse_csv(text: str, width: Optional[int], height: Optional[int], zero_is_negative: bool):
    columns: List[List] = [[], [], [], []]
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith('#'):
            match = _header_geometry.search(line)
            if match and width is None and height is None:
                width, height = int(match['width']), int(match['height'])
            continue
        fields = line.split(',')
        if len(fields) != 4:
            raise exceptions.FormatError(f"line {number}: expected 4 fields t,x,y,p, got {len(fields)}")
        try:
            t, x, y, p = float(fields[0]), int(fields[1]), int(fields[2]), int(fields[3])
        except ValueError as e:
            raise exceptions.FormatError(f"line {number}: {e}") from None
        if not np.isfinite(t) or t < 0:
            raise exceptions.FormatError(f"line {number}: timestamp {fields[0]} is not a non-negative number")
        if p == 0 and zero_is_negative:
            p = -1
        if p not in (1, -1):
            raise exceptions.FormatError(f"line {number}: polarity {fields[3].strip()} not in the accepted encoding")
        if width is not None and height is not None and not (0 <= x < width and 0 <= y < height):
            raise exceptions.FormatError(f"line {number}: ({x}, {y}) out of sensor bounds {width}x{height}")
        for column, value in zip(columns, (t, x, y, p)):
            column.append(value)
    if width is None or height is None:
        raise exceptions.FormatError("CSV events need a sensor size (argument or '# width=W height=H' header)")
    return columns, width, height


def parse_events(source: Source, format: str = 'csv', width: Optional[int] = None, height: Optional[int] = None,
                 zero_is_negative: bool = False, t0: Optional[float] = None,
                 duration: Optional[float] = None) -> EventStream:
    """
    Parse an event stream.

    Args:
        source: bytes, a binary file object or a path
        format: ``csv`` (``t,x,y,p`` lines, seconds) or ``binary`` (``EVS1`` container)
        width: sensor width, required for CSV input without a geometry header
        height: sensor height, required for CSV input without a geometry header
        zero_is_negative: accept ``{1, 0}`` polarities in CSV input, 0 meaning -1
        t0: stream start, defaults to the earliest event
        duration: stream length, defaults to reach the latest event

    Returns:
        the stream, stable sorted on time

    Raises:
        FormatError: on malformed records (with line number), out of bounds coordinates or bad polarities
    """
    data = _read_source(source)
    if format == 'csv':
        (t, x, y, p), width, height = _parse_csv(data.decode(), width, height, zero_is_negative)
    elif format == 'binary':
        width, height, records = formats.unpack_events(data)
        t = records['t'].astype(np.float64) / 1e6
        x, y, p = records['x'], records['y'], records['p']
        bad = (x >= width) | (y >= height)
        if np.any(bad):
            index = int(np.argmax(bad))
            raise exceptions.FormatError(f"record {index}: ({x[index]}, {y[index]}) out of sensor bounds "
                                         f"{width}x{height}")
        wrong = (p != 1) & (p != -1)
        if np.any(wrong):
            index = int(np.argmax(wrong))
            raise exceptions.FormatError(f"record {index}: polarity {p[index]} not in the accepted encoding")
    else:
        raise exceptions.ConfigError(f"unknown event format '{format}'")

    stream = EventStream.from_arrays(t, x, y, p, width, height, t0=t0, duration=duration)
    _logger.debug("parsed %d events from a %dx%d sensor", len(stream), width, height)
    return stream


def format_events(stream: EventStream, format: str = 'csv') -> bytes:
    """Serialise a stream in one of the formats parse_events() reads."""
    if format == 'csv':
        lines = [f"# width={stream.width} height={stream.height}"]
        lines.extend(f"{e.t!r},{e.x},{e.y},{e.p}" for e in stream)
        return ("\n".join(lines) + "\n").encode()
    elif format == 'binary':
        t_us = np.round(stream.t * 1e6).astype(np.uint64)
        return formats.pack_events(t_us, stream.x, stream.y, stream.p, stream.width, stream.height)
    raise exceptions.ConfigError(f"unknown event format '{format}'")


def normalized_time(stream: EventStream, bins: int) -> np.ndarray:
    """t* = (B - 1) / duration * (t - t0); zero for zero-length streams."""
    if stream.duration > 0:
        return (bins - 1) / stream.duration * (stream.t - stream.t0)
    return np.zeros(len(stream))


def voxelize(stream: EventStream, bins: int = DEFAULT_BINS) -> VoxelGrid:
    """
    Accumulate polarities into a ``bins`` x H x W grid with a bilinear temporal kernel,
    ``E(l, m, n) = sum_i p_i * max(0, 1 - |l - t*_i|)``.

    Contributions are added in stream order, so every entry is summed in a fixed order.
    """
    if bins < 1:
        raise exceptions.ConfigError(f"bin count must be at least 1, got {bins}")

    height, width = stream.height, stream.width
    data = np.zeros(bins * height * width)
    if len(stream):
        tstar = normalized_time(stream, bins)
        lower = np.floor(tstar).astype(np.int64)
        neighbours = np.stack([lower, lower + 1], axis=1)
        weights = np.maximum(0.0, 1.0 - np.abs(neighbours - tstar[:, None]))
        values = stream.p[:, None] * weights
        valid = (neighbours >= 0) & (neighbours < bins)
        flat = (neighbours * height + stream.y[:, None]) * width + stream.x[:, None]
        # row-major boolean selection keeps the two contributions of an event together, in stream order
        np.add.at(data, flat[valid], values[valid])
    return VoxelGrid(data.reshape(bins, height, width), stream.t0, stream.duration)


def slice_stream(stream: EventStream, count_per_slice: int) -> List[EventStream]:
    """
    Cut a stream into consecutive slices of ``count_per_slice`` events; the last one may
    be shorter. Each slice spans exactly its own events.
    """
    if count_per_slice < 1:
        raise exceptions.ConfigError(f"slice size must be positive, got {count_per_slice}")
    return [stream.take(start, start + count_per_slice) for start in range(0, len(stream), count_per_slice)]


def _last_events(stream: EventStream) -> np.ndarray:
    """Index of the last event at every pixel (flattened), -1 where there is none."""
    last = np.full(stream.height * stream.width, -1, dtype=np.int64)
    np.maximum.at(last, stream.y * stream.width + stream.x, np.arange(len(stream)))
    return last


def binary_event_image(stream: EventStream) -> FrameImage:
    """1 where the last event at a pixel is positive, 0 where it is negative, 0.5 elsewhere."""
    last = _last_events(stream)
    pixels = np.full(last.shape, 0.5)
    active = last >= 0
    pixels[active] = np.where(stream.p[last[active]] > 0, 1.0, 0.0)
    return FrameImage(pixels.reshape(stream.height, stream.width))


def event_histogram(stream: EventStream) -> FrameImage:
    """Per-pixel event counts scaled by the largest count."""
    counts = np.bincount(stream.y * stream.width + stream.x, minlength=stream.height * stream.width)
    counts = counts.astype(np.float64)
    peak = counts.max(initial=0.0)
    if peak > 0:
        counts /= peak
    return FrameImage(counts.reshape(stream.height, stream.width))


def timestamp_image(stream: EventStream) -> FrameImage:
    """(t_last - t0) / duration where a pixel saw events, 0 elsewhere (and for zero-length streams)."""
    last = _last_events(stream)
    pixels = np.zeros(last.shape)
    active = last >= 0
    if stream.duration > 0:
        pixels[active] = np.clip((stream.t[last[active]] - stream.t0) / stream.duration, 0.0, 1.0)
    return FrameImage(pixels.reshape(stream.height, stream.width))


def sorted_timestamp_image(stream: EventStream) -> FrameImage:
    """Dense rank of the most recent timestamp over the number of distinct ranks, 0 without events."""
    last = _last_events(stream)
    pixels = np.zeros(last.shape)
    active = last >= 0
    if np.any(active):
        stamps = stream.t[last[active]]
        distinct = np.unique(stamps)
        pixels[active] = (np.searchsorted(distinct, stamps) + 1) / len(distinct)
    return FrameImage(pixels.reshape(stream.height, stream.width))


representations = {
    'binary': binary_event_image,
    'histogram': event_histogram,
    'timestamp': timestamp_image,
    'sorted_timestamp': sorted_timestamp_image,
}


def voxel_frame(grid: VoxelGrid) -> FrameImage:
    """Temporally summed absolute accumulation, max-normalised; a stand-in reconstruction."""
    mass = np.abs(grid.data).sum(axis=0)
    peak = mass.max(initial=0.0)
    return FrameImage(mass / peak if peak > 0 else mass)


def read_voxel(path: Union[str, Path]) -> VoxelGrid:
    data, t0, duration = formats.unpack_voxel(Path(path).read_bytes())
    return VoxelGrid(data, t0, duration)


def write_voxel(path: Union[str, Path], grid: VoxelGrid) -> None:
    Path(path).write_bytes(formats.pack_voxel(grid.data, grid.t0, grid.duration))


def read_image(path: Union[str, Path]) -> FrameImage:
    """Read an ``IMG1`` container or, for ``.pgm`` files, an 8 bit PGM."""
    path = Path(path)
    if path.suffix.lower() == '.pgm':
        return FrameImage(formats.read_pgm(path))
    return FrameImage(formats.unpack_image(path.read_bytes()))


def write_image(path: Union[str, Path], image: FrameImage) -> None:
    path = Path(path)
    if path.suffix.lower() == '.pgm':
        formats.write_pgm(path, image.pixels)
    else:
        path.write_bytes(formats.pack_image(image.pixels))
