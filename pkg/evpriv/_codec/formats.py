"""
Readers and writers for the evpriv binary containers.

Everything here works on bytes and numpy arrays; the typed wrappers live next to the
domain types (events, recon_net, localization).
"""
import logging
import struct
from io import BytesIO
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from evpriv import exceptions
from evpriv._codec import convert
from evpriv._codec.errors import check_length, check_magic

_logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Layer = Tuple[np.ndarray, np.ndarray, str]


class Reader:
    """
    Cursor over an immutable byte buffer that refuses to read past the end.
    """

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.what = what
        self.offset = 0

    def take(self, n: int) -> bytes:
        check_length(self.data, self.offset + n, self.what)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: np.dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype, count=count)

    def magic(self, expected: bytes) -> None:
        check_length(self.data, len(expected), self.what)
        check_magic(self.take(len(expected)), expected)

    def finish(self) -> None:
        if self.offset != len(self.data):
            msg = f"{len(self.data) - self.offset} trailing bytes after {self.what}"
            _logger.error(msg)
            raise exceptions.FormatError(msg)


def pack_events(t_us: np.ndarray, x: np.ndarray, y: np.ndarray, p: np.ndarray, width: int, height: int) -> bytes:
    records = np.empty(len(t_us), dtype=convert.event_record)
    records['t'] = t_us
    records['x'] = x
    records['y'] = y
    records['p'] = p
    header = struct.pack(convert.events_header, width, height, len(records))
    return convert.EVENTS_MAGIC + header + records.tobytes()


def unpack_events(data: bytes) -> Tuple[int, int, np.ndarray]:
    """
    Returns:
        width, height and a structured record array with fields t (microseconds), x, y, p
    """
    reader = Reader(data, "event stream")
    reader.magic(convert.EVENTS_MAGIC)
    width, height, count = reader.unpack(convert.events_header)
    records = reader.array(convert.event_record, count)
    reader.finish()
    return width, height, records


def pack_voxel(data: np.ndarray, t0: float, duration: float) -> bytes:
    bins, height, width = data.shape
    header = struct.pack(convert.voxel_header, bins, height, width, t0, duration)
    return convert.VOXEL_MAGIC + header + np.ascontiguousarray(data, dtype=convert.float32).tobytes()


def unpack_voxel(data: bytes) -> Tuple[np.ndarray, float, float]:
    reader = Reader(data, "voxel grid")
    reader.magic(convert.VOXEL_MAGIC)
    bins, height, width, t0, duration = reader.unpack(convert.voxel_header)
    values = reader.array(convert.float32, bins * height * width)
    reader.finish()
    return values.astype(np.float64).reshape(bins, height, width), t0, duration


def pack_image(pixels: np.ndarray) -> bytes:
    height, width = pixels.shape
    header = struct.pack(convert.image_header, height, width)
    return convert.IMAGE_MAGIC + header + np.ascontiguousarray(pixels, dtype=convert.float32).tobytes()


def unpack_image(data: bytes) -> np.ndarray:
    reader = Reader(data, "frame image")
    reader.magic(convert.IMAGE_MAGIC)
    height, width = reader.unpack(convert.image_header)
    values = reader.array(convert.float32, height * width)
    reader.finish()
    return values.astype(np.float64).reshape(height, width)


def write_pgm(path: PathLike, pixels: np.ndarray) -> None:
    """
    Write a binary 8 bit PGM (P5), values round(pixel * 255).
    """
    quantized = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized).save(str(path), format='PPM')


def read_pgm(path: PathLike) -> np.ndarray:
    with Image.open(str(path)) as image:
        if image.mode != 'L':
            raise exceptions.FormatError(f"{path} is not an 8 bit grayscale PGM (mode {image.mode})")
        return np.asarray(image, dtype=np.float64) / 255.0


def pack_network(layers: Sequence[Layer], split_points: Tuple[int, int]) -> bytes:
    """
    Layout: magic, u32 layer count, per layer (u32 Cin, u32 Cout, u8 activation tag,
    f32 kernel 3x3xCinxCout, f32 bias Cout), two u32 split points.
    """
    out = BytesIO()
    out.write(convert.NETWORK_MAGIC)
    out.write(struct.pack("<I", len(layers)))
    for kernel, bias, activation in layers:
        _, _, c_in, c_out = kernel.shape
        out.write(struct.pack(convert.layer_header, c_in, c_out, convert.activation_tags[activation]))
        out.write(np.ascontiguousarray(kernel, dtype=convert.float32).tobytes())
        out.write(np.ascontiguousarray(bias, dtype=convert.float32).tobytes())
    out.write(struct.pack("<II", *split_points))
    return out.getvalue()


def unpack_network(data: bytes) -> Tuple[List[Layer], Tuple[int, int]]:
    reader = Reader(data, "network parameters")
    reader.magic(convert.NETWORK_MAGIC)
    count, = reader.unpack("<I")
    layers: List[Layer] = []
    for _ in range(count):
        c_in, c_out, tag = reader.unpack(convert.layer_header)
        if tag not in convert.tag_activations:
            raise exceptions.FormatError(f"unknown activation tag {tag}")
        kernel = reader.array(convert.float32, 9 * c_in * c_out).astype(np.float64).reshape(3, 3, c_in, c_out)
        bias = reader.array(convert.float32, c_out).astype(np.float64)
        layers.append((kernel, bias, convert.tag_activations[tag]))
    first, second = reader.unpack("<II")
    reader.finish()
    return layers, (first, second)


def pack_watermark(seed: int, shape: Tuple[int, int, int]) -> bytes:
    return convert.WATERMARK_MAGIC + struct.pack(convert.watermark_header, seed, *shape)


def unpack_watermark(data: bytes) -> Tuple[int, Tuple[int, int, int]]:
    reader = Reader(data, "noise watermark")
    reader.magic(convert.WATERMARK_MAGIC)
    seed, bins, height, width = reader.unpack(convert.watermark_header)
    reader.finish()
    return seed, (bins, height, width)


MapReference = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]


def pack_map(size: Tuple[int, int], intrinsics: Tuple[float, float, float, float], points: np.ndarray,
             references: Sequence[MapReference]) -> bytes:
    """
    Each reference is (R 3x3, t 3, descriptor, keypoints Nx2, visibility N).
    """
    out = BytesIO()
    out.write(convert.MAP_MAGIC)
    out.write(struct.pack(convert.intrinsics_header, size[0], size[1], *intrinsics))
    out.write(struct.pack("<I", len(points)))
    out.write(np.ascontiguousarray(points, dtype=convert.float64).tobytes())
    out.write(struct.pack("<I", len(references)))
    for rotation, translation, descriptor, keypoints, visibility in references:
        out.write(np.ascontiguousarray(rotation, dtype=convert.float64).tobytes())
        out.write(np.ascontiguousarray(translation, dtype=convert.float64).tobytes())
        out.write(struct.pack("<I", len(descriptor)))
        out.write(np.ascontiguousarray(descriptor, dtype=convert.float64).tobytes())
        out.write(struct.pack("<I", len(visibility)))
        out.write(np.ascontiguousarray(keypoints, dtype=convert.float64).tobytes())
        out.write(np.ascontiguousarray(visibility, dtype=convert.uint32).tobytes())
    return out.getvalue()


def unpack_map(data: bytes) -> Tuple[Tuple[int, int], Tuple[float, float, float, float], np.ndarray,
                                     List[MapReference]]:
    reader = Reader(data, "scene map")
    reader.magic(convert.MAP_MAGIC)
    width, height, fx, fy, cx, cy = reader.unpack(convert.intrinsics_header)
    n_points, = reader.unpack("<I")
    points = reader.array(convert.float64, 3 * n_points).reshape(n_points, 3)
    n_refs, = reader.unpack("<I")
    references: List[MapReference] = []
    for _ in range(n_refs):
        rotation = reader.array(convert.float64, 9).reshape(3, 3)
        translation = reader.array(convert.float64, 3)
        n_desc, = reader.unpack("<I")
        descriptor = reader.array(convert.float64, n_desc)
        n_vis, = reader.unpack("<I")
        keypoints = reader.array(convert.float64, 2 * n_vis).reshape(n_vis, 2)
        visibility = reader.array(convert.uint32, n_vis).astype(np.int64)
        references.append((rotation, translation, descriptor, keypoints, visibility))
    reader.finish()
    return (width, height), (fx, fy, cx, cy), points, references
