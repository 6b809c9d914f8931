"""
Byte layouts of the evpriv file formats, all little-endian.
"""
from typing import Dict, List, Tuple

import numpy as np

EVENTS_MAGIC = b"EVS1"
VOXEL_MAGIC = b"VOX1"
IMAGE_MAGIC = b"IMG1"
NETWORK_MAGIC = b"NET1"
WATERMARK_MAGIC = b"WMK1"
MAP_MAGIC = b"MAP1"

# magic, human readable name, file suffix
formats: List[Tuple[bytes, str, str]] = [
    (EVENTS_MAGIC, "event stream", ".evs"),
    (VOXEL_MAGIC, "voxel grid", ".vox"),
    (IMAGE_MAGIC, "frame image", ".img"),
    (NETWORK_MAGIC, "network parameters", ".net"),
    (WATERMARK_MAGIC, "noise watermark", ".wmk"),
    (MAP_MAGIC, "scene map", ".map"),
]
format_names: Dict[bytes, str] = {magic: name for magic, name, _ in formats}
suffix_magic: Dict[str, bytes] = {suffix: magic for magic, _, suffix in formats}

# u64 t_microseconds, u16 x, u16 y, i8 p; numpy packs structured dtypes without padding
event_record = np.dtype([('t', '<u8'), ('x', '<u2'), ('y', '<u2'), ('p', 'i1')])

# u32 W, u32 H, u64 count
events_header = "<IIQ"
# u32 B, u32 H, u32 W, f64 t0, f64 duration
voxel_header = "<IIIdd"
# u32 H, u32 W
image_header = "<II"
# u64 seed, u32 B, u32 H, u32 W
watermark_header = "<QIII"
# u32 Cin, u32 Cout, u8 activation tag
layer_header = "<IIB"
# u32 width, u32 height, f64 fx, f64 fy, f64 cx, f64 cy
intrinsics_header = "<IIdddd"

float32 = np.dtype('<f4')
float64 = np.dtype('<f8')
uint32 = np.dtype('<u4')

# activation name, file tag
activations: List[Tuple[str, int]] = [
    ("leaky_relu", 0),
    ("sigmoid", 1),
]
activation_tags: Dict[str, int] = dict(activations)
tag_activations: Dict[int, str] = {tag: name for name, tag in activations}
