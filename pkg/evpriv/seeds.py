"""
All randomness in evpriv flows from one root seed.

A generator is addressed by the root seed plus a path of labels, so module seeds can be
derived (and documented) without sharing generator state between modules.
"""
from typing import Union
from zlib import crc32

import numpy as np

Label = Union[int, str]


def _key(label: Label) -> int:
    if isinstance(label, str):
        return crc32(label.encode())
    if label < 0:
        raise ValueError(f"seed labels must be non-negative, got {label}")
    return int(label)


def seed_sequence(root: int, *path: Label) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root), spawn_key=tuple(_key(p) for p in path))


def generator(root: int, *path: Label) -> np.random.Generator:
    """
    Create a counter-based (Philox) generator for the given root seed and label path.

    Args:
        root: the root seed of the run
        path: labels (ints or strings) that name the consumer, e.g. ``("ransac", 7)``

    Returns:
        a fresh numpy Generator, identical for identical (root, path)
    """
    return np.random.Generator(np.random.Philox(seed_sequence(root, *path)))


def derive(root: int, *path: Label) -> int:
    """A 64 bit integer seed for the given label path."""
    return int(seed_sequence(root, *path).generate_state(1, dtype=np.uint64)[0])
