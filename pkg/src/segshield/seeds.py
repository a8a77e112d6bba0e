"""Named random sub-streams derived from one root seed.

Each component draws from its own stream, so adding randomness to one
stage never shifts the numbers another stage sees.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("train", "scene", "attack", "noise", "grid")


def stream_id(name: str) -> int:
    if name not in STREAMS:
        raise ValueError(f"unknown seed stream {name!r}; expected one of {STREAMS}")
    return zlib.crc32(name.encode())


def sub_seed(root: int, name: str) -> int:
    """A stable 32-bit integer seed for stream ``name`` under ``root``."""
    ss = np.random.SeedSequence([int(root), stream_id(name)])
    return int(ss.generate_state(1)[0])


def rng(root: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(root), stream_id(name), *map(int, extra)])
