"""Deterministic RNG stream derivation.

Every random draw in the library comes from a stream addressed by
(master seed, experiment tag, path index, purpose, extra keys). Streams are
spawned through numpy's SeedSequence, so they are statistically independent
and reproducible regardless of execution order or worker count.
"""

from __future__ import annotations

import zlib

import numpy as np

# purpose codes for per-path substreams
BROWNIAN = 1
JUMPS = 2
COMPENSATOR = 3
PROBE = 4
GENERIC = 5

DEFAULT_SEED = 0xC0FFEE


def tag_code(tag: str) -> int:
    """Stable 32-bit code for an experiment tag (crc32, not hash())."""
    return zlib.crc32(tag.encode("utf-8"))


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for the substream addressed by the given integer key path."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.SFC64(ss))


def path_stream(master_seed: int, tag: str, path_index: int, purpose: int,
                *extra: int) -> np.random.Generator:
    """Substream for one purpose within one simulated path."""
    return stream(master_seed, tag_code(tag), path_index, purpose, *extra)
