"""Counter-based random streams.

Every draw in the library comes from a Philox generator keyed by
``(master seed, purpose tag, path block)``. Paths are grouped in fixed
blocks of :data:`BLOCK_SIZE`, so the numbers assigned to path ``i`` do not
depend on the ensemble size or on how blocks are spread over workers.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 512


def purpose_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str, block: int) -> np.random.Generator:
    """Generator for one (purpose, block) pair."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=(purpose_code(tag), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def blocks(n_paths: int):
    """Yield ``(block index, start, stop)`` covering ``range(n_paths)``."""
    for b, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        yield b, start, min(start + BLOCK_SIZE, n_paths)


def fill_blocks(n_paths, fn, workers=1):
    """Run ``fn(block, start, stop)`` for every block and return results in block order.

    ``workers`` only changes scheduling; each block owns its stream so the
    output is identical for any worker count.
    """
    spec = list(blocks(n_paths))
    if workers <= 1 or len(spec) <= 1:
        return [fn(*s) for s in spec]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: fn(*s), spec))
