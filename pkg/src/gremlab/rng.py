"""Seeded random streams.

Every draw in the package comes from a generator returned by
:func:`derive_stream`, so that a (master seed, purpose tag, index) triple
fully determines it.  The triple is hashed with BLAKE2b; the 256-bit digest
seeds a PCG64 bit generator through :class:`numpy.random.SeedSequence`.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

GENERATOR_NAME = "PCG64/blake2b-256"


def stream_key(master_seed: int, tag: str, index: int = 0) -> bytes:
    """Return the 32-byte digest identifying a stream."""
    h = hashlib.blake2b(digest_size=32, person=b"gremlab-stream")
    h.update(struct.pack("<Q", int(master_seed) & 0xFFFFFFFFFFFFFFFF))
    h.update(tag.encode("utf-8"))
    h.update(b"\x00")
    h.update(struct.pack("<q", int(index)))
    return h.digest()


def derive_stream(master_seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for ``(master_seed, tag, index)``."""
    words = np.frombuffer(stream_key(master_seed, tag, index), dtype="<u4")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words.tolist())))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def chunk_map(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally over a process pool.

    Every task must draw from its own derived stream, so the result does not
    depend on ``workers``.  ``fn`` must be picklable when ``workers > 1``.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
