"""Counter-based Gaussian draws addressable by (seed, stream, step, index).

Each step of each stream owns a disjoint block of the Philox counter space,
so draws never depend on call order or on how work is split across threads.
Uniforms are mapped to normals through the inverse CDF.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

BASELINE_STREAM = 0


def stream_id(*parts) -> int:
    """Stable 63-bit stream id for a tag tuple; never collides with the baseline stream."""
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return (int.from_bytes(digest, "little") | (1 << 62)) & ((1 << 63) - 1)


def normals(seed: int, stream: int, step: int, n: int) -> np.ndarray:
    """Standard normal draws ``z[0..n)`` for one (seed, stream, step) block."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    counter = np.array([0, 0, step, 0], dtype=np.uint64)
    bits = np.random.Philox(key=key, counter=counter).random_raw(n)
    u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    return ndtri(u)


def brownian_increments(seed: int, stream: int, steps: int, n: int, h: float, first_step: int = 0) -> np.ndarray:
    """Array of shape (steps, n) of N(0, h) increments for steps first_step.. first_step+steps-1."""
    sq = np.sqrt(h)
    out = np.empty((steps, n))
    for k in range(steps):
        out[k] = sq * normals(seed, stream, first_step + k, n)
    return out
