"""Counter-based Philox4x32-10 generator, vectorized over counters.

Every draw is a pure function of ``(seed, stream, path, step, block)``, so a
batch of paths can be produced in any chunking or order and still be
bit-identical.
"""
from __future__ import annotations

import zlib

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

MAX_PATHS = 2**32


def philox4x32(counter, key, rounds: int = 10):
    """Apply Philox4x32 to broadcastable uint32 counter words.

    ``counter`` is a sequence of four integer arrays, ``key`` a pair of
    integers. Returns four uint64 arrays holding 32-bit outputs.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    k0 = np.uint64(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint64(int(key[1]) & 0xFFFFFFFF)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def _unit(hi, lo):
    # 53-bit mantissa, strictly inside (0, 1)
    bits = (hi << np.uint64(21)) | (lo >> np.uint64(11))
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, stream: int, paths, step: int, dim: int) -> np.ndarray:
    """Standard normals of shape ``(len(paths), dim)`` for one time step."""
    paths = np.asarray(paths, dtype=np.uint64)
    if paths.size and int(paths.max()) >= MAX_PATHS:
        raise ValueError("path index exceeds 32 bits")
    key = _split_seed(seed)
    n_blocks = (dim + 1) // 2
    blocks = np.arange(n_blocks, dtype=np.uint64)
    out = philox4x32(
        (np.uint64(step), paths[:, None], np.uint64(stream), blocks[None, :]), key
    )
    u1 = _unit(out[0], out[1])
    u2 = _unit(out[2], out[3])
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(paths.shape + (2 * n_blocks,))
    z[:, 0::2] = r * np.cos(2.0 * np.pi * u2)
    z[:, 1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:, :dim]


def uniforms(seed: int, stream: int, index, step: int = 0) -> np.ndarray:
    """Uniforms in (0, 1), one per entry of ``index``."""
    index = np.asarray(index, dtype=np.uint64)
    out = philox4x32((np.uint64(step), index, np.uint64(stream), np.uint64(0)),
                     _split_seed(seed))
    return _unit(out[0], out[1])


def _label_word(label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode())
    return int(label)


def derive_seed(seed: int, *labels) -> int:
    """Deterministically derive a child seed from a parent seed and integer or string labels."""
    key = _split_seed(seed)
    words = [_label_word(w) for w in labels] + [0] * (4 - len(labels) % 4 if len(labels) % 4 else 0)
    if not words:
        words = [0, 0, 0, 0]
    acc0, acc1 = key
    for i in range(0, len(words), 4):
        out = philox4x32([np.uint64(w & 0xFFFFFFFF) for w in words[i:i + 4]],
                         (acc0, acc1))
        acc0, acc1 = int(out[0]), int(out[1])
    return (acc1 << 32) | acc0
