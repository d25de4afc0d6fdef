"""Counter-based random numbers (Philox4x32-10), vectorized over counters.

Every draw is a pure function of ``(key, counter)``.  The solver keys a
run by its master seed and places ``(sample, step, lane, tag)`` in the
four counter words, so any subset of samples or steps can be regenerated
independently of how the work was scheduled.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# Tags separate independent uses of one (seed, sample, step) triple.
TAG_INCREMENT = 0
TAG_JUMPS = 1
TAG_START = 2


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function.

    Parameters
    ----------
    counter : array_like of uint32, shape (..., 4)
    key : pair of ints (k0, k1), each < 2**32

    Returns
    -------
    ndarray of uint32 with the shape of ``counter``.
    """
    c = np.asarray(counter, dtype=np.uint64)
    c0, c1, c2, c3 = (c[..., i].copy() for i in range(4))
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0 = hi1 ^ c1 ^ np.uint64(k0)
        c1 = lo1
        c2 = hi0 ^ c3 ^ np.uint64(k1)
        c3 = lo0
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def seed_key(seed):
    """Split a 64-bit master seed into a Philox key."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed, sample, step, lane, tag=TAG_INCREMENT):
    """Two open-interval uniforms in (0, 1) per counter.

    ``sample``, ``step`` and ``lane`` broadcast against each other; the
    result has their broadcast shape plus a trailing axis of length 2.
    Each double takes 53 bits from a pair of 32-bit words.
    """
    sample, step, lane = np.broadcast_arrays(
        np.asarray(sample, dtype=np.int64),
        np.asarray(step, dtype=np.int64),
        np.asarray(lane, dtype=np.int64))
    ctr = np.empty(sample.shape + (4,), dtype=np.uint64)
    ctr[..., 0] = sample.astype(np.uint64) & _MASK
    ctr[..., 1] = step.astype(np.uint64) & _MASK
    ctr[..., 2] = lane.astype(np.uint64) & _MASK
    ctr[..., 3] = np.uint64(tag)
    words = philox4x32(ctr, seed_key(seed)).astype(np.uint64)
    hi = np.stack([words[..., 0], words[..., 2]], axis=-1)
    lo = np.stack([words[..., 1], words[..., 3]], axis=-1)
    bits = ((hi << np.uint64(21)) | (lo >> np.uint64(11))) & np.uint64((1 << 53) - 1)
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def uniform_block(seed, samples, steps, n, tag=TAG_INCREMENT):
    """``n`` uniforms for every (step, sample) pair.

    Returns an array of shape ``(len(steps), len(samples), n)``.
    """
    samples = np.asarray(samples, dtype=np.int64)
    steps = np.asarray(steps, dtype=np.int64)
    lanes = np.arange((n + 1) // 2, dtype=np.int64)
    u = uniforms(seed, samples[None, :, None], steps[:, None, None],
                 lanes[None, None, :], tag)
    return u.reshape(len(steps), len(samples), -1)[..., :n]


def standard_normals(u1, u2):
    """Box-Muller: two independent N(0,1) arrays from two uniform arrays."""
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    return r * np.cos(theta), r * np.sin(theta)
