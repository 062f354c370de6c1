"""Counter-based random streams.

Every random number used by the Monte Carlo engine is a pure function of
``(seed, path_id, purpose, index, block)``.  A path therefore sees the same
numbers whether it runs alone, inside a batch of thousands, or on another
worker process.  The bit generator is Philox4x32-10 (Salmon et al., SC'11),
evaluated with numpy over whole arrays of counters.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# purpose tags, one counter space each
WAIT = 1
JUMP = 2
NOISE = 3


def philox4x32(counter, key, rounds: int = 10):
    """Apply Philox4x32 to ``counter`` (4 arrays) under ``key`` (2 arrays).

    All inputs are broadcast against each other and must hold values below
    2**32.  Returns four uint64 arrays holding 32-bit words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) for k in key)
    # keys are usually scalars; only the counters need full arrays
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    shape = np.broadcast_shapes(c0.shape, k0.shape, k1.shape)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT) ^ c1 ^ k0,
            p1 & _MASK,
            (p0 >> _SHIFT) ^ c3 ^ k1,
            p0 & _MASK,
        )
    return tuple(np.broadcast_to(c, shape) for c in (c0, c1, c2, c3))


def _to_unit(hi, lo):
    # 53 random bits -> (0, 1), never exactly 0 or 1
    bits = ((hi << _SHIFT) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


class CounterStreams:
    """Family of independent streams indexed by path id under one seed."""

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be in [0, 2**64)")
        self.seed = seed
        self._key = (np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32))

    def uniforms(self, path_ids, purpose: int, index, k: int, block0: int = 0):
        """Uniforms on (0, 1), shape ``(len(path_ids), k)``.

        ``index`` is a per-path draw counter (event number or step number);
        ``block0`` offsets the 2-wide blocks so callers can carve several
        independent sub-streams out of one ``(purpose, index)`` slot.
        """
        path_ids = np.atleast_1d(np.asarray(path_ids, dtype=np.uint64))
        index = np.broadcast_to(np.asarray(index, dtype=np.uint64), path_ids.shape)
        nblocks = (k + 1) // 2
        blocks = np.arange(block0, block0 + nblocks, dtype=np.uint64)
        ctr = (
            (index & _MASK)[:, None],
            blocks[None, :],
            (path_ids & _MASK)[:, None],
            np.uint64(purpose) | ((path_ids >> _SHIFT) << np.uint64(8))[:, None],
        )
        w0, w1, w2, w3 = philox4x32(ctr, self._key)
        u = np.empty((path_ids.size, 2 * nblocks))
        u[:, 0::2] = _to_unit(w0, w1)
        u[:, 1::2] = _to_unit(w2, w3)
        return u[:, :k]

    def normals(self, path_ids, purpose: int, index, k: int, block0: int = 0):
        """Standard normals via Box-Muller, shape ``(len(path_ids), k)``."""
        m = (k + 1) // 2
        u = self.uniforms(path_ids, purpose, index, 2 * m, block0)
        rad = np.sqrt(-2.0 * np.log(u[:, 0::2]))
        ang = 2.0 * np.pi * u[:, 1::2]
        z = np.empty((u.shape[0], 2 * m))
        z[:, 0::2] = rad * np.cos(ang)
        z[:, 1::2] = rad * np.sin(ang)
        return z[:, :k]

    def stream(self, path_id: int) -> "PathStream":
        return PathStream(self, int(path_id))


class PathStream:
    """The stream of one path: ``stream(base_seed, path_id)``."""

    def __init__(self, family: CounterStreams, path_id: int):
        self.family = family
        self.path_id = path_id

    @classmethod
    def of(cls, seed: int, path_id: int) -> "PathStream":
        return cls(CounterStreams(seed), path_id)

    def __repr__(self):
        return f"PathStream(seed={self.family.seed}, path_id={self.path_id})"
