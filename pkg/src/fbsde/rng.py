"""Counter-based normal variates keyed by (seed, stream, step, component).

The block function is Philox4x32-10 (Salmon et al., SC'11), evaluated
vectorised over arbitrary arrays of counters so that every Brownian
increment is a pure function of its key.  Path subsets, chunked or
threaded generation all reproduce the same bits.
"""

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# step value reserved for draws that must never coincide with Brownian noise
RESERVED_STEP = 0xFFFFFFFF

_GOLDEN = 0x9E3779B97F4A7C15


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function.

    Parameters
    ----------
    counter : sequence of four uint32-valued arrays (broadcastable)
    key : sequence of two uint32 scalars or arrays

    Returns
    -------
    tuple of four uint64 arrays holding 32-bit words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK32 for k in key)
    for i in range(rounds):
        if i > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def derive_seed(seed, index):
    """Seed for the ``index``-th child experiment; ``derive_seed(s, 0) == s``."""
    return (int(seed) + int(index) * _GOLDEN) % (1 << 64)


def _uniform53(hi, lo):
    # (0, 1]: never zero so log() in Box-Muller is finite
    bits = ((hi << _SHIFT32) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 1.0) * 2.0**-53


def normals(seed, streams, step, n_components):
    """Standard normals for every stream at one time step.

    Returns an array of shape ``(len(streams), n_components)``.  Entry
    ``[p, c]`` depends only on ``(seed, streams[p], step, c)``.
    """
    streams = np.asarray(streams, dtype=np.uint64).reshape(-1, 1)
    seed = int(seed) % (1 << 64)
    key = (seed & 0xFFFFFFFF, seed >> 32)
    n_pairs = (n_components + 1) // 2
    pair = np.arange(n_pairs, dtype=np.uint64).reshape(1, -1)
    counter = (
        np.uint64(int(step) & 0xFFFFFFFF),
        pair,
        streams & _MASK32,
        streams >> _SHIFT32,
    )
    w0, w1, w2, w3 = philox4x32(counter, key)
    u1 = _uniform53(w0, w1)
    u2 = _uniform53(w2, w3)
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    z = np.empty((streams.shape[0], 2 * n_pairs))
    z[:, 0::2] = rad * np.cos(ang)
    z[:, 1::2] = rad * np.sin(ang)
    return z[:, :n_components]


def brownian_increments(seed, streams, n_steps, n_components, dt, step_offset=0):
    """Increments ``(len(streams), n_steps, n_components)`` each ~ N(0, dt)."""
    streams = np.asarray(streams, dtype=np.uint64)
    out = np.empty((streams.shape[0], n_steps, n_components))
    scale = np.sqrt(dt)
    for i in range(n_steps):
        out[:, i, :] = scale * normals(seed, streams, step_offset + i, n_components)
    return out
