"""Counter-based random streams for the Monte Carlo kernels.

Every sample index owns an independent stream keyed by ``(seed, index)``, so
results do not depend on how samples are split across threads.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(x):
    z = x
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def stream_key(seed, index):
    """Initial counter of the stream for sample ``index``."""
    return mix64(mix64(np.uint64(seed) + _GOLDEN) ^ (np.uint64(index) * _M2 + _GOLDEN))


@njit(cache=True, inline="always")
def next_float(state):
    """Uniform double in [0, 1); ``state`` is a length-1 uint64 array."""
    state[0] += _GOLDEN
    return float(mix64(state[0]) >> _S11) * _INV53


def uniforms(seed, n, dims=1):
    """Deterministic ``(n, dims)`` block of uniforms, one stream per row."""
    return _uniform_block(np.uint64(seed), n, dims)


@njit(cache=True)
def _uniform_block(seed, n, dims):
    out = np.empty((n, dims))
    st = np.empty(1, dtype=np.uint64)
    for i in range(n):
        st[0] = stream_key(seed, i)
        for j in range(dims):
            out[i, j] = next_float(st)
    return out
