"""Counter-based random streams.

Every random draw in this package is a pure function of a 64-bit seed and
a tuple of integer labels (mode index, cell index, realization index, ...).
There is no mutable generator state, so parallel workers and lazily
materialized random fields produce identical values regardless of
evaluation order.  The mixing function is the splitmix64 finalizer, which
passes standard avalanche tests and is cheap to vectorize.

All arithmetic is carried out on uint64 arrays.  Constants must stay
wrapped in np.uint64: mixing a uint64 array with a plain Python int
silently upcasts to float64 and destroys the low bits.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_S63 = np.uint64(63)
_MASK = 0xFFFFFFFFFFFFFFFF
_INV53 = 2.0 ** -53


def _mix(z):
    """splitmix64 finalizer on a uint64 array."""
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


def _as_u64(key):
    """Coerce an integer scalar or integer array to uint64, wrapping
    negatives modulo 2**64 so signed labels are legal."""
    if isinstance(key, np.ndarray):
        if key.dtype == np.uint64:
            return key
        if key.dtype.kind not in "iu":
            raise TypeError(f"integer key required, got dtype {key.dtype}")
        return key.astype(np.int64).astype(np.uint64)
    return np.uint64(int(key) & _MASK)


def hash_u64(seed, *keys):
    """Hash (seed, keys...) to uint64.

    Array keys broadcast against each other; the result has the broadcast
    shape (a 0-d array for all-scalar input).  Appending a key always
    changes the value, so (seed, a) and (seed, a, b) never collide by
    construction of the fold.
    """
    with np.errstate(over="ignore"):
        h = _mix(np.asarray(_as_u64(seed) + _GOLDEN))
        for key in keys:
            h = _mix((h ^ _as_u64(key)) + _GOLDEN)
    return h


def uniform01(seed, *keys):
    """Uniform draw on [0, 1) with 53 random bits."""
    return (hash_u64(seed, *keys) >> _S11).astype(np.float64) * _INV53


def uniform(seed, lo, hi, *keys):
    return lo + (hi - lo) * uniform01(seed, *keys)


def rademacher(seed, *keys):
    """+-1.0 from the top hash bit."""
    bit = (hash_u64(seed, *keys) >> _S63).astype(np.float64)
    return 2.0 * bit - 1.0


def standard_normal(seed, *keys):
    """Gaussian draw via Box-Muller on two derived uniforms.

    The first uniform is shifted into (0, 1] so log never sees zero.
    """
    u1 = ((hash_u64(seed, 0x5A, *keys) >> _S11).astype(np.float64) + 1.0) * _INV53
    u2 = uniform01(seed, 0xA5, *keys)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def stream_seed(seed, *keys):
    """Derive a child seed as a plain Python int.

    Use one level per axis (epsilon index, realization index) so sibling
    streams never share draws with each other or with the parent.
    """
    return int(hash_u64(seed, *keys))
