"""Deterministic random number machinery.

Two layers:

* ``derive_seed`` hashes arbitrary labels (global seed, entity id, chain
  index, ...) into independent 64-bit seeds, so per-entity / per-chain
  streams never depend on scheduling order.
* A small xoshiro256** generator used *inside* the sampler kernels, where
  NumPy ``Generator`` objects are unavailable under numba. State lives in a
  ``uint64[4]`` array owned by the caller; the numba and pure-Python
  implementations produce identical integer streams.

Python-level code (synthetic data, posterior predictive simulation) uses
``numpy.random.default_rng`` seeded through ``derive_seed``.
"""

import hashlib

import numpy as np

from ._backend import NUMBA_ENABLED, jit_kernel

__all__ = ["derive_seed", "generator", "rng_new", "rng_u64", "rng_uniform", "rng_normal"]

_MASK64 = (1 << 64) - 1


def derive_seed(*parts) -> int:
    """Hash labels into a stable 63-bit seed (order-sensitive, int64-safe)."""
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little") & (2**63 - 1)


def generator(*parts) -> np.random.Generator:
    """A numpy Generator seeded from hashed labels."""
    return np.random.default_rng(derive_seed(*parts))


_DOUBLE_UNIT = 1.0 / 9007199254740992.0  # 2**-53
_TWO_PI = 6.283185307179586

if NUMBA_ENABLED:
    import math

    _U7 = np.uint64(7)
    _U9 = np.uint64(9)
    _U5 = np.uint64(5)
    _U11 = np.uint64(11)
    _U17 = np.uint64(17)
    _U23 = np.uint64(23)
    _U27 = np.uint64(27)
    _U30 = np.uint64(30)
    _U31 = np.uint64(31)
    _U45 = np.uint64(45)
    _U19 = np.uint64(19)
    _U57 = np.uint64(57)
    _U64 = np.uint64(64)
    _SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
    _SPLITMIX_M1 = np.uint64(0xBF58476D1CE4E5B9)
    _SPLITMIX_M2 = np.uint64(0x94D049BB133111EB)

    @jit_kernel
    def _splitmix64(x):
        x = x + _SPLITMIX_GAMMA
        z = x
        z = (z ^ (z >> _U30)) * _SPLITMIX_M1
        z = (z ^ (z >> _U27)) * _SPLITMIX_M2
        return x, z ^ (z >> _U31)

    @jit_kernel
    def rng_new(seed):
        state = np.empty(4, dtype=np.uint64)
        x = np.uint64(seed)
        for i in range(4):
            x, z = _splitmix64(x)
            state[i] = z
        return state

    @jit_kernel
    def _rotl(x, k):
        return (x << k) | (x >> (_U64 - k))

    @jit_kernel
    def rng_u64(state):
        s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
        result = _rotl(s1 * _U5, _U7) * _U9
        t = s1 << _U17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, _U45)
        state[0], state[1], state[2], state[3] = s0, s1, s2, s3
        return result

    @jit_kernel
    def rng_uniform(state):
        return (rng_u64(state) >> _U11) * _DOUBLE_UNIT

    @jit_kernel
    def rng_normal(state):
        u1 = 1.0 - rng_uniform(state)
        u2 = rng_uniform(state)
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)

else:
    import math

    def _splitmix64(x):
        x = (x + 0x9E3779B97F4A7C15) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return x, z ^ (z >> 31)

    def rng_new(seed):
        state = np.empty(4, dtype=np.uint64)
        x = int(seed) & _MASK64
        for i in range(4):
            x, z = _splitmix64(x)
            state[i] = z
        return state

    def _rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & _MASK64

    def rng_u64(state):
        s0, s1, s2, s3 = int(state[0]), int(state[1]), int(state[2]), int(state[3])
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        state[0] = s0
        state[1] = s1
        state[2] = s2
        state[3] = s3
        return result

    def rng_uniform(state):
        return (rng_u64(state) >> 11) * _DOUBLE_UNIT

    def rng_normal(state):
        u1 = 1.0 - rng_uniform(state)
        u2 = rng_uniform(state)
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)
