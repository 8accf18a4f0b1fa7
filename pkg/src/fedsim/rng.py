"""Counter-based splitmix64 generator used for every random draw in fedsim.

Stream definition (portable, so other ports can reproduce it):

* output ``i`` (0-based) of a stream with key ``k`` is
  ``mix(k + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)`` where ``mix`` is the
  splitmix64 finalizer (xor-shift 30, *0xBF58476D1CE4E5B9, xor-shift 27,
  *0x94D049BB133111EB, xor-shift 31).
* uniforms are ``(u >> 11) * 2**-53`` in [0, 1).
* normals come in Box-Muller pairs from consecutive outputs ``a, b``:
  ``u1 = ((a >> 11) + 1) * 2**-53``, ``u2 = (b >> 11) * 2**-53``,
  ``z0 = sqrt(-2 ln u1) cos(2 pi u2)``, ``z1 = sqrt(-2 ln u1) sin(2 pi u2)``.
* sub-stream keys are folded with :func:`derive_seed`.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import _accel

MASK64 = (1 << 64) - 1
_FOLD_INIT = 0x6A09E667F3BCC909


def mix64(z: int) -> int:
    z &= MASK64
    z ^= z >> 30
    z = (z * _accel.MIX1) & MASK64
    z ^= z >> 27
    z = (z * _accel.MIX2) & MASK64
    return z ^ (z >> 31)


def _as_u64(part) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest(), "little")
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & MASK64
    raise TypeError(f"cannot derive a seed from {type(part).__name__}")


def derive_seed(*parts) -> int:
    """Fold integers and strings into one 64-bit key, order-sensitively."""
    h = _FOLD_INIT
    for part in parts:
        h = mix64(((h ^ _as_u64(part)) + _accel.GAMMA) & MASK64)
    return h


class Stream:
    """Sequential view of one keyed splitmix64 stream."""

    def __init__(self, *key_parts):
        self.key = derive_seed(*key_parts) if key_parts else _FOLD_INIT
        self.counter = 0

    def _take(self, n: int) -> int:
        start = self.counter
        self.counter += n
        return start

    def uint64(self, n: int) -> np.ndarray:
        return _accel.splitmix_block(self.key, self._take(n), n)

    def uniform(self, n: int) -> np.ndarray:
        return (self.uint64(n) >> np.uint64(11)).astype(np.float64) * _accel.INV_2_53

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        return _accel.normal_block(self.key, self._take(2 * pairs), pairs)[:n]

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uint64(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), ascending."""
        return np.sort(self.permutation(n)[:k])
