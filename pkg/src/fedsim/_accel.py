"""Hot numeric kernels: splitmix64 streams, Box-Muller normals, pairwise masks.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature. The numba path is used when numba imports and the
``FEDSIM_DISABLE_NUMBA`` environment variable is unset (or ``0``). The
integer kernels are bit-identical across backends; the normal kernel can
differ in the last ulp because the two backends call different libm
implementations of log/cos/sin.
"""

from __future__ import annotations

import math
import os

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
TWO_PI = 2.0 * math.pi
INV_2_53 = 1.0 / 9007199254740992.0

_U64_GAMMA = np.uint64(GAMMA)
_U64_MIX1 = np.uint64(MIX1)
_U64_MIX2 = np.uint64(MIX2)


def _mix_np(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _U64_MIX1
    z = z ^ (z >> np.uint64(27))
    z = z * _U64_MIX2
    return z ^ (z >> np.uint64(31))


def splitmix_block_numpy(key: int, start: int, n: int) -> np.ndarray:
    counters = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix_np(np.uint64(key) + counters * _U64_GAMMA)


def normal_block_numpy(key: int, start: int, n_pairs: int) -> np.ndarray:
    u = splitmix_block_numpy(key, start, 2 * n_pairs)
    u1 = ((u[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * INV_2_53
    u2 = (u[1::2] >> np.uint64(11)).astype(np.float64) * INV_2_53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = TWO_PI * u2
    out = np.empty(2 * n_pairs, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out


def pairwise_mask_numpy(keys: np.ndarray, signs: np.ndarray, n: int) -> np.ndarray:
    acc = np.zeros(n, dtype=np.uint32)
    for key, sign in zip(keys.tolist(), signs.tolist()):
        word = (splitmix_block_numpy(key, 0, n) >> np.uint64(32)).astype(np.uint32)
        if sign > 0:
            acc += word
        else:
            acc -= word
    return acc


try:
    if os.environ.get("FEDSIM_DISABLE_NUMBA", "0") not in ("", "0"):
        raise ImportError("numba disabled by FEDSIM_DISABLE_NUMBA")
    from numba import njit
except ImportError:
    njit = None


if njit is not None:

    @njit(cache=True)
    def _mix_nb(z):
        z = z ^ (z >> np.uint64(30))
        z = z * np.uint64(MIX1)
        z = z ^ (z >> np.uint64(27))
        z = z * np.uint64(MIX2)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def _splitmix_block_nb(key, start, n):
        out = np.empty(n, dtype=np.uint64)
        state = key + np.uint64(start) * np.uint64(GAMMA)
        for i in range(n):
            state = state + np.uint64(GAMMA)
            out[i] = _mix_nb(state)
        return out

    @njit(cache=True)
    def _normal_block_nb(key, start, n_pairs):
        out = np.empty(2 * n_pairs, dtype=np.float64)
        state = key + np.uint64(start) * np.uint64(GAMMA)
        for i in range(n_pairs):
            state = state + np.uint64(GAMMA)
            a = _mix_nb(state)
            state = state + np.uint64(GAMMA)
            b = _mix_nb(state)
            u1 = (np.float64(a >> np.uint64(11)) + 1.0) * INV_2_53
            u2 = np.float64(b >> np.uint64(11)) * INV_2_53
            r = math.sqrt(-2.0 * math.log(u1))
            theta = TWO_PI * u2
            out[2 * i] = r * math.cos(theta)
            out[2 * i + 1] = r * math.sin(theta)
        return out

    @njit(cache=True)
    def _pairwise_mask_nb(keys, signs, n):
        acc = np.zeros(n, dtype=np.uint32)
        for p in range(keys.shape[0]):
            state = keys[p]
            positive = signs[p] > 0
            for i in range(n):
                state = state + np.uint64(GAMMA)
                word = np.uint32(_mix_nb(state) >> np.uint64(32))
                if positive:
                    acc[i] = acc[i] + word
                else:
                    acc[i] = acc[i] - word
        return acc

    def splitmix_block_numba(key: int, start: int, n: int) -> np.ndarray:
        return _splitmix_block_nb(np.uint64(key), np.uint64(start), n)

    def normal_block_numba(key: int, start: int, n_pairs: int) -> np.ndarray:
        return _normal_block_nb(np.uint64(key), np.uint64(start), n_pairs)

    def pairwise_mask_numba(keys: np.ndarray, signs: np.ndarray, n: int) -> np.ndarray:
        return _pairwise_mask_nb(
            np.ascontiguousarray(keys, dtype=np.uint64),
            np.ascontiguousarray(signs, dtype=np.int8),
            n,
        )

    BACKEND = "numba"
    splitmix_block = splitmix_block_numba
    normal_block = normal_block_numba
    pairwise_mask = pairwise_mask_numba
else:
    splitmix_block_numba = normal_block_numba = pairwise_mask_numba = None
    BACKEND = "numpy"
    splitmix_block = splitmix_block_numpy
    normal_block = normal_block_numpy
    pairwise_mask = pairwise_mask_numpy


def available_backends() -> dict:
    backends = {
        "numpy": (splitmix_block_numpy, normal_block_numpy, pairwise_mask_numpy)
    }
    if splitmix_block_numba is not None:
        backends["numba"] = (splitmix_block_numba, normal_block_numba, pairwise_mask_numba)
    return backends
