"""Hot element-wise kernels with a numba backend and a pure-numpy fallback.

The streaming statistics (vote counting, squared-gradient accumulation,
preservation penalties) and the keyed per-element dropout draws are the
inner loops that dominate when checkpoints grow large.  Each kernel exists
twice: an ``@njit`` version and a vectorised numpy version.  The active
backend is chosen once, from the ``RCPMERGE_BACKEND`` environment variable
(``numba`` or ``numpy``); when unset, numba is used if it imports.

Both backends are bit-identical: every kernel performs the same IEEE
operations per element in the same order, so switching backends never
changes results (tests/test_kernels.py asserts this).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ValidationError

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_FNV_OFFSET = _U64(0xCBF29CE484222325)
_FNV_PRIME = _U64(0x100000001B3)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _np_accumulate_squares(acc: np.ndarray, g: np.ndarray) -> None:
    acc += g * g


def _np_accumulate_votes(votes: np.ndarray, s: np.ndarray, tau: np.ndarray) -> None:
    votes += (s < tau).astype(np.uint32)


def _np_penalty(fim: np.ndarray, dt: np.ndarray, dr: np.ndarray) -> np.ndarray:
    d = dt - dr
    return (0.5 * fim) * (d * d)


def _np_keyed_uniforms(key: int, n: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (_U64(key) + (np.arange(1, n + 1, dtype=np.uint64) * _GOLDEN))
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        z = z ^ (z >> _U64(31))
    return (z >> _U64(11)).astype(np.float64) * _INV_2_53


# ---------------------------------------------------------------------------
# numba backend (compiled lazily on first use)
# ---------------------------------------------------------------------------


def _build_numba_impls():
    from numba import njit

    @njit(cache=True)
    def nb_accumulate_squares(acc, g):
        for i in range(acc.shape[0]):
            t = g[i] * g[i]
            acc[i] = acc[i] + t

    @njit(cache=True)
    def nb_accumulate_votes(votes, s, tau):
        for i in range(votes.shape[0]):
            if s[i] < tau[i]:
                votes[i] = votes[i] + np.uint32(1)

    @njit(cache=True)
    def nb_penalty(fim, dt, dr):
        out = np.empty_like(fim)
        for i in range(fim.shape[0]):
            d = dt[i] - dr[i]
            out[i] = (0.5 * fim[i]) * (d * d)
        return out

    @njit(cache=True)
    def nb_keyed_uniforms(key, n):
        out = np.empty(n, dtype=np.float64)
        golden = np.uint64(0x9E3779B97F4A7C15)
        mix1 = np.uint64(0xBF58476D1CE4E5B9)
        mix2 = np.uint64(0x94D049BB133111EB)
        for i in range(n):
            z = key + np.uint64(i + 1) * golden
            z = (z ^ (z >> np.uint64(30))) * mix1
            z = (z ^ (z >> np.uint64(27))) * mix2
            z = z ^ (z >> np.uint64(31))
            out[i] = np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)
        return out

    return {
        "accumulate_squares": nb_accumulate_squares,
        "accumulate_votes": nb_accumulate_votes,
        "penalty": nb_penalty,
        "keyed_uniforms": lambda key, n: nb_keyed_uniforms(_U64(key), n),
    }


_NUMPY_IMPLS = {
    "accumulate_squares": _np_accumulate_squares,
    "accumulate_votes": _np_accumulate_votes,
    "penalty": _np_penalty,
    "keyed_uniforms": _np_keyed_uniforms,
}

_active: dict | None = None
_active_name: str | None = None


def _resolve(name: str | None) -> tuple[str, dict]:
    if name in (None, ""):
        try:
            return "numba", _build_numba_impls()
        except ImportError:
            return "numpy", _NUMPY_IMPLS
    if name == "numpy":
        return "numpy", _NUMPY_IMPLS
    if name == "numba":
        return "numba", _build_numba_impls()
    raise ValidationError(f"unknown backend {name!r}: expected 'numba' or 'numpy'")


def set_backend(name: str | None) -> None:
    """Force the kernel backend; ``None`` re-reads RCPMERGE_BACKEND."""
    global _active, _active_name
    if name is None:
        name = os.environ.get("RCPMERGE_BACKEND") or None
    _active_name, _active = _resolve(name)


def backend_name() -> str:
    if _active is None:
        set_backend(None)
    assert _active_name is not None
    return _active_name


def _impl(op: str):
    if _active is None:
        set_backend(None)
    assert _active is not None
    return _active[op]


# ---------------------------------------------------------------------------
# public kernel API (1-D contiguous float64 views unless noted)
# ---------------------------------------------------------------------------


def accumulate_squares(acc: np.ndarray, g: np.ndarray) -> None:
    """In-place acc[i] += g[i]**2."""
    _impl("accumulate_squares")(acc, g)


def accumulate_votes(votes: np.ndarray, s: np.ndarray, tau: np.ndarray) -> None:
    """In-place votes[i] += 1 where s[i] < tau[i] (votes is uint32)."""
    _impl("accumulate_votes")(votes, s, tau)


def penalty_values(fim: np.ndarray, theta_t: np.ndarray, theta_r: np.ndarray) -> np.ndarray:
    """0.5 * fim * (theta_t - theta_r)**2, element-wise."""
    return _impl("penalty")(fim, theta_t, theta_r)


def keyed_uniforms(key: int, n: int) -> np.ndarray:
    """n uniforms in [0, 1) from a splitmix64 counter stream under ``key``.

    Draw i depends only on (key, i), so results are independent of
    iteration order and of any parallel tensor scheduling.
    """
    return _impl("keyed_uniforms")(key, n)


def name_key(seed: int, name: str) -> int:
    """64-bit stream key for (seed, tensor name): FNV-1a of the name mixed
    with the seed through one splitmix64 round."""
    h = _FNV_OFFSET
    with np.errstate(over="ignore"):
        for b in name.encode("utf-8"):
            h = (h ^ _U64(b)) * _FNV_PRIME
        z = (h ^ _U64(seed)) + _GOLDEN
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        z = z ^ (z >> _U64(31))
    return int(z)
