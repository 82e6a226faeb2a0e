"""Per-parameter statistics driving the reasoning-preserving merge.

Three objects are produced from per-sample gradients:

* the diagonal Fisher information of the reasoning model (mean squared
  gradient over the reasoning calibration set),
* the preservation penalty ``p = 0.5 * F * (theta_t - theta_r)**2``, which
  scores how much adopting a domain value would disturb weights the
  reasoning model depends on,
* a majority-vote mask over domain calibration samples: a parameter's
  update is accepted only when strictly more samples score its signed
  sensitivity below the penalty threshold than at or above it.

Vote counting streams sample by sample, holding one integer counter per
parameter; the full per-sample score matrix is never materialised (a
brute-force version of it exists only as a test oracle).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import kernels
from .errors import ValidationError
from .model import CalibrationSet
from .tensor_store import TensorMap

GradFn = Callable[[np.ndarray], Mapping[str, np.ndarray]]


def _check_layout(ref: TensorMap, other: Mapping[str, np.ndarray], what: str) -> None:
    names = set(ref.names)
    other_names = set(other.names) if isinstance(other, TensorMap) else set(other.keys())
    if names != other_names:
        raise ValidationError(
            f"{what}: name sets differ (only here={sorted(names - other_names)}, "
            f"only there={sorted(other_names - names)})"
        )
    for n in ref.names:
        if tuple(ref[n].shape) != tuple(other[n].shape):
            raise ValidationError(
                f"{what}: shape mismatch for {n!r}: {ref[n].shape} vs {other[n].shape}"
            )


def _tensor_workers(threads: int):
    if threads <= 1:
        return None
    return ThreadPoolExecutor(max_workers=threads)


@dataclass
class FimDiagonal:
    """Diagonal Fisher approximation: per-element mean squared gradient."""

    values: TensorMap
    n_samples: int


@dataclass
class PenaltyMap:
    """Non-negative per-parameter preservation penalty."""

    values: TensorMap


@dataclass
class VoteCounter:
    """Accept-vote counts accumulated while streaming domain samples."""

    accept_votes: dict[str, np.ndarray]
    total_samples: int

    def mask(self) -> TensorMap:
        """Binary mask: 1 where accept votes strictly outnumber rejects."""
        out = {}
        for n, v in self.accept_votes.items():
            accept = v.astype(np.int64)
            out[n] = (accept > (self.total_samples - accept)).astype(np.float32)
        return TensorMap(out)

    def accepted_fraction(self) -> dict[str, float]:
        m = self.mask()
        return {n: float(m[n].mean()) if m[n].size else 0.0 for n in m.names}


def fim_diagonal(
    model: TensorMap,
    reasoning_set: CalibrationSet,
    grad_fn: GradFn,
    threads: int = 1,
) -> FimDiagonal:
    """Mean squared per-sample gradient, accumulated sequentially at float64.

    ``grad_fn`` must evaluate gradients at the reasoning model's weights on
    each reasoning sample.
    """
    if reasoning_set.n < 1:
        raise ValidationError("reasoning calibration set is empty")
    acc = {n: np.zeros(model[n].shape, dtype=np.float64).ravel() for n in model.names}
    pool = _tensor_workers(threads)
    try:
        for sample in reasoning_set.samples:
            g = grad_fn(sample)
            _check_layout(model, g, "fim_diagonal gradients")

            def fold(n, g=g):
                kernels.accumulate_squares(acc[n], np.ascontiguousarray(g[n], dtype=np.float64).ravel())

            if pool is None:
                for n in model.names:
                    fold(n)
            else:
                list(pool.map(fold, model.names))
    finally:
        if pool is not None:
            pool.shutdown()
    n_r = reasoning_set.n
    values = {n: (acc[n] / n_r).reshape(model[n].shape) for n in model.names}
    return FimDiagonal(TensorMap(values), n_r)


def preservation_penalty(fim: FimDiagonal, theta_t: TensorMap, theta_r: TensorMap) -> PenaltyMap:
    """p = 0.5 * F * (theta_t - theta_r)**2 element-wise (F embeds the 1/N mean)."""
    _check_layout(fim.values, theta_t, "preservation_penalty theta_t")
    _check_layout(fim.values, theta_r, "preservation_penalty theta_r")
    out = {}
    for n in fim.values.names:
        p = kernels.penalty_values(
            fim.values[n].astype(np.float64, copy=False).ravel(),
            theta_t[n].astype(np.float64, copy=False).ravel(),
            theta_r[n].astype(np.float64, copy=False).ravel(),
        )
        out[n] = p.reshape(fim.values[n].shape)
    return PenaltyMap(TensorMap(out))


def domain_sensitivity_sample(theta_t: TensorMap, grad: Mapping[str, np.ndarray]) -> TensorMap:
    """Signed first-order sensitivity for one domain sample: s = g * theta.

    Negative values mean the parameter's presence reduces the domain loss.
    """
    _check_layout(theta_t, grad, "domain_sensitivity_sample")
    out = {
        n: theta_t[n].astype(np.float64, copy=False) * np.asarray(grad[n], dtype=np.float64)
        for n in theta_t.names
    }
    return TensorMap(out)


def vote_mask(
    theta_t: TensorMap,
    theta_r: TensorMap,
    penalty: PenaltyMap,
    domain_set: CalibrationSet,
    grad_fn: GradFn,
    lambda_r: float,
    abs_sensitivity: bool = False,
    use_sensitivity: bool = True,
    threads: int = 1,
) -> tuple[VoteCounter, TensorMap]:
    """Stream domain samples, voting each parameter accept/reject.

    A sample votes accept for parameter i when its sensitivity falls below
    the precomputed threshold ``tau_i = -lambda_r * p_i`` (the penalty is
    sample-independent).  The final mask is 1 only where accepts strictly
    outnumber rejects; ties reject.

    ``abs_sensitivity`` switches to magnitude sensitivity (for comparison;
    combined with a non-negative penalty it degenerates to all-reject).
    ``use_sensitivity=False`` drops the sensitivity term entirely, leaving
    penalty-only votes.
    """
    if lambda_r < 0 or not np.isfinite(lambda_r):
        raise ValidationError("lambda_r must be finite and >= 0")
    if domain_set.n < 1:
        raise ValidationError("domain calibration set is empty")
    _check_layout(theta_t, theta_r, "vote_mask theta_r")
    _check_layout(theta_t, penalty.values, "vote_mask penalty")

    tau = {
        n: (-lambda_r * penalty.values[n].astype(np.float64, copy=False)).ravel()
        for n in theta_t.names
    }
    theta64 = {n: theta_t[n].astype(np.float64, copy=False).ravel() for n in theta_t.names}
    votes = {n: np.zeros(theta_t[n].size, dtype=np.uint32) for n in theta_t.names}

    pool = _tensor_workers(threads)
    try:
        for sample in domain_set.samples:
            g = grad_fn(sample)
            _check_layout(theta_t, g, "vote_mask gradients")

            def fold(n, g=g):
                if use_sensitivity:
                    s = np.asarray(g[n], dtype=np.float64).ravel() * theta64[n]
                    if abs_sensitivity:
                        s = np.abs(s)
                else:
                    s = np.zeros_like(theta64[n])
                kernels.accumulate_votes(votes[n], s, tau[n])

            if pool is None:
                for n in theta_t.names:
                    fold(n)
            else:
                list(pool.map(fold, theta_t.names))
    finally:
        if pool is not None:
            pool.shutdown()

    counter = VoteCounter(
        {n: votes[n].reshape(theta_t[n].shape) for n in theta_t.names}, domain_set.n
    )
    return counter, counter.mask()
