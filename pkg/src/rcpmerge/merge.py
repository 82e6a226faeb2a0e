"""Checkpoint merging: the reasoning-preserving filtered merge plus the
magnitude-based baselines (linear mean, task arithmetic, TIES, DARE).

All merges are element-wise per tensor with float64 accumulation, and
preserve the name set, shapes, and storage dtype of the base weights.
DARE's randomness is a counter-based generator keyed by (seed, tensor
name, flat index), so drop patterns are reproducible and independent of
iteration order or parallelism.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ValidationError
from .tensor_store import TensorMap, combine

logger = logging.getLogger(__name__)

METHODS = ("rcp", "linear", "task_arithmetic", "ties", "dare_linear", "dare_ties")

# baseline scale 0.3, drop rate 0.9, reasoning-preserving coefficient 0.3
# (0.7 recommended for small models)
DEFAULT_LAMBDA = 0.3
DEFAULT_DROP_RATE = 0.9
DEFAULT_LAMBDA_R = 0.3
SMALL_MODEL_LAMBDA_R = 0.7


@dataclass
class DomainSpec:
    path: str
    lambda_t: float = 1.0
    mask_path: str | None = None


@dataclass
class MergeRecipe:
    """Declarative description of one merge job (JSON document)."""

    method: str
    base_path: str | None = None
    reasoning_path: str | None = None
    domains: list[DomainSpec] = field(default_factory=list)
    lambda_r: float = DEFAULT_LAMBDA_R
    lam: float = DEFAULT_LAMBDA
    trim_keep: float | None = None
    drop_rate: float = DEFAULT_DROP_RATE
    ties_reduce: str = "mean"
    seed: int = 0
    deterministic: bool = True

    def validate(self) -> "MergeRecipe":
        if self.method not in METHODS:
            raise ValidationError(f"unknown merge method {self.method!r}")
        if self.method != "linear" and self.base_path is None:
            raise ValidationError(f"method {self.method!r} requires base_path")
        if self.method in ("rcp", "linear") and self.reasoning_path is None:
            raise ValidationError(f"method {self.method!r} requires reasoning_path")
        if not self.domains:
            raise ValidationError("at least one domain model is required")
        if self.method == "rcp":
            if not (np.isfinite(self.lambda_r) and self.lambda_r >= 0):
                raise ValidationError("lambda_r must be finite and >= 0")
            for d in self.domains:
                if not np.isfinite(d.lambda_t):
                    raise ValidationError("lambda_t must be finite")
        if self.method in ("task_arithmetic", "ties", "dare_linear", "dare_ties"):
            if not np.isfinite(self.lam):
                raise ValidationError("lambda must be finite")
        if self.method in ("ties", "dare_ties"):
            if self.trim_keep is None or not 0 < self.trim_keep <= 1:
                raise ValidationError("trim_keep must lie in (0, 1]")
            if self.ties_reduce not in ("mean", "sum"):
                raise ValidationError("ties_reduce must be 'mean' or 'sum'")
        if self.method in ("dare_linear", "dare_ties"):
            if not 0 <= self.drop_rate < 1:
                raise ValidationError("drop rate r must lie in [0, 1)")
        return self

    @staticmethod
    def from_json(doc: str | dict) -> "MergeRecipe":
        if isinstance(doc, str):
            doc = json.loads(Path(doc).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValidationError("merge recipe must be a JSON object")
        known = {
            "method", "base_path", "reasoning_path", "domains", "lambda_r", "lambda",
            "trim_keep", "drop_rate", "ties_reduce", "seed", "deterministic",
        }
        extra = sorted(set(doc) - known)
        if extra:
            raise ValidationError(f"unknown recipe fields: {extra}")
        if "method" not in doc:
            raise ValidationError("recipe is missing 'method'")
        domains = [
            DomainSpec(d["path"], float(d.get("lambda_t", 1.0)), d.get("mask_path"))
            for d in doc.get("domains", [])
        ]
        return MergeRecipe(
            method=doc["method"],
            base_path=doc.get("base_path"),
            reasoning_path=doc.get("reasoning_path"),
            domains=domains,
            lambda_r=float(doc.get("lambda_r", DEFAULT_LAMBDA_R)),
            lam=float(doc.get("lambda", DEFAULT_LAMBDA)),
            trim_keep=None if doc.get("trim_keep") is None else float(doc["trim_keep"]),
            drop_rate=float(doc.get("drop_rate", DEFAULT_DROP_RATE)),
            ties_reduce=doc.get("ties_reduce", "mean"),
            seed=int(doc.get("seed", 0)),
            deterministic=bool(doc.get("deterministic", True)),
        ).validate()


def _validate_layouts(maps: Sequence[TensorMap], what: str) -> None:
    ref = maps[0]
    for m in maps[1:]:
        if m.names != ref.names:
            only_ref = sorted(set(ref.names) - set(m.names))
            only_m = sorted(set(m.names) - set(ref.names))
            raise ValidationError(
                f"{what}: name sets differ (unmatched: {only_ref + only_m})"
            )
        for n in ref.names:
            if m[n].shape != ref[n].shape:
                raise ValidationError(f"{what}: shape mismatch for {n!r}")
            if m[n].dtype != ref[n].dtype:
                raise ValidationError(f"{what}: dtype mismatch for {n!r}")


def _carry_model_metadata(src: TensorMap) -> dict[str, str]:
    return {k: v for k, v in src.metadata.items() if k.startswith("model.")}


def rcp_merge(
    theta_pre: TensorMap,
    theta_r: TensorMap,
    domains: Sequence[tuple[TensorMap, TensorMap, float]],
) -> TensorMap:
    """theta_pre + (theta_r - theta_pre) + sum_t lambda_t * (mask_t * delta_t).

    The reasoning vector enters unmasked and unscaled; each domain delta is
    gated by its binary mask and scaled by lambda_t.  With all masks zero
    the output is exactly the reasoning weights.
    """
    deltas = [d for d, _, _ in domains]
    masks = [m for _, m, _ in domains]
    _validate_layouts([theta_pre, theta_r, *deltas, *masks], "rcp_merge")
    for m in masks:
        for n in m.names:
            vals = m[n]
            if not np.all((vals == 0) | (vals == 1)):
                raise ValidationError(f"non-binary mask values in tensor {n!r}")

    if len(domains) > 1:
        conflicts = 0
        for n in theta_pre.names:
            gated = [m[n].astype(bool) * d[n].astype(np.float64) for d, m, _ in domains]
            signs = np.stack([np.sign(g) for g in gated])
            pos = (signs > 0).any(axis=0)
            neg = (signs < 0).any(axis=0)
            conflicts += int(np.count_nonzero(pos & neg))
        logger.info("rcp_merge: %d coordinates with cross-domain sign conflicts", conflicts)

    out = {}
    for n in theta_pre.names:
        acc = theta_r[n].astype(np.float64, copy=False).copy()
        for d, m, lam in domains:
            acc += float(lam) * (m[n].astype(np.float64) * d[n].astype(np.float64))
        out[n] = acc.astype(theta_pre[n].dtype)
    return TensorMap(out, _carry_model_metadata(theta_pre))


def linear_merge(models: Sequence[TensorMap]) -> TensorMap:
    """Unweighted element-wise mean of two or more models."""
    if len(models) < 2:
        raise ValidationError("need >= 2 models")
    _validate_layouts(models, "linear_merge")
    ref = models[0]
    out = {}
    for n in ref.names:
        acc = np.zeros(ref[n].shape, dtype=np.float64)
        for m in models:
            acc += m[n].astype(np.float64, copy=False)
        out[n] = (acc / len(models)).astype(ref[n].dtype)
    return TensorMap(out, _carry_model_metadata(ref))


def task_arithmetic(theta_pre: TensorMap, deltas: Sequence[TensorMap], lam: float) -> TensorMap:
    """theta_pre + lam * sum of task vectors."""
    _validate_layouts([theta_pre, *deltas], "task_arithmetic")
    out = {}
    for n in theta_pre.names:
        acc = np.zeros(theta_pre[n].shape, dtype=np.float64)
        for d in deltas:
            acc += d[n].astype(np.float64, copy=False)
        out[n] = (theta_pre[n].astype(np.float64, copy=False) + float(lam) * acc).astype(
            theta_pre[n].dtype
        )
    return TensorMap(out, _carry_model_metadata(theta_pre))


def trim_delta(delta: np.ndarray, trim_keep: float) -> np.ndarray:
    """Zero all but the top ``trim_keep`` fraction by magnitude (per tensor).

    Keeps k = ceil(trim_keep * n) elements; ties at the cutoff are broken
    in favour of the lower flat index.
    """
    if not 0 < trim_keep <= 1:
        raise ValidationError("trim_keep must lie in (0, 1]")
    flat = delta.astype(np.float64, copy=False).ravel()
    n = flat.size
    if n == 0:
        return np.zeros_like(delta, dtype=np.float64)
    k = min(n, math.ceil(trim_keep * n - 1e-12))
    order = np.argsort(-np.abs(flat), kind="stable")
    out = np.zeros(n, dtype=np.float64)
    keep = order[:k]
    out[keep] = flat[keep]
    return out.reshape(delta.shape)


def ties_merge(
    theta_pre: TensorMap,
    deltas: Sequence[TensorMap],
    trim_keep: float,
    lam: float,
    reduce: str = "mean",
) -> TensorMap:
    """Trim each delta to its top-magnitude fraction, elect a per-coordinate
    sign from the sum of trimmed deltas, then reduce the sign-matching
    trimmed values (mean by default, sum optionally)."""
    if reduce not in ("mean", "sum"):
        raise ValidationError("reduce must be 'mean' or 'sum'")
    _validate_layouts([theta_pre, *deltas], "ties_merge")
    out = {}
    for n in theta_pre.names:
        trimmed = [trim_delta(d[n], trim_keep) for d in deltas]
        total = np.zeros(theta_pre[n].shape, dtype=np.float64)
        for t in trimmed:
            total += t
        elected = np.sign(total)
        matched_sum = np.zeros_like(total)
        matched_count = np.zeros_like(total)
        for t in trimmed:
            match = (np.sign(t) == elected) & (elected != 0)
            matched_sum += np.where(match, t, 0.0)
            matched_count += match
        if reduce == "mean":
            merged = np.divide(
                matched_sum, matched_count, out=np.zeros_like(matched_sum),
                where=matched_count > 0,
            )
        else:
            merged = matched_sum
        out[n] = (theta_pre[n].astype(np.float64, copy=False) + float(lam) * merged).astype(
            theta_pre[n].dtype
        )
    return TensorMap(out, _carry_model_metadata(theta_pre))


def dare(delta: TensorMap, r: float, seed: int) -> TensorMap:
    """Drop each element independently with probability ``r`` and rescale
    survivors by 1/(1-r); unbiased in expectation."""
    if not 0 <= r < 1:
        raise ValidationError("drop rate r must lie in [0, 1)")
    out = {}
    for n, arr in delta.items():
        u = kernels.keyed_uniforms(kernels.name_key(seed, n), arr.size)
        kept = (u >= r).reshape(arr.shape)
        out[n] = np.where(kept, arr.astype(np.float64, copy=False) / (1.0 - r), 0.0).astype(
            arr.dtype
        )
    return TensorMap(out, delta.metadata)


def run_recipe(
    recipe: MergeRecipe,
    base: TensorMap | None,
    reasoning: TensorMap | None,
    domain_models: Sequence[TensorMap],
    domain_masks: Sequence[TensorMap] | None = None,
) -> TensorMap:
    """Execute a validated recipe against loaded tensor maps.

    For baselines the reasoning model participates as one more task vector
    over the base; for the linear mean the model list is the reasoning
    model plus every domain model.
    """
    recipe.validate()
    if recipe.method == "linear":
        assert reasoning is not None
        return linear_merge([reasoning, *domain_models])

    assert base is not None
    if recipe.method == "rcp":
        assert reasoning is not None
        if domain_masks is None or len(domain_masks) != len(domain_models):
            raise ValidationError("rcp merge requires one mask per domain model")
        triples = [
            (combine(dm, base, "sub"), mask, spec.lambda_t)
            for dm, mask, spec in zip(domain_models, domain_masks, recipe.domains)
        ]
        return rcp_merge(base, reasoning, triples)

    sources = list(domain_models) + ([reasoning] if reasoning is not None else [])
    deltas = [combine(m, base, "sub") for m in sources]
    if recipe.method in ("dare_linear", "dare_ties"):
        deltas = [dare(d, recipe.drop_rate, recipe.seed + i) for i, d in enumerate(deltas)]
    if recipe.method in ("task_arithmetic", "dare_linear"):
        return task_arithmetic(base, deltas, recipe.lam)
    assert recipe.trim_keep is not None
    return ties_merge(base, deltas, recipe.trim_keep, recipe.lam, recipe.ties_reduce)
