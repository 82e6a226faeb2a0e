"""Byte-level decoder-only transformer with hand-written backward pass.

The architecture is deliberately small and fully pinned down (see
docs/architecture.md for the exact equations): pre-norm blocks with RMS
normalisation, causal multi-head attention, a two-layer MLP with the tanh
GELU approximation, learned positional embeddings, and an untied unembedding.
All math runs at float64 regardless of the storage dtype of the weights, so
gradients are reproducible and finite-difference checks are meaningful.

Every operation here is a pure function of its declared inputs (including
seeds): same inputs, same bits.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .tensor_store import TensorMap

logger = logging.getLogger(__name__)

RMSNORM_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
MLP_WIDTH_FACTOR = 4


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the toy decoder-only transformer."""

    vocab_size: int = 256
    context_len: int = 64
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.vocab_size <= 0 or self.context_len <= 0 or self.d_model <= 0 or self.n_heads <= 0:
            raise ValidationError("vocab_size, context_len, d_model, n_heads must be positive")
        if self.n_layers < 0:
            raise ValidationError("n_layers must be >= 0")
        if self.d_model % self.n_heads != 0:
            raise ValidationError("n_heads must divide d_model")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in an unsigned 64-bit int")
        return self

    def to_metadata(self) -> dict[str, str]:
        return {f"model.{k}": str(v) for k, v in vars(self).items()}

    @staticmethod
    def from_metadata(metadata: dict[str, str]) -> "ModelConfig":
        try:
            return ModelConfig(
                **{k: int(metadata[f"model.{k}"]) for k in
                   ("vocab_size", "context_len", "d_model", "n_heads", "n_layers", "seed")}
            ).validate()
        except KeyError as e:
            raise ValidationError(f"checkpoint metadata is missing model key {e}") from e


@dataclass
class CalibrationSet:
    """Ordered token sequences used only to compute gradients/statistics."""

    samples: list[np.ndarray]
    role: str = "domain"

    def __post_init__(self) -> None:
        self.samples = [np.asarray(s, dtype=np.int64) for s in self.samples]

    @property
    def n(self) -> int:
        return len(self.samples)

    def validate(self, cfg: ModelConfig) -> "CalibrationSet":
        if not self.samples:
            raise ValidationError(f"calibration set ({self.role}) is empty")
        for i, s in enumerate(self.samples):
            if s.ndim != 1 or len(s) < 2:
                raise ValidationError(f"sample {i} must be a sequence of >= 2 tokens")
            if len(s) > cfg.context_len:
                raise ValidationError(f"sample {i} exceeds context_len {cfg.context_len}")
            if s.min() < 0 or s.max() >= cfg.vocab_size:
                raise ValidationError(f"sample {i} has token ids outside [0, {cfg.vocab_size})")
        return self


def load_corpus(path: str | Path, cfg: ModelConfig, role: str = "domain") -> CalibrationSet:
    """Read a corpus file: UTF-8 text, one sample per line.

    Files ending in ``.jsonl`` are parsed as JSON lines with a single
    ``"text"`` field.  Samples are byte-level tokens truncated to
    ``context_len`` bytes; lines shorter than 2 bytes are dropped.
    """
    path = Path(path)
    samples = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if path.suffix == ".jsonl":
            if not line.strip():
                continue
            line = json.loads(line)["text"]
        raw = line.encode("utf-8")[: cfg.context_len]
        if len(raw) < 2:
            continue
        samples.append(np.frombuffer(raw, dtype=np.uint8).astype(np.int64))
    if not samples:
        raise ValidationError(f"corpus {str(path)!r} ({role}) contains no usable samples")
    return CalibrationSet(samples, role).validate(cfg)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """The stable parameter naming scheme and per-tensor shapes."""
    d, f = cfg.d_model, MLP_WIDTH_FACTOR * cfg.d_model
    shapes: dict[str, tuple[int, ...]] = {
        "embed.tok": (cfg.vocab_size, d),
        "embed.pos": (cfg.context_len, d),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        shapes[f"{p}.attn_norm.g"] = (d,)
        shapes[f"{p}.attn.wq"] = (d, d)
        shapes[f"{p}.attn.wk"] = (d, d)
        shapes[f"{p}.attn.wv"] = (d, d)
        shapes[f"{p}.attn.wo"] = (d, d)
        shapes[f"{p}.mlp_norm.g"] = (d,)
        shapes[f"{p}.mlp.w1"] = (d, f)
        shapes[f"{p}.mlp.w2"] = (f, d)
    shapes["final_norm.g"] = (d,)
    shapes["unembed.w"] = (d, cfg.vocab_size)
    return shapes


def init_model(cfg: ModelConfig) -> TensorMap:
    """Seeded initial weights: matrices ~ N(0, 1/sqrt(d_model)), gains = 1.

    Tensors are drawn in lexicographic name order from a PCG64 stream, so
    the result is a deterministic function of (cfg, seed).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    std = 1.0 / math.sqrt(cfg.d_model)
    out = {}
    for name, shape in sorted(param_shapes(cfg).items()):
        if name.endswith("norm.g"):
            out[name] = np.ones(shape, dtype=np.float32)
        else:
            out[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
    return TensorMap(out, cfg.to_metadata())


def _resolve_cfg(params: TensorMap, cfg: ModelConfig | None) -> ModelConfig:
    if cfg is None:
        cfg = ModelConfig.from_metadata(params.metadata)
    expected = param_shapes(cfg)
    if set(params.names) != set(expected):
        missing = sorted(set(expected) - set(params.names))
        extra = sorted(set(params.names) - set(expected))
        raise ValidationError(f"parameter names do not match scheme: missing={missing}, extra={extra}")
    for n, shape in expected.items():
        if params[n].shape != shape:
            raise ValidationError(f"parameter {n!r} has shape {params[n].shape}, expected {shape}")
    return cfg


def _as_f64(params: TensorMap) -> dict[str, np.ndarray]:
    return {n: a.astype(np.float64, copy=False) for n, a in params.items()}


def _check_sample(cfg: ModelConfig, sample: Sequence[int]) -> np.ndarray:
    t = np.asarray(sample, dtype=np.int64)
    if t.ndim != 1 or len(t) < 2:
        raise ValidationError("sample must contain at least 2 tokens")
    if len(t) > cfg.context_len:
        raise ValidationError(f"sequence of length {len(t)} exceeds context_len {cfg.context_len}")
    if t.min() < 0 or t.max() >= cfg.vocab_size:
        raise ValidationError("token id out of range")
    return t


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _rmsnorm_fwd(x: np.ndarray, g: np.ndarray):
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMSNORM_EPS)
    return x * inv * g, inv


def _rmsnorm_bwd(dy: np.ndarray, x: np.ndarray, g: np.ndarray, inv: np.ndarray):
    w = dy * g
    dg = np.sum(dy * x * inv, axis=0)
    dx = w * inv - x * inv**3 * np.mean(w * x, axis=-1, keepdims=True)
    return dx, dg


def _gelu_fwd(u: np.ndarray):
    t = np.tanh(_GELU_C * (u + _GELU_A * u**3))
    return 0.5 * u * (1.0 + t), t


def _gelu_bwd(du_out: np.ndarray, u: np.ndarray, t: np.ndarray):
    dt = _GELU_C * (1.0 + 3.0 * _GELU_A * u * u)
    return du_out * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dt)


def _split_heads(x: np.ndarray, h: int) -> np.ndarray:
    length, d = x.shape
    return x.reshape(length, h, d // h).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, length, dh = x.shape
    return x.transpose(1, 0, 2).reshape(length, h * dh)


def _forward(cfg: ModelConfig, p: dict[str, np.ndarray], tokens: np.ndarray):
    """Run the network; returns (logits, cache) with everything backward needs."""
    length = len(tokens)
    dh = cfg.d_model // cfg.n_heads
    x = p["embed.tok"][tokens] + p["embed.pos"][:length]
    causal = np.tril(np.ones((length, length), dtype=bool))
    layers = []
    for i in range(cfg.n_layers):
        pre = f"layers.{i}"
        a_in, a_inv = _rmsnorm_fwd(x, p[f"{pre}.attn_norm.g"])
        q = _split_heads(a_in @ p[f"{pre}.attn.wq"], cfg.n_heads)
        k = _split_heads(a_in @ p[f"{pre}.attn.wk"], cfg.n_heads)
        v = _split_heads(a_in @ p[f"{pre}.attn.wv"], cfg.n_heads)
        scores = np.where(causal, q @ k.transpose(0, 2, 1) / math.sqrt(dh), -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        att = e / e.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(att @ v)
        x_mid = x + ctx @ p[f"{pre}.attn.wo"]
        m_in, m_inv = _rmsnorm_fwd(x_mid, p[f"{pre}.mlp_norm.g"])
        u = m_in @ p[f"{pre}.mlp.w1"]
        act, t = _gelu_fwd(u)
        x_next = x_mid + act @ p[f"{pre}.mlp.w2"]
        layers.append((x, a_in, a_inv, q, k, v, att, ctx, x_mid, m_in, m_inv, u, act, t))
        x = x_next
    y, f_inv = _rmsnorm_fwd(x, p["final_norm.g"])
    logits = y @ p["unembed.w"]
    return logits, (tokens, layers, x, y, f_inv)


def _nll_rows(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    zmax = logits.max(axis=-1, keepdims=True)
    lse = (zmax + np.log(np.exp(logits - zmax).sum(axis=-1, keepdims=True)))[:, 0]
    return lse - logits[np.arange(len(targets)), targets]


def token_nlls(params: TensorMap, sample: Sequence[int], cfg: ModelConfig | None = None) -> np.ndarray:
    """Per-position next-token negative log-likelihoods (length len-1)."""
    cfg = _resolve_cfg(params, cfg)
    tokens = _check_sample(cfg, sample)
    logits, _ = _forward(cfg, _as_f64(params), tokens)
    return _nll_rows(logits[:-1], tokens[1:])


def forward_loss(params: TensorMap, sample: Sequence[int], cfg: ModelConfig | None = None) -> float:
    """Mean next-token negative log-likelihood over positions 1..len-1."""
    return float(np.mean(token_nlls(params, sample, cfg)))


def _backward(cfg: ModelConfig, p: dict[str, np.ndarray], tokens: np.ndarray):
    logits, (tokens, layers, x_last, y, f_inv) = _forward(cfg, p, tokens)
    length = len(tokens)
    targets = tokens[1:]
    n_pred = length - 1

    nll = _nll_rows(logits[:-1], targets)
    loss = float(np.mean(nll))

    zmax = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - zmax)
    probs = e / e.sum(axis=-1, keepdims=True)
    dlogits = np.zeros_like(logits)
    dlogits[:-1] = probs[:-1] / n_pred
    dlogits[np.arange(n_pred), targets] -= 1.0 / n_pred

    g: dict[str, np.ndarray] = {n: np.zeros_like(a) for n, a in p.items()}
    g["unembed.w"] = y.T @ dlogits
    dy = dlogits @ p["unembed.w"].T
    dx, g["final_norm.g"] = _rmsnorm_bwd(dy, x_last, p["final_norm.g"], f_inv)

    dh = cfg.d_model // cfg.n_heads
    for i in reversed(range(cfg.n_layers)):
        pre = f"layers.{i}"
        x, a_in, a_inv, q, k, v, att, ctx, x_mid, m_in, m_inv, u, act, t = layers[i]

        # MLP branch
        dmlp_out = dx
        g[f"{pre}.mlp.w2"] = act.T @ dmlp_out
        dact = dmlp_out @ p[f"{pre}.mlp.w2"].T
        du = _gelu_bwd(dact, u, t)
        g[f"{pre}.mlp.w1"] = m_in.T @ du
        dm_in = du @ p[f"{pre}.mlp.w1"].T
        dx_mid, g[f"{pre}.mlp_norm.g"] = _rmsnorm_bwd(dm_in, x_mid, p[f"{pre}.mlp_norm.g"], m_inv)
        dx_mid = dx_mid + dx

        # attention branch
        dattn_out = dx_mid
        g[f"{pre}.attn.wo"] = ctx.T @ dattn_out
        dctx = _split_heads(dattn_out @ p[f"{pre}.attn.wo"].T, cfg.n_heads)
        datt = dctx @ v.transpose(0, 2, 1)
        dv = att.transpose(0, 2, 1) @ dctx
        dscores = att * (datt - np.sum(datt * att, axis=-1, keepdims=True))
        dscores /= math.sqrt(dh)
        dq = dscores @ k
        dk = dscores.transpose(0, 2, 1) @ q
        dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        g[f"{pre}.attn.wq"] = a_in.T @ dq
        g[f"{pre}.attn.wk"] = a_in.T @ dk
        g[f"{pre}.attn.wv"] = a_in.T @ dv
        da_in = dq @ p[f"{pre}.attn.wq"].T + dk @ p[f"{pre}.attn.wk"].T + dv @ p[f"{pre}.attn.wv"].T
        dx_prev, g[f"{pre}.attn_norm.g"] = _rmsnorm_bwd(da_in, x, p[f"{pre}.attn_norm.g"], a_inv)
        dx = dx_prev + dx_mid

    np.add.at(g["embed.tok"], tokens, dx)
    g["embed.pos"][: len(tokens)] += dx
    return loss, g


def backward(params: TensorMap, sample: Sequence[int], cfg: ModelConfig | None = None) -> TensorMap:
    """dL/dtheta for every parameter tensor (float64, same names/shapes)."""
    cfg = _resolve_cfg(params, cfg)
    tokens = _check_sample(cfg, sample)
    _, grads = _backward(cfg, _as_f64(params), tokens)
    return TensorMap(grads, params.metadata)


def train(
    params: TensorMap,
    corpus: CalibrationSet,
    steps: int,
    lr: float,
    order_seed: int = 0,
    cfg: ModelConfig | None = None,
    log_every: int = 1,
) -> TensorMap:
    """Plain SGD over a fixed, seeded sample order; float64 master weights.

    Returns updated weights at the input storage dtype.
    """
    cfg = _resolve_cfg(params, cfg)
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if lr < 0:
        raise ValidationError("lr must be >= 0")
    corpus.validate(cfg)

    rng = np.random.default_rng(order_seed)
    p64 = {n: a.astype(np.float64) for n, a in params.items()}
    order = np.empty(0, dtype=np.int64)
    for step in range(steps):
        pos = step % corpus.n
        if pos == 0:
            order = rng.permutation(corpus.n)
        loss, grads = _backward(cfg, p64, corpus.samples[order[pos]])
        for n in p64:
            p64[n] -= lr * grads[n]
        if log_every and (step % log_every == 0 or step == steps - 1):
            logger.info("train step %d/%d loss %.4f", step + 1, steps, loss)
    out = {n: p64[n].astype(params[n].dtype) for n in p64}
    return TensorMap(out, params.metadata)


def generate(
    params: TensorMap,
    prompt: Sequence[int],
    max_new: int,
    cfg: ModelConfig | None = None,
) -> np.ndarray:
    """Greedy decoding: prompt plus up to ``max_new`` argmax tokens.

    Ties resolve to the lowest token id.  When the sequence outgrows the
    context window, the last ``context_len`` tokens are used as context.
    """
    cfg = _resolve_cfg(params, cfg)
    tokens = np.asarray(prompt, dtype=np.int64)
    if tokens.ndim != 1 or len(tokens) == 0:
        raise ValidationError("prompt must be a non-empty token sequence")
    if len(tokens) > cfg.context_len:
        raise ValidationError(f"prompt exceeds context_len {cfg.context_len}")
    if len(tokens) and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise ValidationError("token id out of range")
    p64 = _as_f64(params)
    for _ in range(max_new):
        window = tokens[-cfg.context_len:]
        logits, _ = _forward(cfg, p64, window)
        tokens = np.append(tokens, int(np.argmax(logits[-1])))
    return tokens
