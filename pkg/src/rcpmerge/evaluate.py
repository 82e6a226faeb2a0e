"""Output-quality measurements: perplexity, Distinct-N, generation length.

Perplexity is the natural exponent of the token-weighted mean
negative log-likelihood across a corpus.  Distinct-N is the unique-n-gram
fraction of a set of token sequences (byte-level here, matching the
tokenizer).  Generation length measures greedy continuations, stopping at
an optional stop token.  All metrics are deterministic given their inputs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .model import CalibrationSet, ModelConfig, generate, token_nlls
from .tensor_store import TensorMap


def perplexity(
    params: TensorMap, corpus: CalibrationSet, cfg: ModelConfig | None = None
) -> tuple[float, float]:
    """Token-weighted (mean_nll, ppl = exp(mean_nll)) over the corpus."""
    if corpus.n < 1:
        raise ValidationError("corpus is empty")
    total = 0.0
    count = 0
    for sample in corpus.samples:
        nll = token_nlls(params, sample, cfg)
        total += float(np.sum(nll))
        count += nll.size
    mean_nll = total / count
    return mean_nll, math.exp(mean_nll)


def distinct_n(texts: Sequence[Sequence[int]], n: int) -> float:
    """Unique n-grams divided by total n-gram count across all texts.

    Texts shorter than n contribute no n-grams; when nothing contributes,
    the metric is 0.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    seen: set[tuple[int, ...]] = set()
    total = 0
    for text in texts:
        toks = [int(t) for t in text]
        for i in range(len(toks) - n + 1):
            seen.add(tuple(toks[i : i + n]))
            total += 1
    return len(seen) / total if total else 0.0


def _continuation(params, prompt, max_new, stop_token, cfg):
    full = generate(params, prompt, max_new, cfg)
    cont = full[len(prompt):]
    if stop_token is not None:
        hits = np.flatnonzero(cont == stop_token)
        if hits.size:
            cont = cont[: hits[0] + 1]  # the stop token counts as generated
    return cont


def generation_length(
    params: TensorMap,
    prompts: Sequence[Sequence[int]],
    max_new: int,
    stop_token: int | None = None,
    cfg: ModelConfig | None = None,
) -> float:
    """Mean number of greedily generated tokens per prompt."""
    if not prompts:
        raise ValidationError("prompt list is empty")
    lengths = [len(_continuation(params, p, max_new, stop_token, cfg)) for p in prompts]
    return float(np.mean(lengths))


@dataclass
class CorpusMetrics:
    corpus: str
    mean_nll: float
    perplexity: float
    distinct_n: dict[int, float]
    mean_gen_length: float


@dataclass
class MetricsReport:
    model_id: str
    entries: list[CorpusMetrics] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "model_id": self.model_id,
            "corpora": [
                {
                    "corpus": e.corpus,
                    "mean_nll": e.mean_nll,
                    "perplexity": e.perplexity,
                    "distinct_n": {str(k): v for k, v in sorted(e.distinct_n.items())},
                    "mean_gen_length": e.mean_gen_length,
                }
                for e in self.entries
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_table(self) -> str:
        ns = sorted({n for e in self.entries for n in e.distinct_n})
        headers = ["corpus", "mean_nll", "ppl", *[f"distinct_{n}" for n in ns], "gen_len"]
        rows = [headers]
        for e in self.entries:
            rows.append(
                [
                    e.corpus,
                    f"{e.mean_nll:.6f}",
                    f"{e.perplexity:.4f}",
                    *[f"{e.distinct_n.get(n, 0.0):.4f}" for n in ns],
                    f"{e.mean_gen_length:.2f}",
                ]
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        return "\n".join([f"model {self.model_id}", *lines])

    def to_csv(self) -> str:
        ns = sorted({n for e in self.entries for n in e.distinct_n})
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["model_id", "corpus", "mean_nll", "perplexity", *[f"distinct_{n}" for n in ns],
             "mean_gen_length"]
        )
        for e in self.entries:
            writer.writerow(
                [self.model_id, e.corpus, repr(e.mean_nll), repr(e.perplexity),
                 *[repr(e.distinct_n.get(n, 0.0)) for n in ns], repr(e.mean_gen_length)]
            )
        return buf.getvalue()


def evaluate_model(
    params: TensorMap,
    corpora: dict[str, CalibrationSet],
    model_id: str,
    cfg: ModelConfig | None = None,
    distinct_orders: Sequence[int] = (1, 2, 3),
    prompt_len: int = 8,
    max_new: int = 32,
    stop_token: int | None = None,
) -> MetricsReport:
    """Full report over named corpora.

    Distinct-N and generation length are measured on greedy continuations
    of each sample's first ``prompt_len`` tokens; perplexity on the corpus
    itself.
    """
    report = MetricsReport(model_id)
    for name in sorted(corpora):
        corpus = corpora[name]
        mean_nll, ppl = perplexity(params, corpus, cfg)
        prompts = [s[: max(1, prompt_len)] for s in corpus.samples]
        conts = [_continuation(params, p, max_new, stop_token, cfg) for p in prompts]
        dn = {n: distinct_n(conts, n) for n in distinct_orders}
        gen_len = float(np.mean([len(c) for c in conts]))
        report.entries.append(CorpusMetrics(name, mean_nll, ppl, dn, gen_len))
    return report
