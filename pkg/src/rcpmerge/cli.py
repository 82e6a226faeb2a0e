"""Operator surface: prepare / stats / merge / eval / ablate stages.

Stages communicate through files in the configured output directory, so
the gradient-producing stage can later be swapped for an external dump
without touching the statistics or merge code.  Every stage is idempotent:
rerunning with unchanged inputs rewrites byte-identical outputs, and every
output's metadata embeds the content hashes of the inputs that produced it.

Exit codes: 0 success, 2 precondition/validation failure, 3 I/O failure,
4 numeric failure (non-finite values encountered).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, NonFiniteError, ValidationError
from .evaluate import evaluate_model
from .merge import (
    DEFAULT_LAMBDA_R,
    SMALL_MODEL_LAMBDA_R,
    DomainSpec,
    MergeRecipe,
    run_recipe,
)
from .model import CalibrationSet, ModelConfig, backward, init_model, load_corpus, train
from .stats import fim_diagonal, preservation_penalty, vote_mask
from .tensor_store import TensorMap, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (0.0, 0.1, 0.3, 1.0, 10.0)
DEFAULT_CALIBRATION = 32


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class TrainSpec:
    steps: int = 0
    lr: float = 0.1


@dataclass
class EvalSpec:
    prompt_len: int = 8
    max_new: int = 32
    distinct_n: tuple[int, ...] = (1, 2, 3)
    stop_token: int | None = None


@dataclass
class PipelineConfig:
    """One JSON document describing the whole pipeline."""

    model: ModelConfig
    corpora: dict[str, str]
    training: dict[str, TrainSpec]
    recipe: dict
    output_dir: str
    n_domain_calibration: int = DEFAULT_CALIBRATION
    n_reasoning_calibration: int = DEFAULT_CALIBRATION
    eval_spec: EvalSpec = field(default_factory=EvalSpec)

    @staticmethod
    def from_json(path: str | Path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise CheckpointError(f"cannot read config {str(path)!r}: {e}") from e
        except json.JSONDecodeError as e:
            raise ValidationError(f"config {str(path)!r} is not valid JSON: {e}") from e
        known = {"model", "corpora", "training", "recipe", "output_dir", "calibration", "eval"}
        extra = sorted(set(doc) - known)
        if extra:
            raise ValidationError(f"unknown config keys: {extra}")
        try:
            model = ModelConfig(**doc.get("model", {})).validate()
            training = {k: TrainSpec(**v) for k, v in doc.get("training", {}).items()}
        except TypeError as e:
            raise ValidationError(f"config {str(path)!r}: {e}") from e
        corpora = doc.get("corpora", {})
        calib = doc.get("calibration", {})
        ev = doc.get("eval", {})
        eval_spec = EvalSpec(
            prompt_len=int(ev.get("prompt_len", 8)),
            max_new=int(ev.get("max_new", 32)),
            distinct_n=tuple(ev.get("distinct_n", (1, 2, 3))),
            stop_token=ev.get("stop_token"),
        )
        return PipelineConfig(
            model=model,
            corpora=dict(corpora),
            training=training,
            recipe=doc.get("recipe", {}),
            output_dir=doc.get("output_dir", "out"),
            n_domain_calibration=int(calib.get("n_domain", DEFAULT_CALIBRATION)),
            n_reasoning_calibration=int(calib.get("n_reasoning", DEFAULT_CALIBRATION)),
            eval_spec=eval_spec,
        )

    def validate(self) -> "PipelineConfig":
        for role, path in self.corpora.items():
            ok = role in ("base", "reasoning") or role.startswith("domain") or role.startswith("eval")
            if not ok:
                raise ValidationError(f"unknown corpus role {role!r}")
            if not Path(path).exists():
                raise ValidationError(f"corpus for role {role!r} not found: {path!r}")
        return self

    def domain_roles(self) -> list[str]:
        return sorted(r for r in self.corpora if r.startswith("domain"))

    def effective_json(self) -> str:
        doc = {
            "model": vars(self.model),
            "corpora": self.corpora,
            "training": {k: vars(v) for k, v in self.training.items()},
            "calibration": {
                "n_domain": self.n_domain_calibration,
                "n_reasoning": self.n_reasoning_calibration,
            },
            "recipe": self.recipe,
            "eval": {
                "prompt_len": self.eval_spec.prompt_len,
                "max_new": self.eval_spec.max_new,
                "distinct_n": list(self.eval_spec.distinct_n),
                "stop_token": self.eval_spec.stop_token,
            },
            "output_dir": self.output_dir,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _out(pc: PipelineConfig, name: str) -> Path:
    out = Path(pc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _checkpoint_path(pc: PipelineConfig, role: str) -> Path:
    return _out(pc, f"{role}.ckpt")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CheckpointError(f"missing {what}: {path} (run the upstream stage first)")
    return path


def _order_seed(pc: PipelineConfig, role: str) -> int:
    roles = ["base", "reasoning", *pc.domain_roles()]
    return (pc.model.seed * 1000003 + roles.index(role) + 1) % 2**63


def _calibration(pc: PipelineConfig, role: str, limit: int) -> CalibrationSet:
    if role not in pc.corpora:
        raise ValidationError(f"config has no corpus for role {role!r}")
    corpus = load_corpus(pc.corpora[role], pc.model, role="reasoning" if role == "reasoning" else "domain")
    corpus.samples = corpus.samples[: max(1, limit)]
    return corpus


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def cmd_prepare(pc: PipelineConfig) -> dict[str, str]:
    """Train the toy base/domain/reasoning checkpoints and write a manifest."""
    pc.validate()
    if "reasoning" not in pc.corpora:
        raise ValidationError("config has no corpus for role 'reasoning'")
    if not pc.domain_roles():
        raise ValidationError("config has no corpus for any 'domain_*' role")

    cfg = pc.model
    theta_pre = init_model(cfg)
    base_meta = dict(theta_pre.metadata)
    base_spec = pc.training.get("base", TrainSpec())
    if "base" in pc.corpora and base_spec.steps >= 1:
        corpus = load_corpus(pc.corpora["base"], cfg, role="domain")
        theta_pre = train(theta_pre, corpus, base_spec.steps, base_spec.lr,
                          order_seed=_order_seed(pc, "base"), cfg=cfg)
        base_meta["source.base_corpus"] = file_sha256(pc.corpora["base"])
    base_path = _checkpoint_path(pc, "base")
    save_checkpoint(theta_pre.with_metadata({**base_meta, "role": "base"}), str(base_path))

    written = {"base": str(base_path)}
    base_hash = file_sha256(base_path)
    for role in ["reasoning", *pc.domain_roles()]:
        spec = pc.training.get(role, TrainSpec(steps=200, lr=0.1))
        corpus = load_corpus(pc.corpora[role], cfg, role="reasoning" if role == "reasoning" else "domain")
        if spec.steps < 1:
            raise ValidationError(f"training steps for role {role!r} must be >= 1")
        model = train(theta_pre, corpus, spec.steps, spec.lr,
                      order_seed=_order_seed(pc, role), cfg=cfg)
        meta = {
            **cfg.to_metadata(),
            "role": role,
            "source.base": base_hash,
            "source.corpus": file_sha256(pc.corpora[role]),
        }
        path = _checkpoint_path(pc, role)
        save_checkpoint(model.with_metadata(meta), str(path))
        written[role] = str(path)

    manifest = {role: {"path": p, "sha256": file_sha256(p)} for role, p in written.items()}
    _out(pc, "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info("prepared %d checkpoints in %s", len(written), pc.output_dir)
    return written


def _effective_lambda_r(pc: PipelineConfig, lambda_r: float | None, preset: str | None) -> float:
    if lambda_r is not None:
        return float(lambda_r)
    if preset == "small-model":
        return SMALL_MODEL_LAMBDA_R
    return float(pc.recipe.get("lambda_r", DEFAULT_LAMBDA_R))


def cmd_stats(
    pc: PipelineConfig,
    lambda_r: float | None = None,
    preset: str | None = None,
    abs_sensitivity: bool = False,
    use_sensitivity: bool = True,
    threads: int = 1,
    allow_nonfinite: bool = False,
) -> dict[str, str]:
    """Compute FIM, penalties, votes, and masks; persist with provenance."""
    pc.validate()
    lam_r = _effective_lambda_r(pc, lambda_r, preset)
    cfg = pc.model

    base_path = _require(_checkpoint_path(pc, "base"), "base checkpoint")
    reasoning_path = _require(_checkpoint_path(pc, "reasoning"), "reasoning checkpoint")
    theta_r = load_checkpoint(str(reasoning_path), allow_nonfinite=allow_nonfinite)

    reasoning_set = _calibration(pc, "reasoning", pc.n_reasoning_calibration)
    fim = fim_diagonal(theta_r, reasoning_set, lambda s: backward(theta_r, s, cfg), threads=threads)
    fim_path = _out(pc, "fim_reasoning.ckpt")
    fim_meta = {
        "role": "fim_reasoning",
        "n_samples": str(fim.n_samples),
        "lambda_r": repr(lam_r),
        "source.reasoning": file_sha256(reasoning_path),
        "source.reasoning_corpus": file_sha256(pc.corpora["reasoning"]),
    }
    save_checkpoint(fim.values.with_metadata(fim_meta), str(fim_path))

    written = {"fim_reasoning": str(fim_path)}
    for role in pc.domain_roles():
        domain_path = _require(_checkpoint_path(pc, role), f"{role} checkpoint")
        theta_t = load_checkpoint(str(domain_path), allow_nonfinite=allow_nonfinite)
        penalty = preservation_penalty(fim, theta_t, theta_r)
        domain_set = _calibration(pc, role, pc.n_domain_calibration)
        counter, mask = vote_mask(
            theta_t, theta_r, penalty, domain_set,
            lambda s: backward(theta_t, s, cfg), lam_r,
            abs_sensitivity=abs_sensitivity, use_sensitivity=use_sensitivity, threads=threads,
        )
        common = {
            "lambda_r": repr(lam_r),
            "n_samples": str(domain_set.n),
            "abs_sensitivity": str(abs_sensitivity),
            "use_sensitivity": str(use_sensitivity),
            "source.base": file_sha256(base_path),
            "source.reasoning": file_sha256(reasoning_path),
            "source.domain": file_sha256(domain_path),
            "source.domain_corpus": file_sha256(pc.corpora[role]),
        }
        artifacts = {
            f"penalty_{role}": penalty.values.with_metadata({**common, "role": f"penalty_{role}"}),
            f"votes_{role}": TensorMap(
                {n: v.astype(np.float64) for n, v in counter.accept_votes.items()}
            ).with_metadata({**common, "role": f"votes_{role}"}),
            f"mask_{role}": mask.with_metadata({**common, "role": f"mask_{role}"}),
        }
        for name, tmap in artifacts.items():
            path = _out(pc, f"{name}.ckpt")
            save_checkpoint(tmap, str(path))
            written[name] = str(path)

        print(f"accepted-parameter fraction per tensor ({role}, lambda_r={lam_r}):")
        fractions = counter.accepted_fraction()
        for tensor_name in sorted(fractions):
            print(f"  {tensor_name:<24s} {fractions[tensor_name]:.4f}")
        total = sum(int(mask[n].sum()) for n in mask.names)
        size = sum(mask[n].size for n in mask.names)
        print(f"  {'TOTAL':<24s} {total / size:.4f}")
    return written


def _recipe_from_config(pc: PipelineConfig, lambda_r: float | None, preset: str | None) -> MergeRecipe:
    doc = dict(pc.recipe)
    method = doc.get("method", "rcp")
    lam_r = _effective_lambda_r(pc, lambda_r, preset)
    domain_entries = doc.get("domains") or [{"role": r} for r in pc.domain_roles()]
    domains = []
    for entry in domain_entries:
        role = entry.get("role")
        if role is None or role not in pc.corpora:
            raise ValidationError(f"recipe domain role {role!r} is not configured")
        domains.append(
            DomainSpec(
                path=str(_checkpoint_path(pc, role)),
                lambda_t=float(entry.get("lambda_t", 1.0)),
                mask_path=str(_out(pc, f"mask_{role}.ckpt")) if method == "rcp" else None,
            )
        )
    return MergeRecipe(
        method=method,
        base_path=str(_checkpoint_path(pc, "base")),
        reasoning_path=str(_checkpoint_path(pc, "reasoning")),
        domains=domains,
        lambda_r=lam_r,
        lam=float(doc.get("lambda", 0.3)),
        trim_keep=None if doc.get("trim_keep") is None else float(doc["trim_keep"]),
        drop_rate=float(doc.get("drop_rate", 0.9)),
        ties_reduce=doc.get("ties_reduce", "mean"),
        seed=int(doc.get("seed", pc.model.seed)),
        deterministic=bool(doc.get("deterministic", True)),
    ).validate()


def cmd_merge(
    pc: PipelineConfig | None,
    recipe_path: str | None = None,
    out: str | None = None,
    lambda_r: float | None = None,
    preset: str | None = None,
    ties_reduce: str | None = None,
    allow_nonfinite: bool = False,
) -> str:
    """Produce a merged checkpoint from a recipe (config-derived or explicit)."""
    if recipe_path is not None:
        recipe = MergeRecipe.from_json(recipe_path)
        if lambda_r is not None:
            recipe.lambda_r = float(lambda_r)
        out_path = out or "merged.ckpt"
    else:
        if pc is None:
            raise ValidationError("merge needs --config or --recipe")
        pc.validate()
        recipe = _recipe_from_config(pc, lambda_r, preset)
        out_path = out or str(_out(pc, "merged.ckpt"))
    if ties_reduce is not None:
        recipe.ties_reduce = ties_reduce
        recipe.validate()

    def load(path: str | None) -> TensorMap | None:
        if path is None:
            return None
        return load_checkpoint(str(_require(Path(path), "checkpoint")), allow_nonfinite=allow_nonfinite)

    base = load(recipe.base_path)
    reasoning = load(recipe.reasoning_path)
    domain_models = [load(d.path) for d in recipe.domains]
    masks = None
    if recipe.method == "rcp":
        for d in recipe.domains:
            if d.mask_path is None:
                raise ValidationError(f"rcp merge requires mask_path for domain {d.path!r}")
        masks = [load(d.mask_path) for d in recipe.domains]

    merged = run_recipe(recipe, base, reasoning, domain_models, masks)

    meta = dict(merged.metadata)
    meta.update({
        "method": recipe.method,
        "lambda_r": repr(recipe.lambda_r),
        "lambda": repr(recipe.lam),
        "trim_keep": repr(recipe.trim_keep),
        "drop_rate": repr(recipe.drop_rate),
        "seed": str(recipe.seed),
    })
    for label, path in (("base", recipe.base_path), ("reasoning", recipe.reasoning_path)):
        if path is not None:
            meta[f"source.{label}"] = file_sha256(path)
    for i, d in enumerate(recipe.domains):
        meta[f"lambda_t_{i}"] = repr(d.lambda_t)
        meta[f"source.domain_{i}"] = file_sha256(d.path)
        if masks is not None:
            meta[f"source.mask_{i}"] = file_sha256(d.mask_path)
    save_checkpoint(merged.with_metadata(meta), out_path)
    logger.info("wrote merged checkpoint %s (method=%s)", out_path, recipe.method)
    return out_path


def cmd_eval(
    pc: PipelineConfig,
    model_path: str | None = None,
    emit_csv: bool = False,
    allow_nonfinite: bool = False,
) -> dict:
    """Evaluate a checkpoint on every eval_* corpus; write JSON/table reports."""
    pc.validate()
    path = Path(model_path) if model_path else _out(pc, "merged.ckpt")
    _require(path, "model checkpoint")
    params = load_checkpoint(str(path), allow_nonfinite=allow_nonfinite)
    cfg = ModelConfig.from_metadata(params.metadata)

    eval_roles = sorted(r for r in pc.corpora if r.startswith("eval"))
    if not eval_roles:
        raise ValidationError("config has no eval_* corpora")
    corpora = {r: _calibration(pc, r, 10**9) for r in eval_roles}

    spec = pc.eval_spec
    report = evaluate_model(
        params, corpora, model_id=file_sha256(path), cfg=cfg,
        distinct_orders=spec.distinct_n, prompt_len=spec.prompt_len,
        max_new=spec.max_new, stop_token=spec.stop_token,
    )
    stem = path.stem
    json_path = _out(pc, f"metrics_{stem}.json")
    doc = json.loads(report.to_json())
    doc["source.corpora"] = {r: file_sha256(pc.corpora[r]) for r in eval_roles}
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    _out(pc, f"metrics_{stem}.txt").write_text(report.to_table() + "\n")
    if emit_csv:
        _out(pc, f"metrics_{stem}.csv").write_text(report.to_csv())
    print(report.to_table())
    return doc


def cmd_ablate(
    pc: PipelineConfig,
    grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID,
    emit_csv: bool = False,
    threads: int = 1,
    preset: str | None = None,
) -> list[dict]:
    """Sweep lambda_r and both ablation switches; one table row per run."""
    pc.validate()
    rows: list[dict] = []
    configs: list[tuple[str, float, bool]] = [(f"lambda_r={g:g}", float(g), True) for g in grid]
    configs.append(("without_sensitivity", _effective_lambda_r(pc, None, preset), False))
    configs.append(("without_preservation", 0.0, True))

    eval_roles = sorted(r for r in pc.corpora if r.startswith("eval"))
    for label, lam_r, use_sensitivity in configs:
        cmd_stats(pc, lambda_r=lam_r, use_sensitivity=use_sensitivity, threads=threads)
        merged_path = cmd_merge(pc, lambda_r=lam_r)
        row: dict = {"config": label, "lambda_r": lam_r}
        mask_total = 0
        mask_size = 0
        for role in pc.domain_roles():
            mask = load_checkpoint(str(_out(pc, f"mask_{role}.ckpt")))
            mask_total += sum(int(mask[n].sum()) for n in mask.names)
            mask_size += sum(mask[n].size for n in mask.names)
        row["accepted_fraction"] = mask_total / mask_size if mask_size else 0.0
        if eval_roles:
            doc = cmd_eval(pc, model_path=merged_path)
            for entry in doc["corpora"]:
                row[f"ppl_{entry['corpus']}"] = entry["perplexity"]
        rows.append(row)

    keys = list(rows[0].keys())
    table_rows = [keys] + [
        [r["config"], *[f"{r[k]:.6g}" if isinstance(r[k], float) else str(r[k]) for k in keys[1:]]]
        for r in rows
    ]
    widths = [max(len(str(row[i])) for row in table_rows) for i in range(len(keys))]
    table = "\n".join("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip()
                      for row in table_rows)
    _out(pc, "ablate.json").write_text(json.dumps(rows, indent=2, sort_keys=True))
    _out(pc, "ablate.txt").write_text(table + "\n")
    if emit_csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([r[k] for k in keys])
        _out(pc, "ablate.csv").write_text(buf.getvalue())
    print(table)
    return rows


# ---------------------------------------------------------------------------
# argument parsing / entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcpmerge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("prepare", "train toy base/domain/reasoning checkpoints"),
        ("stats", "compute FIM, penalty, votes, and masks"),
        ("merge", "produce a merged checkpoint"),
        ("eval", "evaluate a checkpoint on the eval corpora"),
        ("ablate", "sweep lambda_r and the ablation switches"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="pipeline config JSON")
        sp.add_argument("--lambda-r", type=float, default=None, dest="lambda_r")
        sp.add_argument("--preset", choices=["small-model"], default=None)
        sp.add_argument("--without", choices=["sensitivity", "preservation"], default=None)
        sp.add_argument("--abs-sensitivity", action="store_true", dest="abs_sensitivity")
        sp.add_argument("--deterministic", action="store_true")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--emit-csv", action="store_true", dest="emit_csv")
        sp.add_argument("--allow-nonfinite", action="store_true", dest="allow_nonfinite")
        sp.add_argument("--print-effective-config", action="store_true",
                        dest="print_effective_config")
        if name == "merge":
            sp.add_argument("--recipe", help="explicit merge recipe JSON")
            sp.add_argument("--out", help="output checkpoint path")
            sp.add_argument("--ties-reduce", choices=["mean", "sum"], default=None,
                            dest="ties_reduce")
        if name == "eval":
            sp.add_argument("--model", help="checkpoint to evaluate (default merged.ckpt)")
        if name == "ablate":
            sp.add_argument("--lambda-grid", default=None, dest="lambda_grid",
                            help="comma-separated lambda_r values")
    return p


def _threads(args) -> int:
    if args.deterministic:
        return 1
    try:
        return max(1, int(os.environ.get("RCPMERGE_THREADS", "1")))
    except ValueError:
        raise ValidationError("RCPMERGE_THREADS must be an integer")


def _load_pipeline_config(args) -> PipelineConfig | None:
    if not args.config:
        return None
    pc = PipelineConfig.from_json(args.config)
    if args.seed is not None:
        pc = PipelineConfig(
            model=ModelConfig(**{**vars(pc.model), "seed": args.seed}).validate(),
            corpora=pc.corpora, training=pc.training, recipe=pc.recipe,
            output_dir=pc.output_dir,
            n_domain_calibration=pc.n_domain_calibration,
            n_reasoning_calibration=pc.n_reasoning_calibration,
            eval_spec=pc.eval_spec,
        )
    if args.print_effective_config:
        print(pc.effective_json())
    return pc


def _dispatch(args) -> None:
    pc = _load_pipeline_config(args)
    lambda_r = args.lambda_r
    use_sensitivity = args.without != "sensitivity"
    if args.without == "preservation":
        lambda_r = 0.0
    threads = _threads(args)

    if args.command == "prepare":
        if pc is None:
            raise ValidationError("prepare requires --config")
        cmd_prepare(pc)
    elif args.command == "stats":
        if pc is None:
            raise ValidationError("stats requires --config")
        cmd_stats(pc, lambda_r=lambda_r, preset=args.preset,
                  abs_sensitivity=args.abs_sensitivity, use_sensitivity=use_sensitivity,
                  threads=threads, allow_nonfinite=args.allow_nonfinite)
    elif args.command == "merge":
        cmd_merge(pc, recipe_path=args.recipe, out=args.out, lambda_r=lambda_r,
                  preset=args.preset, ties_reduce=args.ties_reduce,
                  allow_nonfinite=args.allow_nonfinite)
    elif args.command == "eval":
        if pc is None:
            raise ValidationError("eval requires --config")
        cmd_eval(pc, model_path=args.model, emit_csv=args.emit_csv,
                 allow_nonfinite=args.allow_nonfinite)
    elif args.command == "ablate":
        if pc is None:
            raise ValidationError("ablate requires --config")
        grid = DEFAULT_LAMBDA_GRID
        if args.lambda_grid:
            grid = tuple(float(x) for x in args.lambda_grid.split(","))
        cmd_ablate(pc, grid=grid, emit_csv=args.emit_csv, threads=threads, preset=args.preset)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("RCPMERGE_LOG", "WARNING"))
    args = _build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NonFiniteError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4
    except (CheckpointError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
