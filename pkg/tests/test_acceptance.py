"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass/fail
line per criterion.  Two checks are known to fail on IEEE float64
hardware and are kept as stated rather than loosened:

* criterion 7: the mean of 1000 independent drop patterns at r = 0.9 has
  a relative Frobenius distance concentrated at sqrt(r/((1-r)*1000)) =
  9.5 percent, above the stated 5 percent bound;
* criterion 11 (perplexity half): exp(x) == 256.0 has no float64
  solution, so the uniform-model perplexity lands 2 ulp below 256.
"""

import json
import math
import time

import numpy as np
import pytest

from rcpmerge import (
    CalibrationSet,
    ModelConfig,
    TensorMap,
    backward,
    combine,
    dare,
    distinct_n,
    fim_diagonal,
    forward_loss,
    init_model,
    load_checkpoint,
    perplexity,
    preservation_penalty,
    rcp_merge,
    save_checkpoint,
    ties_merge,
    vote_mask,
)
from rcpmerge.cli import PipelineConfig, cmd_merge, cmd_prepare, cmd_stats, main
from rcpmerge.model import load_corpus
from conftest import domain_lines, random_map, reasoning_lines, write_lines
from test_merge import brute_force_ties
from test_stats import brute_force_mask, closed_form_sensitivity_errors


def report(criterion: str, message: str) -> None:
    print(f"\n[criterion {criterion}] PASS - {message}")


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------


def test_criterion_01_gradient_matches_finite_differences():
    start = time.monotonic()
    cfg = ModelConfig(vocab_size=256, context_len=16, d_model=8, n_heads=2, n_layers=1, seed=11)
    params = init_model(cfg)
    n_params = sum(a.size for _, a in params.items())
    assert n_params <= 10_000
    sample = [5, 9, 2, 5, 9, 7]
    grads = backward(params, sample, cfg)

    p64 = {n: a.astype(np.float64) for n, a in params.items()}
    step = 1e-4
    worst = 0.0
    for name in params.names:
        flat = p64[name].ravel()
        analytic = grads[name].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = forward_loss(TensorMap(p64, params.metadata), sample, cfg)
            flat[i] = keep - step
            down = forward_loss(TensorMap(p64, params.metadata), sample, cfg)
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            rel = abs(fd - analytic[i]) / max(abs(fd), abs(analytic[i]), 1e-6)
            worst = max(worst, rel)
    elapsed = time.monotonic() - start
    assert worst < 1e-4, f"max relative error {worst:.3e}"
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
    report("1", f"{n_params} parameters, max rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. sensitivity oracle on the closed form
# ---------------------------------------------------------------------------


def test_criterion_02_sensitivity_taylor_oracle():
    _, _, err_coarse = closed_form_sensitivity_errors(0.1)
    _, _, err_fine = closed_form_sensitivity_errors(0.01)
    assert err_coarse < 0.06, f"rel err at scale 0.1 was {err_coarse:.4f}"
    assert err_fine < 0.006, f"rel err at scale 0.01 was {err_fine:.5f}"
    report("2", f"rel err {err_coarse:.4%} at scale 0.1, {err_fine:.4%} at 0.01")


# ---------------------------------------------------------------------------
# 3. FIM exact recomputation
# ---------------------------------------------------------------------------


def test_criterion_03_fim_bit_exact_recompute():
    cfg = ModelConfig(vocab_size=256, context_len=16, d_model=8, n_heads=2, n_layers=1, seed=2)
    params = init_model(cfg)
    rng = np.random.default_rng(0)
    samples = [rng.integers(0, 256, size=int(rng.integers(3, 13))) for _ in range(120)]
    stored = [backward(params, s, cfg) for s in samples]

    replay = iter(stored)
    fim = fim_diagonal(params, CalibrationSet(samples), lambda s: next(replay))

    for name in params.names:
        acc = np.zeros(params[name].shape, dtype=np.float64)
        for g in stored:
            acc += g[name] * g[name]
        expected = acc / len(samples)
        assert np.array_equal(fim.values[name], expected), f"mismatch in {name}"
    report("3", f"{len(samples)} samples, all {len(params.names)} tensors bit-exact")


# ---------------------------------------------------------------------------
# 4. vote/mask brute-force equivalence
# ---------------------------------------------------------------------------


def test_criterion_04_vote_mask_brute_force_200_instances():
    rng = np.random.default_rng(2024)
    ties_seen = 0
    for instance in range(200):
        n_params = int(rng.integers(1, 51))
        n_samples = int(rng.integers(1, 22))
        lam = float(rng.choice([0.0, 0.3, 2.0]))
        S = rng.standard_normal((n_params, n_samples))
        if instance % 3 == 0:
            S[rng.random(S.shape) < 0.4] = 0.0  # exercise C == 0 rejections
        p = np.abs(rng.standard_normal(n_params))
        if instance % 5 == 0:
            p[rng.random(n_params) < 0.5] = 0.0

        theta = TensorMap({"w": np.ones(n_params)})
        penalty = preservation_penalty(
            fim_diagonal(theta, CalibrationSet([np.array([0, 1])]),
                         lambda s: {"w": np.zeros(n_params)}),
            theta, theta,
        )
        penalty.values = TensorMap({"w": p})
        grads = iter([{"w": S[:, k]} for k in range(n_samples)])
        corpus = CalibrationSet([np.array([0, 1])] * n_samples)
        counter, mask = vote_mask(theta, theta, penalty, corpus, lambda s: next(grads), lam)

        accepts, expected_mask = brute_force_mask(S, p, lam)
        ties_seen += int(np.count_nonzero(accepts * 2 == n_samples))
        assert np.array_equal(counter.accept_votes["w"], accepts), f"instance {instance}"
        assert np.array_equal(mask["w"], expected_mask), f"instance {instance}"
    assert ties_seen > 0, "no tie-rejection cases were generated"
    report("4", f"200 instances exact, {ties_seen} tie-rejection coordinates exercised")


# ---------------------------------------------------------------------------
# toy pipeline shared by criteria 5, 6, 10
# ---------------------------------------------------------------------------


def toy_config(tmp_path, seed: int, out: str) -> PipelineConfig:
    rng = np.random.default_rng(17)
    corpora = tmp_path / "corpora"
    if not corpora.exists():
        corpora.mkdir(parents=True)
        a = domain_lines(rng, 120)
        b = reasoning_lines(rng, 120)
        write_lines(corpora / "domain.txt", a)
        write_lines(corpora / "reasoning.txt", b)
        write_lines(corpora / "mixed.txt", a[:60] + b[:60])
    doc = {
        "model": {"vocab_size": 256, "context_len": 48, "d_model": 32,
                  "n_heads": 4, "n_layers": 2, "seed": seed},
        "corpora": {
            "base": str(corpora / "mixed.txt"),
            "domain_1": str(corpora / "domain.txt"),
            "reasoning": str(corpora / "reasoning.txt"),
            "eval_domain": str(corpora / "domain.txt"),
            "eval_reasoning": str(corpora / "reasoning.txt"),
        },
        "training": {
            "base": {"steps": 200, "lr": 0.1},
            "domain_1": {"steps": 250, "lr": 0.08},
            "reasoning": {"steps": 250, "lr": 0.08},
        },
        "calibration": {"n_domain": 32, "n_reasoning": 32},
        "recipe": {"method": "rcp", "lambda_r": 0.3},
        "output_dir": str(tmp_path / out),
    }
    path = tmp_path / f"config_{out}.json"
    path.write_text(json.dumps(doc, indent=2))
    return PipelineConfig.from_json(path)


@pytest.fixture(scope="module")
def toy_triple(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("acceptance_toy")
    pc = toy_config(tmp_path, seed=0, out="triple")
    cmd_prepare(pc)
    return tmp_path, pc


# ---------------------------------------------------------------------------
# 5. mask monotonicity on the prepared triple
# ---------------------------------------------------------------------------


def test_criterion_05_mask_monotonicity(toy_triple, capsys):
    start = time.monotonic()
    tmp_path, pc = toy_triple
    grid = (0.0, 0.1, 0.3, 1.0, 10.0)
    masks = []
    fractions = []
    for lam in grid:
        cmd_stats(pc, lambda_r=lam)
        mask = load_checkpoint(str(tmp_path / "triple" / "mask_domain_1.ckpt"))
        flat = np.concatenate([mask[n].ravel().astype(bool) for n in mask.names])
        masks.append(flat)
        fractions.append(float(flat.mean()))
    capsys.readouterr()
    for small_lam, big_lam in zip(masks, masks[1:]):
        assert not np.any(big_lam & ~small_lam), "accepted sets are not nested"
    assert all(a >= b for a, b in zip(fractions, fractions[1:])), fractions
    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"monotonicity sweep took {elapsed:.1f}s"
    report("5", "fractions " + " >= ".join(f"{f:.4f}" for f in fractions) + f", {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 6. merge identities
# ---------------------------------------------------------------------------


def test_criterion_06_merge_identities(toy_triple, tmp_path, capsys):
    tmp_toy, pc = toy_triple
    out = tmp_toy / "triple"
    base = load_checkpoint(str(out / "base.ckpt"))
    reasoning = load_checkpoint(str(out / "reasoning.ckpt"))
    domain = load_checkpoint(str(out / "domain_1.ckpt"))

    # all-zero masks reproduce the reasoning weights bit-exactly
    delta = combine(domain, base, "sub")
    zero_mask = TensorMap({n: np.zeros(base[n].shape, np.float32) for n in base.names})
    merged = rcp_merge(base, reasoning, [(delta, zero_mask, 1.0)])
    for n in merged.names:
        assert merged[n].tobytes() == reasoning[n].tobytes(), f"{n} differs from theta_r"

    # a lambda_r = 0 run and the without-preservation ablation coincide bytewise
    pc_a = toy_config(tmp_toy, seed=0, out="ablation_a")
    pc_b = toy_config(tmp_toy, seed=0, out="ablation_b")
    cfg_a = tmp_toy / "config_ablation_a.json"
    cfg_b = tmp_toy / "config_ablation_b.json"
    cmd_prepare(pc_a)
    cmd_prepare(pc_b)
    assert main(["stats", "--config", str(cfg_a), "--lambda-r", "0"]) == 0
    assert main(["merge", "--config", str(cfg_a), "--lambda-r", "0"]) == 0
    assert main(["stats", "--config", str(cfg_b), "--without", "preservation"]) == 0
    assert main(["merge", "--config", str(cfg_b), "--without", "preservation"]) == 0
    capsys.readouterr()
    bytes_a = (tmp_toy / "ablation_a" / "merged.ckpt").read_bytes()
    bytes_b = (tmp_toy / "ablation_b" / "merged.ckpt").read_bytes()
    assert bytes_a == bytes_b, "lambda_r=0 and without-preservation outputs differ"
    report("6", "zero-mask identity and ablation byte-identity both hold")


# ---------------------------------------------------------------------------
# 7. DARE unbiasedness (known-red: estimator noise floor exceeds the bound)
# ---------------------------------------------------------------------------


def test_criterion_07_dare_unbiasedness_1000_seeds():
    rng = np.random.default_rng(7)
    delta = TensorMap({"w": rng.standard_normal(10_000)})
    r, n_seeds = 0.9, 1000
    acc = np.zeros(10_000)
    for seed in range(n_seeds):
        acc += dare(delta, r, seed=seed)["w"]
    est = acc / n_seeds
    rel = float(np.linalg.norm(est - delta["w"]) / np.linalg.norm(delta["w"]))
    noise_floor = math.sqrt(r / ((1.0 - r) * n_seeds))
    assert rel < 0.05, (
        f"relative Frobenius distance {rel:.4f} (estimator noise floor at "
        f"{n_seeds} seeds is {noise_floor:.4f}, above the stated 0.05 bound)"
    )
    report("7", f"relative distance {rel:.4f} < 0.05")


# ---------------------------------------------------------------------------
# 8. TIES brute-force oracle
# ---------------------------------------------------------------------------


def test_criterion_08_ties_oracle_100_instances():
    rng = np.random.default_rng(88)
    for instance in range(100):
        n = int(rng.integers(1, 15))
        k = int(rng.integers(1, 5))
        trim_keep = float(rng.choice([0.2, 0.5, 0.75, 0.9, 1.0]))
        reduce = "mean" if instance % 2 == 0 else "sum"
        deltas_raw = [rng.standard_normal(n) for _ in range(k)]
        if instance % 4 == 0:
            for d in deltas_raw:
                d[rng.random(n) < 0.35] = 0.0
        if instance % 7 == 0:
            deltas_raw[0][:] = np.round(deltas_raw[0], 1)  # magnitude ties at the cutoff
        pre = TensorMap({"w": np.zeros(n)})
        merged = ties_merge(pre, [TensorMap({"w": d}) for d in deltas_raw],
                            trim_keep, 1.0, reduce)
        expected = brute_force_ties(deltas_raw, trim_keep, reduce)
        assert np.allclose(merged["w"], expected, rtol=0, atol=1e-12), f"instance {instance}"
    report("8", "100 instances match the literal trim/elect/reduce reference")


# ---------------------------------------------------------------------------
# 9. container format round-trip
# ---------------------------------------------------------------------------


def test_criterion_09_format_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    for trial in range(40):
        spec = {}
        for i in range(int(rng.integers(0, 6))):
            ndim = int(rng.integers(0, 4))
            spec[f"layers.{i}.t{rng.integers(10)}"] = tuple(
                int(d) for d in rng.integers(0, 6, size=ndim)
            )
        dtype = np.float32 if rng.random() < 0.5 else np.float64
        meta = {f"key{i}": f"value{rng.integers(1000)}" for i in range(int(rng.integers(0, 4)))}
        m = random_map(rng, spec, dtype=dtype, metadata=meta)
        path = tmp_path / f"acc9_{trial}.ckpt"
        save_checkpoint(m, str(path))
        first = path.read_bytes()
        loaded = load_checkpoint(str(path))
        assert loaded.equal(m), f"trial {trial}: load(save(m)) != m"
        save_checkpoint(loaded, str(path))
        assert path.read_bytes() == first, f"trial {trial}: double save differs"
    report("9", "40 randomized maps: bit-exact round-trip, byte-identical re-save")


# ---------------------------------------------------------------------------
# 10. end-to-end toy analogue of the balance claim
# ---------------------------------------------------------------------------


def test_criterion_10_end_to_end_balance(tmp_path, capsys):
    start = time.monotonic()
    results = []
    for seed in range(5):
        pc = toy_config(tmp_path, seed=seed, out=f"run{seed}")
        cmd_prepare(pc)
        cmd_stats(pc, lambda_r=0.3)
        merged_path = cmd_merge(pc, lambda_r=0.3)

        cfg = pc.model
        corpus_a = load_corpus(pc.corpora["domain_1"], cfg)
        corpus_b = load_corpus(pc.corpora["reasoning"], cfg)
        merged = load_checkpoint(merged_path)
        reasoning = load_checkpoint(str(tmp_path / f"run{seed}" / "reasoning.ckpt"))
        domain = load_checkpoint(str(tmp_path / f"run{seed}" / "domain_1.ckpt"))
        results.append((
            perplexity(merged, corpus_a, cfg)[1],
            perplexity(reasoning, corpus_a, cfg)[1],
            perplexity(merged, corpus_b, cfg)[1],
            perplexity(domain, corpus_b, cfg)[1],
        ))
    capsys.readouterr()
    med = np.median(np.array(results), axis=0)
    elapsed = time.monotonic() - start
    assert med[0] < med[1], f"median merged ppl on A {med[0]:.3f} !< reasoning {med[1]:.3f}"
    assert med[2] < med[3], f"median merged ppl on B {med[2]:.3f} !< domain {med[3]:.3f}"
    assert elapsed < 900.0, f"end-to-end run took {elapsed:.1f}s"
    report(
        "10",
        f"A: merged {med[0]:.3f} < reasoning {med[1]:.3f}; "
        f"B: merged {med[2]:.3f} < domain {med[3]:.3f}; {elapsed:.1f}s for 5 seeds",
    )


# ---------------------------------------------------------------------------
# 11. metric definitions
# ---------------------------------------------------------------------------


def test_criterion_11a_uniform_perplexity_exact(zero_weight_model):
    corpus = CalibrationSet([np.array([1, 2, 3, 4]), np.array([250, 251])])
    _, ppl = perplexity(zero_weight_model, corpus)
    assert ppl == 256.0, (
        f"ppl = {ppl!r}: exp(log(256.0)) = {math.exp(math.log(256.0))!r} on this platform; "
        "no float64 input to exp yields exactly 256.0"
    )
    report("11a", f"uniform-model perplexity is exactly {ppl!r}")


def test_criterion_11b_distinct_n_definition():
    tokens = {"a": 97, "b": 98}
    text = [tokens["a"], tokens["b"], tokens["a"], tokens["b"]]
    value = distinct_n([text], 2)
    assert abs(value - 2.0 / 3.0) <= 1e-12, f"distinct_2 = {value!r}"
    report("11b", f"distinct_2('a b a b') = {value:.15f} (2/3 to 1e-12)")
