import numpy as np
import pytest

from rcpmerge import CalibrationSet, ModelConfig, TensorMap, init_model
from rcpmerge.model import param_shapes

DOMAIN_SENTENCES = [
    "the heart pumps blood through the body",
    "a cell divides into two new cells",
    "the lungs take in air and oxygen",
    "bones hold the body up straight",
    "nerves carry signals to the brain",
    "the liver filters blood all day",
]
REASONING_SENTENCES = [
    "12 + 34 = 46 so carry the one",
    "7 * 8 = 56 and 56 / 8 = 7",
    "if x = 3 then 2x + 1 = 7",
    "the sum 9 + 9 + 9 = 27 holds",
    "2^5 = 32 and 2^6 = 64 doubles",
    "100 - 58 = 42 check: 42 + 58 = 100",
]


def domain_lines(rng, n):
    """Compositional anatomy-flavoured lines: learnable style, no memorising."""
    subjects = ["the heart", "a cell", "the lungs", "the liver",
                "a nerve", "the brain", "a muscle", "the skin"]
    verbs = ["pumps", "filters", "carries", "absorbs",
             "repairs", "protects", "stores", "controls"]
    objects = ["blood", "oxygen", "signals", "nutrients",
               "water", "energy", "pressure", "heat"]
    tails = ["through the body", "all day long", "without a pause",
             "in steady waves", "when we sleep", "under stress"]
    return [
        f"{subjects[rng.integers(8)]} {verbs[rng.integers(8)]} "
        f"{objects[rng.integers(8)]} {tails[rng.integers(6)]}"
        for _ in range(n)
    ]


def reasoning_lines(rng, n):
    """Compositional arithmetic lines with consistent answers."""
    out = []
    for _ in range(n):
        a, b = int(rng.integers(10, 60)), int(rng.integers(10, 40))
        form = rng.integers(3)
        if form == 0:
            out.append(f"{a} + {b} = {a + b} so {a + b} - {b} = {a}")
        elif form == 1:
            out.append(f"{a} - {b} = {a - b} check: {a - b} + {b} = {a}")
        else:
            out.append(f"if x = {b} then x + {a} = {a + b}")
    return out


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def text_samples(sentences, n_lines, context_len, rng):
    lines = [sentences[rng.integers(len(sentences))] for _ in range(n_lines)]
    return [
        np.frombuffer(line.encode("utf-8")[:context_len], dtype=np.uint8).astype(np.int64)
        for line in lines
    ]


def make_corpus(sentences, n_lines, cfg, rng, role="domain"):
    return CalibrationSet(text_samples(sentences, n_lines, cfg.context_len, rng), role)


def write_corpus(path, sentences, n_lines, rng):
    lines = [sentences[rng.integers(len(sentences))] for _ in range(n_lines)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def random_map(rng, spec=None, dtype=np.float32, metadata=None):
    spec = spec or {"w": (3, 4), "b": (5,), "layers.0.x": (2, 2, 2)}
    return TensorMap(
        {n: rng.standard_normal(s).astype(dtype) for n, s in spec.items()}, metadata
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(vocab_size=256, context_len=16, d_model=8, n_heads=2, n_layers=1, seed=3)


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    return init_model(tiny_cfg)


@pytest.fixture(scope="session")
def zero_layer_cfg():
    return ModelConfig(vocab_size=256, context_len=16, d_model=8, n_heads=2, n_layers=0, seed=0)


@pytest.fixture(scope="session")
def zero_weight_model(zero_layer_cfg):
    shapes = param_shapes(zero_layer_cfg)
    return TensorMap(
        {n: np.zeros(s, dtype=np.float32) for n, s in shapes.items()},
        zero_layer_cfg.to_metadata(),
    )
