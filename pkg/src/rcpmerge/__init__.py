"""rcpmerge: reasoning-preserving checkpoint merging at desk scale.

Fuses a reasoning model and one or more domain models into a base model
by filtering per-parameter updates through a signed domain-sensitivity
score and a Fisher-information preservation penalty, alongside the
standard magnitude-based baselines (linear mean, task arithmetic, TIES,
DARE).  A small byte-level transformer with a hand-written backward pass
supplies the per-sample gradients and end-to-end evaluation.
"""

from .errors import CheckpointError, NonFiniteError, RcpMergeError, ValidationError
from .evaluate import MetricsReport, distinct_n, generation_length, perplexity
from .kernels import backend_name, set_backend
from .merge import (
    MergeRecipe,
    dare,
    linear_merge,
    rcp_merge,
    task_arithmetic,
    ties_merge,
)
from .model import (
    CalibrationSet,
    ModelConfig,
    backward,
    forward_loss,
    generate,
    init_model,
    load_corpus,
    token_nlls,
    train,
)
from .stats import (
    FimDiagonal,
    PenaltyMap,
    VoteCounter,
    domain_sensitivity_sample,
    fim_diagonal,
    preservation_penalty,
    vote_mask,
)
from .tensor_store import TensorMap, combine, load_checkpoint, save_checkpoint, scale

__version__ = "0.1.0"

__all__ = [
    "CalibrationSet",
    "CheckpointError",
    "FimDiagonal",
    "MergeRecipe",
    "MetricsReport",
    "ModelConfig",
    "NonFiniteError",
    "PenaltyMap",
    "RcpMergeError",
    "TensorMap",
    "ValidationError",
    "VoteCounter",
    "backend_name",
    "backward",
    "combine",
    "dare",
    "distinct_n",
    "domain_sensitivity_sample",
    "fim_diagonal",
    "forward_loss",
    "generate",
    "generation_length",
    "init_model",
    "linear_merge",
    "load_checkpoint",
    "load_corpus",
    "perplexity",
    "preservation_penalty",
    "rcp_merge",
    "save_checkpoint",
    "scale",
    "set_backend",
    "task_arithmetic",
    "ties_merge",
    "token_nlls",
    "train",
    "vote_mask",
]
