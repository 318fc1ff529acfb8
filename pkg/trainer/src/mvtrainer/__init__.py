"""mvtrainer: toy-scale parametric-memory trainer for memverse exports."""

from .data import load_pairs, manifest_for, read_manifest
from .errors import (
    EmptyPairs,
    ModelUnavailable,
    NaNLoss,
    ParseError,
    RoundMismatch,
    TrainerError,
)
from .model import REGISTRY, build_model, param_digest
from .train import (
    Checkpoint,
    TrainConfig,
    evaluate,
    fine_tune,
    generate,
    init_parametric,
    load_checkpoint,
    masked_loss,
    update_round,
)

__version__ = "0.1.0"
