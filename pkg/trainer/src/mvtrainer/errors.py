"""Trainer error hierarchy."""


class TrainerError(Exception):
    """Base class; `code` is the stable machine-readable identifier."""

    code = "trainer_error"


class ParseError(TrainerError):
    code = "parse_error"


class ModelUnavailable(TrainerError):
    code = "model_unavailable"


class EmptyPairs(TrainerError):
    code = "empty_pairs"


class RoundMismatch(TrainerError):
    code = "round_mismatch"


class NaNLoss(TrainerError):
    code = "nan_loss"
