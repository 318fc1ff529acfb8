"""Engine configuration: documented `key = value` text format.

Recognized keys (defaults in parentheses):
    stm.capacity (10)
    orchestrator.consolidation_threshold (20)
    orchestrator.consolidation_period_s (600)
    orchestrator.prune_period_s (86400)
    orchestrator.distill_period_s (86400)
    orchestrator.distill_min_pairs (1)
    orchestrator.batch_size (8)
    retrieval.top_m (5)
    retrieval.hops (2)
    retrieval.context_budget (2000)
    retrieval.alpha (0.5)
    retrieval.beta (0.5)
    prune.max_entities (10000)
    prune.max_relations (20000)
    prune.lambda_per_day (0.0333...)
    classify.core_lexicon (path to newline-separated phrases, optional)

Lines starting with `#` and blank lines are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid

DEFAULT_CORE_LEXICON = (
    "my name is",
    "i prefer",
    "i live in",
    "i am allergic to",
    "my favorite",
    "call me",
)


@dataclass
class EngineConfig:
    stm_capacity: int = 10
    consolidation_threshold: int = 20
    consolidation_period_s: int = 600
    prune_period_s: int = 86400
    distill_period_s: int = 86400
    distill_min_pairs: int = 1
    batch_size: int = 8
    top_m: int = 5
    hops: int = 2
    context_budget: int = 2000
    alpha: float = 0.5
    beta: float = 0.5
    max_entities: int = 10000
    max_relations: int = 20000
    lambda_per_day: float = 1.0 / 30.0
    core_lexicon: tuple = DEFAULT_CORE_LEXICON
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.stm_capacity < 1:
            raise ConfigInvalid("stm.capacity must be >= 1")
        if self.consolidation_threshold < 1:
            raise ConfigInvalid("orchestrator.consolidation_threshold must be >= 1")
        if self.max_entities < 1 or self.max_relations < 1:
            raise ConfigInvalid("prune budgets must be positive")


_KEY_MAP = {
    "stm.capacity": ("stm_capacity", int),
    "orchestrator.consolidation_threshold": ("consolidation_threshold", int),
    "orchestrator.consolidation_period_s": ("consolidation_period_s", int),
    "orchestrator.prune_period_s": ("prune_period_s", int),
    "orchestrator.distill_period_s": ("distill_period_s", int),
    "orchestrator.distill_min_pairs": ("distill_min_pairs", int),
    "orchestrator.batch_size": ("batch_size", int),
    "retrieval.top_m": ("top_m", int),
    "retrieval.hops": ("hops", int),
    "retrieval.context_budget": ("context_budget", int),
    "retrieval.alpha": ("alpha", float),
    "retrieval.beta": ("beta", float),
    "prune.max_entities": ("max_entities", int),
    "prune.max_relations": ("max_relations", int),
    "prune.lambda_per_day": ("lambda_per_day", float),
}


def parse_config(text: str, base_dir: Path | None = None) -> EngineConfig:
    config = EngineConfig()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "classify.core_lexicon":
            lexicon_path = Path(value)
            if base_dir and not lexicon_path.is_absolute():
                lexicon_path = base_dir / lexicon_path
            try:
                phrases = [p.strip().casefold()
                           for p in lexicon_path.read_text(encoding="utf-8").splitlines()
                           if p.strip()]
            except OSError as exc:
                raise ConfigInvalid(f"line {line_no}: cannot read core lexicon: {exc}")
            config.core_lexicon = tuple(phrases)
        elif key in _KEY_MAP:
            attr, caster = _KEY_MAP[key]
            try:
                setattr(config, attr, caster(value))
            except ValueError:
                raise ConfigInvalid(f"line {line_no}: bad value for {key}: {value!r}")
        else:
            config.extra[key] = value
    config.validate()
    return config


def load_config(path: str | Path) -> EngineConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)
