"""Supervised memorization trainer with round-based incremental updates.

A checkpoint is the full parametric memory state after round t; round 0 is
the pristine seeded base model. Each subsequent round fine-tunes on exactly
one export file and carries its training pairs forward so the next round can
report retention on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
from torch.nn import functional as F

from .data import load_pairs, manifest_for, read_manifest
from .errors import EmptyPairs, NaNLoss, RoundMismatch
from .model import REGISTRY, TinyGpt, build_model, param_digest
from .tokenizer import IGNORE_INDEX, PAD_ID, decode_ids, encode_pair, encode_text


@dataclass
class TrainConfig:
    base_model_id: str = "tiny-gpt"
    max_seq_len: int = 2048
    learning_rate: float = 2e-6
    scheduler: str = "linear_warmup"   # or "cosine"
    warmup_fraction: float = 0.10
    grad_clip_norm: float = 1.0
    epochs: int = 1
    batch_size: int = 8
    seed: int = 0
    precision: str = "full"           # "mixed" accepted; a no-op at toy scale

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in (0, 1)")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.grad_clip_norm <= 0.0:
            raise ValueError("grad_clip_norm must be positive")
        if self.scheduler not in ("linear_warmup", "cosine"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.precision not in ("full", "mixed"):
            raise ValueError(f"unknown precision {self.precision!r}")


@dataclass
class Checkpoint:
    path: Path
    round: int
    base_model_id: str
    train_loss_final: float
    pair_count: int


def _effective_seq_len(config: TrainConfig) -> int:
    return min(config.max_seq_len, REGISTRY[config.base_model_id].max_positions)


def _normalize_pairs(pairs) -> list[tuple[str, str]]:
    out = []
    for pair in pairs:
        if isinstance(pair, dict):
            out.append((pair["prompt"], pair["target"]))
        else:
            prompt, target = pair
            out.append((prompt, target))
    return out


def masked_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Next-token cross entropy over supervised positions only; prompt and
    padding positions carry the ignore label and contribute exactly zero."""
    return F.cross_entropy(
        logits[:, :-1, :].reshape(-1, logits.shape[-1]),
        labels[:, 1:].reshape(-1),
        ignore_index=IGNORE_INDEX)


def _batch_tensors(encoded: list[tuple[list[int], list[int]]]
                   ) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(ids) for ids, _labels in encoded)
    ids_out = torch.full((len(encoded), width), PAD_ID, dtype=torch.long)
    labels_out = torch.full((len(encoded), width), IGNORE_INDEX, dtype=torch.long)
    for row, (ids, labels) in enumerate(encoded):
        ids_out[row, :len(ids)] = torch.tensor(ids, dtype=torch.long)
        labels_out[row, :len(labels)] = torch.tensor(labels, dtype=torch.long)
    return ids_out, labels_out


def _save_checkpoint(model: TinyGpt, config: TrainConfig, path: Path, *,
                     round_index: int, train_loss_final: float, pair_count: int,
                     train_pairs: list[tuple[str, str]],
                     pairs_consumed_total: int) -> Checkpoint:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "model_state": model.state_dict(),
        "model_id": config.base_model_id,
        "seed": config.seed,
        "round": round_index,
        "train_loss_final": train_loss_final,
        "pair_count": pair_count,
        "train_pairs": [list(p) for p in train_pairs],
        "pairs_consumed_total": pairs_consumed_total,
    }, path)
    sidecar = "".join(f"{key}: {value}\n" for key, value in (
        ("round", round_index),
        ("base_model_id", config.base_model_id),
        ("param_digest", param_digest(model)),
        ("train_loss_final", repr(train_loss_final)),
        ("pair_count", pair_count),
    ))
    path.with_name(path.name + ".manifest").write_text(sidecar, encoding="utf-8")
    return Checkpoint(path=path, round=round_index,
                      base_model_id=config.base_model_id,
                      train_loss_final=train_loss_final, pair_count=pair_count)


def load_checkpoint(path: str | Path) -> tuple[TinyGpt, dict]:
    payload = torch.load(Path(path), map_location="cpu")
    model = build_model(payload["model_id"], payload["seed"])
    model.load_state_dict(payload["model_state"])
    return model, payload


def init_parametric(config: TrainConfig, out_dir: str | Path) -> Checkpoint:
    """Round-0 checkpoint: the pristine seeded base weights, untrained."""
    model = build_model(config.base_model_id, config.seed)
    out_dir = Path(out_dir)
    return _save_checkpoint(model, config, out_dir / "round_0000.pt",
                            round_index=0, train_loss_final=float("nan"),
                            pair_count=0, train_pairs=[],
                            pairs_consumed_total=0)


def _lr_lambda(config: TrainConfig, total_steps: int):
    warmup = max(1, int(total_steps * config.warmup_fraction))

    def schedule(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        if config.scheduler == "cosine":
            progress = (step - warmup) / max(1, total_steps - warmup)
            return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))
        return 1.0

    return schedule


def fine_tune(ckpt: Checkpoint, pairs, config: TrainConfig,
              out_path: Optional[str | Path] = None
              ) -> tuple[Checkpoint, dict]:
    normalized = _normalize_pairs(pairs)
    if not normalized:
        raise EmptyPairs("fine_tune requires at least one (prompt, target) pair")

    model, payload = load_checkpoint(ckpt.path)
    model.train()
    torch.manual_seed(config.seed)

    seq_len = _effective_seq_len(config)
    encoded = []
    truncated_pairs = 0
    for prompt, target in normalized:
        ids, labels, truncated = encode_pair(prompt, target, seq_len)
        encoded.append((ids, labels))
        truncated_pairs += int(truncated)

    batches = [encoded[i:i + config.batch_size]
               for i in range(0, len(encoded), config.batch_size)]
    total_steps = config.epochs * len(batches)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, _lr_lambda(config, total_steps))

    loss_curve: list[float] = []
    tokens_seen = 0
    for _epoch in range(config.epochs):
        for batch in batches:
            ids, labels = _batch_tensors(batch)
            optimizer.zero_grad()
            loss = masked_loss(model(ids), labels)
            if torch.isnan(loss):
                raise NaNLoss(f"loss became NaN at step {len(loss_curve)}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip_norm)
            optimizer.step()
            scheduler.step()
            loss_curve.append(float(loss.detach()))
            tokens_seen += sum(len(i) for i, _l in batch)

    round_index = ckpt.round + 1
    if out_path is None:
        out_path = Path(ckpt.path).with_name(f"round_{round_index:04d}.pt")
    new_ckpt = _save_checkpoint(
        model, config, Path(out_path), round_index=round_index,
        train_loss_final=loss_curve[-1], pair_count=len(normalized),
        train_pairs=normalized,
        pairs_consumed_total=payload.get("pairs_consumed_total", 0) + len(normalized))
    metrics = {"loss_curve": loss_curve, "tokens_seen": tokens_seen,
               "truncated_pairs": truncated_pairs}
    return new_ckpt, metrics


def generate(model: TinyGpt, prompt: str, max_new_tokens: int = 64) -> str:
    model.eval()
    ids = encode_text(prompt)
    limit = model.spec.max_positions
    ids = ids[:limit]
    out: list[int] = []
    with torch.no_grad():
        for _ in range(max_new_tokens):
            window = (ids + out)[-limit:]
            logits = model(torch.tensor([window], dtype=torch.long))
            token = int(torch.argmax(logits[0, -1]))
            out.append(token)
            if token == 256:  # EOS
                break
    return decode_ids(out)


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def evaluate(ckpt: Checkpoint, pairs) -> dict:
    """Greedy-decoding fidelity of the memorized targets. Empty input yields
    undefined sentinels (None), never zeros."""
    normalized = _normalize_pairs(pairs)
    if not normalized:
        return {"mean_target_nll": None, "exact_match_rate": None,
                "prefix_match_rate": None}
    model, _payload = load_checkpoint(ckpt.path)
    model.eval()
    seq_len = model.spec.max_positions

    exact = 0
    prefix = 0
    nll_total = 0.0
    nll_tokens = 0
    with torch.no_grad():
        for prompt, target in normalized:
            ids, labels, _trunc = encode_pair(prompt, target, seq_len)
            batch_ids, batch_labels = _batch_tensors([(ids, labels)])
            logits = model(batch_ids)
            supervised = int((batch_labels[:, 1:] != IGNORE_INDEX).sum())
            nll_total += float(masked_loss(logits, batch_labels)) * supervised
            nll_tokens += supervised

            budget = len(encode_text(target)) + 16
            produced = generate(model, prompt, max_new_tokens=budget)
            if _normalize_ws(produced) == _normalize_ws(target):
                exact += 1
            if _normalize_ws(produced)[:32] == _normalize_ws(target)[:32]:
                prefix += 1
    n = len(normalized)
    return {"mean_target_nll": nll_total / max(1, nll_tokens),
            "exact_match_rate": exact / n,
            "prefix_match_rate": prefix / n}


def update_round(prev_ckpt: Checkpoint, new_export_path: str | Path,
                 config: TrainConfig,
                 out_path: Optional[str | Path] = None
                 ) -> tuple[Checkpoint, dict]:
    """Incremental round update: train on the new export only, starting from
    the previous checkpoint, and measure retention of the previous round."""
    manifest = read_manifest(manifest_for(new_export_path))
    export_round = int(manifest["round"])
    if export_round != prev_ckpt.round + 1:
        raise RoundMismatch(
            f"export is round {export_round} but the checkpoint is round "
            f"{prev_ckpt.round}; expected round {prev_ckpt.round + 1}")
    pairs = load_pairs(new_export_path)

    _model, prev_payload = load_checkpoint(prev_ckpt.path)
    prev_pairs = [tuple(p) for p in prev_payload.get("train_pairs", [])]

    new_ckpt, metrics = fine_tune(prev_ckpt, pairs, config, out_path=out_path)
    if prev_pairs:
        retention = evaluate(new_ckpt, prev_pairs)
        metrics["retention_exact_match"] = retention["exact_match_rate"]
        metrics["retention_mean_target_nll"] = retention["mean_target_nll"]
    else:
        metrics["retention_exact_match"] = None
        metrics["retention_mean_target_nll"] = None
    return new_ckpt, metrics
