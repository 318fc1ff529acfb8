"""Small causal transformer language models with seeded construction.

The registry maps a base-model id to a fixed architecture; a "base model" is
the architecture plus its deterministic initialization seed, so two inits with
the same (id, seed) produce byte-identical parameters. Attention is written
out explicitly so the model runs unchanged in float64 for gradient checks.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ModelUnavailable


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int
    d_model: int
    n_heads: int
    n_layers: int
    max_positions: int


REGISTRY: dict[str, ModelSpec] = {
    "tiny-gpt": ModelSpec(vocab_size=258, d_model=128, n_heads=4,
                          n_layers=2, max_positions=512),
    "micro-gpt-64": ModelSpec(vocab_size=64, d_model=32, n_heads=2,
                              n_layers=2, max_positions=128),
}


class CausalSelfAttention(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        assert spec.d_model % spec.n_heads == 0
        self.n_heads = spec.n_heads
        self.head_dim = spec.d_model // spec.n_heads
        self.qkv = nn.Linear(spec.d_model, 3 * spec.d_model)
        self.proj = nn.Linear(spec.d_model, spec.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, c = x.shape
        q, k, v = self.qkv(x).split(c, dim=2)
        shape = (b, t, self.n_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), 1)
        att = att.masked_fill(mask, float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).contiguous().view(b, t, c)
        return self.proj(y)


class Block(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.ln1 = nn.LayerNorm(spec.d_model)
        self.attn = CausalSelfAttention(spec)
        self.ln2 = nn.LayerNorm(spec.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(spec.d_model, 4 * spec.d_model),
            nn.GELU(),
            nn.Linear(4 * spec.d_model, spec.d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class TinyGpt(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.tok_emb = nn.Embedding(spec.vocab_size, spec.d_model)
        self.pos_emb = nn.Embedding(spec.max_positions, spec.d_model)
        self.blocks = nn.ModuleList(Block(spec) for _ in range(spec.n_layers))
        self.ln_f = nn.LayerNorm(spec.d_model)
        self.head = nn.Linear(spec.d_model, spec.vocab_size, bias=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        t = ids.shape[1]
        if t > self.spec.max_positions:
            raise ValueError(f"sequence length {t} exceeds "
                             f"{self.spec.max_positions} positions")
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))


def build_model(model_id: str, seed: int) -> TinyGpt:
    spec = REGISTRY.get(model_id)
    if spec is None:
        raise ModelUnavailable(f"unknown base model id {model_id!r}; "
                               f"known: {sorted(REGISTRY)}")
    torch.manual_seed(seed)
    return TinyGpt(spec)


def param_digest(model: nn.Module) -> str:
    hasher = hashlib.sha256()
    for name, param in sorted(model.state_dict().items()):
        hasher.update(name.encode("utf-8"))
        hasher.update(param.detach().cpu().to(torch.float32).numpy().tobytes())
    return hasher.hexdigest()
