"""Bidirectional post-LN transformer encoder that exposes every layer's output."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import NumericError


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 2000
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ffn: int = 128
    max_len: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


BASE_CONFIG = EncoderConfig(vocab_size=50265, d_model=768, n_layers=12, n_heads=12,
                            d_ffn=3072, max_len=514, dropout_rate=0.1)


@dataclass
class HiddenStack:
    """Per-layer states for one sequence, shape (n_layers + 1, N, d_model)."""

    states: Tensor
    valid_length: int

    @property
    def n_layers(self) -> int:
        return self.states.shape[0] - 1


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.output = nn.Linear(d, d)
        self.attn_norm = nn.LayerNorm(d)
        self.ffn_in = nn.Linear(d, cfg.d_ffn)
        self.ffn_out = nn.Linear(cfg.d_ffn, d)
        self.ffn_norm = nn.LayerNorm(d)
        self.dropout = nn.Dropout(cfg.dropout_rate)

    def forward(self, x: Tensor, key_mask: Tensor) -> Tensor:
        # x: (B, N, d); key_mask: (B, N) True where the position may be attended
        b, n, d = x.shape
        h = self.n_heads

        def split(t):
            return t.view(b, n, h, d // h).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        probs = self.dropout(torch.softmax(scores, dim=-1))
        ctx = (probs @ v).transpose(1, 2).reshape(b, n, d)
        x = self.attn_norm(x + self.dropout(self.output(ctx)))
        ff = self.ffn_out(F.gelu(self.ffn_in(x)))
        return self.ffn_norm(x + self.dropout(ff))


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.config = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.position_embedding = nn.Embedding(cfg.max_len, cfg.d_model)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.mlm_head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        nn.init.normal_(self.token_embedding.weight, std=0.02)
        nn.init.normal_(self.position_embedding.weight, std=0.02)

    def embed(self, ids: Tensor) -> Tensor:
        n = ids.shape[-1]
        if n > self.config.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.config.max_len}")
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size):
            raise ValueError(f"token id out of range [0, {self.config.vocab_size})")
        pos = torch.arange(n, device=ids.device)
        return self.token_embedding(ids) + self.position_embedding(pos)

    def forward(self, ids: Tensor, valid_length: Tensor) -> Tensor:
        """Batched hidden states, shape (B, n_layers + 1, N, d_model)."""
        x = self.embed(ids)
        key_mask = torch.arange(ids.shape[1], device=ids.device)[None, :] < valid_length[:, None]
        states = [x]
        for i, layer in enumerate(self.layers, 1):
            x = layer(x, key_mask)
            if not torch.isfinite(x).all():
                raise NumericError(f"numeric overflow in encoder layer {i}")
            states.append(x)
        return torch.stack(states, dim=1)


def embed(params: Encoder, ids) -> Tensor:
    return params.embed(torch.as_tensor(ids, dtype=torch.long))


def encode(params: Encoder, ids, valid_length: int) -> HiddenStack:
    ids = torch.as_tensor(ids, dtype=torch.long)
    if valid_length > ids.shape[0]:
        raise ValueError("valid_length exceeds sequence length")
    states = params(ids[None, :], torch.tensor([valid_length]))[0]
    return HiddenStack(states, valid_length)


def mlm_logits(params: Encoder, stack: HiddenStack | Tensor) -> Tensor:
    states = stack.states if isinstance(stack, HiddenStack) else stack
    if states.shape[-1] != params.config.d_model:
        raise ValueError(f"hidden width {states.shape[-1]} != d_model {params.config.d_model}")
    if isinstance(stack, HiddenStack):
        return params.mlm_head(states[-1])
    return params.mlm_head(states)
