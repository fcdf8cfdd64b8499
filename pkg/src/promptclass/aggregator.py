"""Layer-wise [MASK] features, attention pooling, and the classifier variants.

For a prompt-wrapped input the hidden vector at the mask position is
taken from every selected layer.  The rows are scored with
``tanh(row) . context_vector``, softmax-normalised across layers, and the
raw rows (not their tanh) are summed with those weights.  The pooled
vector goes through ReLU and then a single linear map.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .encoder import Encoder, EncoderConfig, HiddenStack
from .errors import UsageError

VARIANTS = ("full", "no_attention", "no_attention_no_prompt", "with_bilstm")


@dataclass
class KnowledgeFeatures:
    rows: Tensor  # (..., K, d_model)
    layer_ids: tuple[int, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.layer_ids, self.layer_ids[1:])):
            raise ValueError("layer_ids must be strictly increasing")
        if self.rows.shape[-2] != len(self.layer_ids):
            raise ValueError("row count does not match layer_ids")


def parse_layer_range(text: str) -> tuple[int, int]:
    """``"2..12"`` -> (2, 12), inclusive."""
    lo, sep, hi = text.partition("..")
    try:
        if not sep:
            raise ValueError
        start, stop = int(lo), int(hi)
    except ValueError:
        raise UsageError(f"layer range must look like A..B, got {text!r}") from None
    return start, stop


def resolve_layers(layer_range: tuple[int, int] | None, n_layers: int) -> tuple[int, ...]:
    """Validate an inclusive range against an encoder with ``n_layers`` blocks.

    ``None`` means layer 2 (or the last layer if shallower) through the last.
    """
    if layer_range is None:
        layer_range = (min(2, n_layers), n_layers)
    start, stop = layer_range
    if start > stop:
        raise ValueError(f"empty layer range {start}..{stop}")
    if start < 0 or stop > n_layers:
        raise ValueError(f"layer range {start}..{stop} outside 0..{n_layers}")
    return tuple(range(start, stop + 1))


def extract_knowledge(stack: HiddenStack, mask_pos: int,
                      layer_range: tuple[int, int]) -> KnowledgeFeatures:
    if not 0 <= mask_pos < stack.valid_length:
        raise IndexError(f"mask position {mask_pos} outside valid length {stack.valid_length}")
    layer_ids = resolve_layers(layer_range, stack.n_layers)
    rows = stack.states[list(layer_ids), mask_pos]
    return KnowledgeFeatures(rows, layer_ids)


def gather_knowledge(states: Tensor, mask_pos: Tensor, layer_ids: tuple[int, ...]) -> Tensor:
    """Batched form: states (B, L+1, N, d), mask_pos (B,) -> (B, K, d)."""
    batch = torch.arange(states.shape[0], device=states.device)
    picked = states[batch, :, mask_pos]  # (B, L+1, d)
    return picked[:, list(layer_ids)]


class AttentionHead(nn.Module):
    """Context vector plus the linear classifier that follows pooling."""

    def __init__(self, d_in: int, n_classes: int, projection: bool = False, attention: bool = True):
        super().__init__()
        if n_classes < 2:
            raise ValueError("need at least two classes")
        if attention:
            self.context_vector = nn.Parameter(torch.empty(d_in).uniform_(-0.1, 0.1))
        else:
            self.register_parameter("context_vector", None)
        self.classifier = nn.Linear(d_in, n_classes)
        # optional W x + b before tanh; off by default
        self.projection = nn.Linear(d_in, d_in) if projection else None

    @property
    def n_classes(self) -> int:
        return self.classifier.out_features


def softmax(scores: Tensor) -> Tensor:
    shifted = scores - scores.max(dim=-1, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def attention_scores(head: AttentionHead, rows: Tensor) -> Tensor:
    h = head.projection(rows) if head.projection is not None else rows
    return torch.tanh(h) @ head.context_vector


def attend(head: AttentionHead, k: KnowledgeFeatures | Tensor) -> tuple[Tensor, Tensor]:
    rows = k.rows if isinstance(k, KnowledgeFeatures) else k
    alphas = softmax(attention_scores(head, rows))
    pooled = (alphas.unsqueeze(-1) * rows).sum(dim=-2)
    return alphas, pooled


def classify(head: AttentionHead, pooled: Tensor) -> Tensor:
    return head.classifier(torch.relu(pooled))


def predict(logits) -> int | Tensor:
    """Index of the largest logit, lowest index on ties."""
    if not isinstance(logits, Tensor):
        logits = torch.as_tensor(logits, dtype=torch.float64)
    if logits.ndim == 1:
        best = 0
        for i in range(1, logits.shape[0]):
            if logits[i] > logits[best]:
                best = i
        return best
    # torch.argmax documents first-occurrence on ties
    return torch.argmax(logits, dim=-1)


class PromptClassifier(nn.Module):
    """Encoder plus one of the aggregation variants."""

    def __init__(self, cfg: EncoderConfig, n_classes: int, variant: str = "full",
                 layer_range: tuple[int, int] | None = None, attn_projection: bool = False,
                 lstm_layers: int = 2):
        super().__init__()
        if variant not in VARIANTS:
            raise UsageError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
        self.variant = variant
        self.n_classes = n_classes
        self.attn_projection = attn_projection
        self.layer_ids = resolve_layers(layer_range, cfg.n_layers)
        self.encoder = Encoder(cfg)
        d = cfg.d_model
        self.fc = nn.Linear(d, d) if variant in ("no_attention", "no_attention_no_prompt") else None
        self.bilstm = (nn.LSTM(d, d, num_layers=lstm_layers, bidirectional=True, batch_first=True)
                       if variant == "with_bilstm" else None)
        head_width = 2 * d if variant == "with_bilstm" else d
        attention = variant in ("full", "with_bilstm")
        self.head = AttentionHead(head_width, n_classes, projection=attn_projection and attention,
                                  attention=attention)

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    @property
    def uses_prompt(self) -> bool:
        return self.variant != "no_attention_no_prompt"

    @property
    def layer_range(self) -> tuple[int, int]:
        return self.layer_ids[0], self.layer_ids[-1]

    def pool(self, states: Tensor, mask_pos: Tensor) -> dict[str, Tensor]:
        if self.variant == "no_attention_no_prompt":
            return {"pooled": self.fc(states[:, -1, 0])}
        rows = gather_knowledge(states, mask_pos, self.layer_ids)
        if self.variant == "no_attention":
            return {"pooled": self.fc(rows.mean(dim=1))}
        if self.bilstm is not None:
            rows, _ = self.bilstm(rows)
        alphas, pooled = attend(self.head, rows)
        return {"pooled": pooled, "alphas": alphas}

    def forward(self, ids: Tensor, valid_length: Tensor, mask_pos: Tensor) -> Tensor:
        return self.forward_details(ids, valid_length, mask_pos)["logits"]

    def forward_details(self, ids: Tensor, valid_length: Tensor, mask_pos: Tensor) -> dict[str, Tensor]:
        states = self.encoder(ids, valid_length)
        out = self.pool(states, mask_pos)
        out["logits"] = classify(self.head, out["pooled"])
        return out


def forward_variant(model: PromptClassifier, ids: Tensor, valid_length: Tensor,
                    mask_pos: Tensor) -> Tensor:
    return model(ids, valid_length, mask_pos)
