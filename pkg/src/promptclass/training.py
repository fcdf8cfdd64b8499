"""Gradients, gradient verification, MLM pretraining and classifier fine-tuning."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .aggregator import PromptClassifier, predict
from .data import LabeledExample
from .encoder import Encoder
from .errors import DataError, NumericError
from .metrics import MetricsReport, score
from .prompt import PromptTemplate, encode_prompt, encode_text
from .tokenizer import Vocabulary

HISTORY_FIELDS = ("epoch", "split", "loss", "accuracy", "macro_p", "macro_r", "macro_f1")


@dataclass
class TrainConfig:
    learning_rate: float = 2e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    weight_decay: float = 0.01
    freeze_backbone: bool = False
    variant: str = "full"
    n_seeds: int = 5
    warmup_fraction: float = 0.1
    mask_rate: float = 0.15

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncodedData:
    ids: Tensor        # (M, N) long
    valid: Tensor      # (M,)
    mask_pos: Tensor   # (M,)
    labels: Tensor     # (M,)
    example_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.ids.shape[0]

    def batch(self, index: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        valid = self.valid[index]
        n = int(valid.max())  # trailing padding never reaches valid positions
        return self.ids[index, :n], valid, self.mask_pos[index], self.labels[index]


def encode_examples(vocab: Vocabulary, examples: Sequence[LabeledExample],
                    template: PromptTemplate | None, max_len: int) -> EncodedData:
    """Tokenise examples; ``template=None`` feeds the raw text (mask_pos = CLS)."""
    ids, valid, mpos = [], [], []
    for e in examples:
        if template is None:
            (row, n), m = encode_text(vocab, e.text, max_len), 0
        else:
            try:
                row, n, m = encode_prompt(vocab, template, e.text, max_len)
            except DataError as exc:
                raise DataError(f"example {e.id}: {exc}") from None
        ids.append(row)
        valid.append(n)
        mpos.append(m)
    return EncodedData(torch.tensor(ids, dtype=torch.long).reshape(len(ids), max_len),
                       torch.tensor(valid, dtype=torch.long),
                       torch.tensor(mpos, dtype=torch.long),
                       torch.tensor([e.label for e in examples], dtype=torch.long),
                       [e.id for e in examples])


# -- gradients ------------------------------------------------------------------

def _named(params: nn.Module | dict[str, Tensor]) -> dict[str, Tensor]:
    if isinstance(params, nn.Module):
        return {n: p for n, p in params.named_parameters() if p.requires_grad}
    return dict(params)


def grad(loss_fn: Callable[[], Tensor], params: nn.Module | dict[str, Tensor]) -> dict[str, Tensor]:
    """Reverse-mode gradient of ``loss_fn()`` for every trainable tensor.

    Tensors that the loss does not touch get zeros.
    """
    named = _named(params)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(named.values()), allow_unused=True)
    out = {}
    for (name, p), g in zip(named.items(), grads):
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
        out[name] = g
    return out


def finite_difference(loss_fn: Callable[[], Tensor], params: nn.Module | dict[str, Tensor],
                      coords: dict[str, Iterable[int]], step: float = 1e-5) -> dict[str, Tensor]:
    """Central differences at the given flat coordinates of each named tensor."""
    named = _named(params)
    out = {}
    with torch.no_grad():
        for name, idx in coords.items():
            flat = named[name].view(-1)
            vals = []
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                vals.append((up - down) / (2 * step))
            out[name] = torch.tensor(vals, dtype=torch.float64)
    return out


def gradient_check(model: nn.Module, loss_fn: Callable[[], Tensor], coords_per_tensor: int = 3,
                   step: float = 1e-5, seed: int = 0, floor: float = 1e-6) -> dict[str, float]:
    """Relative error between analytic and finite-difference gradients per tensor.

    Samples the largest-magnitude coordinate plus random ones.  Errors are
    ``|a - n| / max(|a|, |n|, floor)`` over the sampled coordinates.
    """
    analytic = grad(loss_fn, model)
    gen = torch.Generator().manual_seed(seed)
    coords = {}
    for name, g in analytic.items():
        flat = g.reshape(-1)
        picks = [int(flat.abs().argmax())]
        picks += torch.randperm(flat.numel(), generator=gen)[: coords_per_tensor - 1].tolist()
        coords[name] = sorted(set(picks))
    numeric = finite_difference(loss_fn, model, coords, step)
    errors = {}
    for name, idx in coords.items():
        a = analytic[name].reshape(-1)[idx].to(torch.float64)
        n = numeric[name]
        denom = max(a.norm().item(), n.norm().item(), floor)
        errors[name] = (a - n).norm().item() / denom
    return errors


# -- optimisation -----------------------------------------------------------------

def _optimizer(named: dict[str, Tensor], cfg: TrainConfig, total_steps: int):
    decay = [p for p in named.values() if p.ndim >= 2]
    no_decay = [p for p in named.values() if p.ndim < 2]
    opt = torch.optim.AdamW([{"params": decay, "weight_decay": cfg.weight_decay},
                             {"params": no_decay, "weight_decay": 0.0}],
                            lr=cfg.learning_rate)
    warmup = max(1, round(cfg.warmup_fraction * total_steps))
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda step: min(1.0, (step + 1) / warmup))
    return opt, sched


def _step(loss: Tensor, named: dict[str, Tensor], opt, sched) -> None:
    opt.zero_grad(set_to_none=True)
    loss.backward()
    for name, p in named.items():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient for {name}")
    opt.step()
    sched.step()


def mask_tokens(ids: Tensor, valid: Tensor, special_ids: Iterable[int], mask_id: int,
                rate: float, generator: torch.Generator) -> tuple[Tensor, Tensor, int]:
    """Replace ``rate`` of each sequence's maskable positions by MASK.

    Returns (masked ids, boolean target mask, number of skipped sequences).
    """
    special = torch.tensor(sorted(special_ids))
    maskable = ~torch.isin(ids, special)
    maskable &= torch.arange(ids.shape[1])[None, :] < valid[:, None]
    masked = ids.clone()
    target = torch.zeros_like(ids, dtype=torch.bool)
    skipped = 0
    for row in range(ids.shape[0]):
        cand = maskable[row].nonzero().flatten()
        if cand.numel() == 0:
            skipped += 1
            continue
        k = max(1, round(rate * cand.numel()))
        chosen = cand[torch.randperm(cand.numel(), generator=generator)[:k]]
        target[row, chosen] = True
        masked[row, chosen] = mask_id
    return masked, target, skipped


@dataclass
class MLMHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    skipped: int = 0
    steps: int = 0


def pretrain_mlm(encoder: Encoder, vocab: Vocabulary, corpus: Sequence[str], cfg: TrainConfig,
                 max_len: int | None = None) -> tuple[Encoder, MLMHistory]:
    """Masked-token pretraining: all selected positions become MASK, loss on those only."""
    n = max_len or encoder.config.max_len
    encoded = [encode_text(vocab, t, n) for t in corpus]
    ids = torch.tensor([e[0] for e in encoded], dtype=torch.long).reshape(len(encoded), n)
    valid = torch.tensor([e[1] for e in encoded], dtype=torch.long)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    named = _named(encoder)
    steps_per_epoch = math.ceil(len(corpus) / cfg.batch_size)
    opt, sched = _optimizer(named, cfg, max(1, cfg.epochs * steps_per_epoch))
    history = MLMHistory()
    encoder.train()
    for _ in range(cfg.epochs):
        perm = torch.randperm(len(corpus), generator=gen)
        total, correct, count = 0.0, 0, 0
        for start in range(0, len(corpus), cfg.batch_size):
            index = perm[start : start + cfg.batch_size]
            b_valid = valid[index]
            b_ids = ids[index, : int(b_valid.max())]
            masked, target, skipped = mask_tokens(b_ids, b_valid, vocab.special_ids, vocab.mask_id,
                                                  cfg.mask_rate, gen)
            history.skipped += skipped
            if not target.any():
                continue
            logits = encoder.mlm_head(encoder(masked, b_valid)[:, -1])[target]
            gold = b_ids[target]
            loss = F.cross_entropy(logits, gold)
            _step(loss, named, opt, sched)
            history.steps += 1
            total += loss.item() * gold.numel()
            correct += int((logits.argmax(-1) == gold).sum())
            count += gold.numel()
        history.loss.append(total / count if count else float("nan"))
        history.accuracy.append(correct / count if count else 0.0)
    encoder.eval()
    return encoder, history


@torch.no_grad()
def mlm_accuracy(encoder: Encoder, vocab: Vocabulary, corpus: Sequence[str], seed: int = 0,
                 rate: float = 0.15, max_len: int | None = None) -> float:
    n = max_len or encoder.config.max_len
    encoded = [encode_text(vocab, t, n) for t in corpus]
    ids = torch.tensor([e[0] for e in encoded], dtype=torch.long).reshape(len(encoded), n)
    valid = torch.tensor([e[1] for e in encoded], dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    masked, target, _ = mask_tokens(ids, valid, vocab.special_ids, vocab.mask_id, rate, gen)
    encoder.eval()
    pred = encoder.mlm_head(encoder(masked, valid)[:, -1]).argmax(-1)
    return float((pred[target] == ids[target]).float().mean()) if target.any() else 0.0


# -- classification --------------------------------------------------------------

@torch.no_grad()
def evaluate(model: PromptClassifier, data: EncodedData, batch_size: int = 256
             ) -> tuple[MetricsReport, list[int], float]:
    """Returns (metrics, predictions, mean cross-entropy)."""
    was_training = model.training
    model.eval()
    preds, total = [], 0.0
    for start in range(0, len(data), batch_size):
        index = torch.arange(start, min(start + batch_size, len(data)))
        ids, valid, mpos, labels = data.batch(index)
        logits = model(ids, valid, mpos)
        total += F.cross_entropy(logits, labels, reduction="sum").item()
        preds.extend(predict(logits).tolist())
    model.train(was_training)
    report = score(data.labels.tolist(), preds, model.n_classes)
    return report, preds, total / max(1, len(data))


def _check_labels(data: EncodedData, n_classes: int) -> None:
    bad = ((data.labels < 0) | (data.labels >= n_classes)).nonzero().flatten()
    if bad.numel():
        i = int(bad[0])
        name = data.example_ids[i] if data.example_ids else str(i)
        raise DataError(f"example {name}: label {int(data.labels[i])} outside [0, {n_classes})")


def train_classifier(model: PromptClassifier, train: EncodedData, cfg: TrainConfig,
                     eval_data: EncodedData | None = None, seed: int | None = None
                     ) -> tuple[PromptClassifier, list[dict]]:
    """Single-stage cross-entropy training of encoder and head together.

    With ``cfg.freeze_backbone`` only the head-side tensors are updated.
    """
    seed = cfg.seed if seed is None else seed
    _check_labels(train, model.n_classes)
    if eval_data is not None:
        _check_labels(eval_data, model.n_classes)
    if cfg.freeze_backbone:
        for p in model.encoder.parameters():
            p.requires_grad_(False)
    named = _named(model)
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    opt, sched = _optimizer(named, cfg, max(1, cfg.epochs * steps_per_epoch))
    history: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = torch.randperm(len(train), generator=gen)
        total = 0.0
        for start in range(0, len(train), cfg.batch_size):
            ids, valid, mpos, labels = train.batch(perm[start : start + cfg.batch_size])
            loss = F.cross_entropy(model(ids, valid, mpos), labels)
            _step(loss, named, opt, sched)
            total += loss.item() * labels.numel()
        report, _, _ = evaluate(model, train)
        history.append({"epoch": epoch, "split": "train", "loss": total / len(train),
                        **report.headline()})
        if eval_data is not None:
            report, _, eval_loss = evaluate(model, eval_data)
            history.append({"epoch": epoch, "split": "test", "loss": eval_loss, **report.headline()})
    model.eval()
    return model, history


@dataclass
class SeedRun:
    seed: int
    model: PromptClassifier
    history: list[dict]
    report: MetricsReport | None
    predictions: list[int] = field(default_factory=list)


def train_seeds(build_model: Callable[[int], PromptClassifier], train: EncodedData,
                cfg: TrainConfig, eval_data: EncodedData | None = None) -> list[SeedRun]:
    """Independent runs with seeds ``cfg.seed + i`` for i < ``cfg.n_seeds``."""
    runs = []
    for i in range(cfg.n_seeds):
        seed = cfg.seed + i
        torch.manual_seed(seed)
        model = build_model(seed)
        model, history = train_classifier(model, train, cfg, eval_data, seed=seed)
        report, preds = None, []
        if eval_data is not None:
            report, preds, _ = evaluate(model, eval_data)
        runs.append(SeedRun(seed, model, history, report, preds))
    return runs


def write_history(history: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: (f"{row[k]:.10g}" if isinstance(row[k], float) else row[k])
                             for k in HISTORY_FIELDS})
