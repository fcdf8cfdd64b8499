"""Analytic parameter/MAC accounting and per-stage wall-clock attribution.

Counting conventions: token and position embedding tables and the MLM
head are not counted as parameters.  One MAC is one multiply-accumulate
inside a parameter-bearing linear map; the encoder's query-key and
probability-value products are left out, as are embedding lookups.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field

import torch

from .aggregator import VARIANTS, PromptClassifier, attend, classify, gather_knowledge
from .encoder import EncoderConfig
from .errors import UsageError
from .prompt import PromptTemplate, encode_prompt, encode_text
from .tokenizer import Vocabulary


@dataclass
class CostReport:
    variant: str
    seq_len: int
    params: dict[str, int] = field(default_factory=dict)
    macs: dict[str, int] = field(default_factory=dict)

    @property
    def params_total(self) -> int:
        return sum(self.params.values())

    @property
    def macs_total(self) -> int:
        return sum(self.macs.values())

    @property
    def params_millions(self) -> float:
        return self.params_total / 1e6

    @property
    def macs_giga(self) -> float:
        return self.macs_total / 1e9

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(params_total=self.params_total, macs_total=self.macs_total,
                   params_millions=self.params_millions, macs_giga=self.macs_giga)
        return out


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}")


def _lstm_params(d_in: int, hidden: int, layers: int) -> int:
    total, width = 0, d_in
    for _ in range(layers):
        # two directions, each with input and recurrent weights plus two bias vectors
        total += 2 * (4 * hidden * (width + hidden) + 8 * hidden)
        width = 2 * hidden
    return total


def _lstm_macs_per_step(d_in: int, hidden: int, layers: int) -> int:
    total, width = 0, d_in
    for _ in range(layers):
        total += 2 * 4 * hidden * (width + hidden)
        width = 2 * hidden
    return total


def count_params(config: EncoderConfig, variant: str = "full", n_classes: int = 19,
                 attn_projection: bool = False, lstm_layers: int = 2) -> CostReport:
    _check_variant(variant)
    d, f, L = config.d_model, config.d_ffn, config.n_layers
    params = {
        "encoder.attention": L * 4 * (d * d + d),
        "encoder.ffn": L * (d * f + f + f * d + d),
        "encoder.norm": L * 4 * d,
    }
    head_in = d
    if variant in ("no_attention", "no_attention_no_prompt"):
        params["fc"] = d * d + d
    if variant == "with_bilstm":
        params["bilstm"] = _lstm_params(d, d, lstm_layers)
        head_in = 2 * d
    if variant in ("full", "with_bilstm"):
        params["head.context"] = head_in
        if attn_projection:
            params["head.projection"] = head_in * head_in + head_in
    params["head.classifier"] = n_classes * head_in + n_classes
    return CostReport(variant, 0, params=params)


def count_macs(config: EncoderConfig, variant: str = "full", seq_len: int = 256,
               n_classes: int = 19, n_knowledge: int | None = None,
               attn_projection: bool = False, lstm_layers: int = 2) -> CostReport:
    """MACs for one sequence of ``seq_len`` positions.

    The recurrent stage runs over the ``n_knowledge`` selected layers, one
    timestep each, not over the token positions.
    """
    _check_variant(variant)
    if seq_len < 0:
        raise ValueError("seq_len must be >= 0")
    d, f, L = config.d_model, config.d_ffn, config.n_layers
    k = n_knowledge if n_knowledge is not None else L - min(2, L) + 1
    report = count_params(config, variant, n_classes, attn_projection, lstm_layers)
    report.seq_len = seq_len
    if seq_len == 0:
        report.macs = {stage: 0 for stage in ("encoder.attention", "encoder.ffn", "head.classifier")}
        return report
    macs = {
        "encoder.attention": seq_len * L * 4 * d * d,
        "encoder.ffn": seq_len * L * 2 * d * f,
    }
    head_in = d
    if variant in ("no_attention", "no_attention_no_prompt"):
        macs["fc"] = d * d
    if variant == "with_bilstm":
        macs["bilstm"] = k * _lstm_macs_per_step(d, d, lstm_layers)
        head_in = 2 * d
    if variant in ("full", "with_bilstm"):
        macs["head.context"] = k * head_in
        if attn_projection:
            macs["head.projection"] = k * head_in * head_in
    macs["head.classifier"] = n_classes * head_in
    report.macs = macs
    return report


def reduction(reference: CostReport, this: CostReport) -> dict[str, float]:
    """Percentage saved by ``this`` relative to ``reference``."""
    return {
        "params_pct": 100.0 * (reference.params_total - this.params_total) / reference.params_total,
        "macs_pct": 100.0 * (reference.macs_total - this.macs_total) / reference.macs_total,
    }


def format_cost_table(reports: list[CostReport], reference: CostReport) -> str:
    head = ("Model", "Parameters(M)", "Comp Costs(GFLOPs)", "Reduced Parameters (%)",
            "Reduced Comp Costs (%)")
    rows = []
    for r in reports:
        red = reduction(reference, r)
        rows.append((r.variant, f"{r.params_millions:.2f}", f"{r.macs_giga:.2f}",
                     f"{red['params_pct']:.2f}", f"{red['macs_pct']:.2f}"))
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + "\n"


# -- wall clock ---------------------------------------------------------------

STAGES = ("tokenize_wrap", "encode", "recurrent", "attend_classify")


@dataclass
class TimeReport:
    variant: str
    groups: int
    repeats: int
    stage_ms: dict[str, float]  # mean per group, summed over repeats
    total_ms: float
    shares: dict[str, float]
    share_cv: dict[str, float]  # coefficient of variation of each share across groups

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [f"{'Stage':<16} {'Time(ms)':>12} {'Percentage(%)':>14}"]
        for s in STAGES:
            lines.append(f"{s:<16} {self.stage_ms[s]:>12.3f} {100 * self.shares[s]:>14.2f}")
        lines.append(f"{'total':<16} {self.total_ms:>12.3f} {100.0:>14.2f}")
        return "\n".join(lines) + "\n"


def time_breakdown(model: PromptClassifier, vocab: Vocabulary, template: PromptTemplate | None,
                   example: str, groups: int = 10, repeats: int = 1000, warmup: int = 10,
                   max_len: int | None = None) -> TimeReport:
    """Repeat single-example inference and attribute wall-clock time to stages."""
    if groups < 1 or repeats < 1:
        raise ValueError("groups and repeats must be >= 1")
    n = max_len or model.config.max_len
    clock = time.perf_counter_ns
    resolution_ns = time.get_clock_info("perf_counter").resolution * 1e9

    def run_once(acc):
        t0 = clock()
        if model.uses_prompt:
            ids, valid, mpos = encode_prompt(vocab, template, example, n)
        else:
            (ids, valid), mpos = encode_text(vocab, example, n), 0
        ids_t = torch.tensor([ids])
        valid_t = torch.tensor([valid])
        mpos_t = torch.tensor([mpos])
        t1 = clock()
        states = model.encoder(ids_t, valid_t)
        t2 = clock()
        if model.variant == "with_bilstm":
            rows = gather_knowledge(states, mpos_t, model.layer_ids)
            rows, _ = model.bilstm(rows)
            t3 = clock()
            _, pooled = attend(model.head, rows)
            classify(model.head, pooled)
        else:
            t3 = t2
            pooled = model.pool(states, mpos_t)["pooled"]
            classify(model.head, pooled)
        t4 = clock()
        if acc is not None:
            for s, dt in zip(STAGES, (t1 - t0, t2 - t1, t3 - t2, t4 - t3)):
                acc[s] += dt

    was_training = model.training
    threads = torch.get_num_threads()
    model.eval()
    torch.set_num_threads(1)
    try:
        with torch.no_grad():
            for _ in range(warmup):
                run_once(None)
            per_group = []
            for _ in range(groups):
                acc = dict.fromkeys(STAGES, 0)
                for _ in range(repeats):
                    run_once(acc)
                per_group.append(acc)
    finally:
        torch.set_num_threads(threads)
        model.train(was_training)

    per_repeat_ns = statistics.fmean(sum(g.values()) for g in per_group) / repeats
    if per_repeat_ns <= resolution_ns:
        raise UsageError("timer resolution is coarser than one repeat; increase repeats")
    stage_ms = {s: statistics.fmean(g[s] for g in per_group) / 1e6 for s in STAGES}
    total_ms = sum(stage_ms.values())
    shares = {s: stage_ms[s] / total_ms for s in STAGES}
    share_cv = {}
    for s in STAGES:
        vals = [g[s] / sum(g.values()) for g in per_group]
        mu = statistics.fmean(vals)
        share_cv[s] = statistics.pstdev(vals) / mu if mu > 0 else 0.0
    return TimeReport(model.variant, groups, repeats, stage_ms, total_ms, shares, share_cv)
