"""Command-line entry point.

Each command writes JSON (and CSV where tabular) into ``--out`` plus a
plain-text table that is also echoed to stdout.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import torch
from filelock import FileLock, Timeout

from . import plotting
from .aggregator import VARIANTS, PromptClassifier, parse_layer_range, resolve_layers
from .checkpoint import load_encoder_weights, load_model, save_model
from .config import RunConfig, resolve
from .data import (TOY_TASK_ALIASES, Dataset, compute_stats, load_dataset, make_toy_corpus,
                   save_label_map, split_manifest, stratified_split)
from .encoder import BASE_CONFIG, Encoder, EncoderConfig
from .errors import DataError, NumericError, UsageError
from .metrics import aggregate, format_table, write_report
from .profiler import count_macs, format_cost_table, reduction, time_breakdown
from .prompt import PromptTemplate, default_template, get_template, wrap
from .tokenizer import Vocabulary, train_vocab
from .training import (EncodedData, TrainConfig, encode_examples, evaluate, pretrain_mlm,
                       train_seeds, write_history)

log = logging.getLogger("promptclass")

COMMANDS = ("vocab", "pretrain", "train", "eval", "ablate", "sweep-layers", "stats",
            "attention-report", "profile", "time")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="promptclass", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            if f.type == "bool":
                p.add_argument(flag, dest=f.name, action="store_const", const="true", default=None)
                p.add_argument("--no-" + f.name.replace("_", "-"), dest=f.name,
                               action="store_const", const="false", help=argparse.SUPPRESS)
            else:
                p.add_argument(flag, dest=f.name, default=None)
    return parser


# -- shared plumbing --------------------------------------------------------------

def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(text: str, path: Path) -> None:
    path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _load_data(rc: RunConfig) -> Dataset:
    if rc.data:
        return load_dataset(rc.data, rc.format)
    if rc.task in TOY_TASK_ALIASES:
        return make_toy_corpus(rc.task, rc.n_per_class, rc.seed)
    raise UsageError(f"task {rc.task!r} needs --data")


def _template(rc: RunConfig) -> PromptTemplate:
    return get_template(rc.template) if rc.template else default_template(rc.task)


def _layer_range(rc: RunConfig) -> tuple[int, int] | None:
    return parse_layer_range(rc.layers) if rc.layers else None


def _vocab(rc: RunConfig, texts: list[str]) -> Vocabulary:
    if rc.vocab:
        return Vocabulary.load(rc.vocab)
    return train_vocab(texts, rc.vocab_size)


def _encoder_config(rc: RunConfig, vocab_size: int) -> EncoderConfig:
    try:
        return EncoderConfig(vocab_size=vocab_size, d_model=rc.d_model, n_layers=rc.n_layers,
                             n_heads=rc.n_heads, d_ffn=rc.d_ffn, max_len=rc.max_len,
                             dropout_rate=rc.dropout)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _train_config(rc: RunConfig, variant: str | None = None) -> TrainConfig:
    try:
        return TrainConfig(learning_rate=rc.learning_rate, batch_size=rc.batch_size,
                           epochs=rc.epochs, seed=rc.seed, weight_decay=rc.weight_decay,
                           freeze_backbone=rc.freeze_backbone, variant=variant or rc.variant,
                           n_seeds=rc.seeds)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


class _Prepared:
    """Dataset split, vocabulary and encoded tensors shared by training commands."""

    def __init__(self, rc: RunConfig):
        self.rc = rc
        self.dataset = _load_data(rc)
        self.train, self.test = stratified_split(self.dataset, rc.ratio, rc.seed)
        self.template = _template(rc)
        self.vocab = _vocab(rc, [wrap(self.template, e.text) for e in self.train])
        self.n_classes = self.dataset.n_classes
        if self.n_classes < 2:
            raise DataError("need at least two classes")
        self._encoded: dict[bool, tuple[EncodedData, EncodedData]] = {}

    def encoded(self, use_prompt: bool) -> tuple[EncodedData, EncodedData]:
        if use_prompt not in self._encoded:
            t = self.template if use_prompt else None
            self._encoded[use_prompt] = (encode_examples(self.vocab, self.train, t, self.rc.max_len),
                                         encode_examples(self.vocab, self.test, t, self.rc.max_len))
        return self._encoded[use_prompt]

    def write_common(self, out: Path) -> None:
        self.vocab.save(out / "vocab.txt")
        save_label_map(self.dataset.label_map, out / "label_map.json")
        _dump(split_manifest(self.train, self.test, self.rc.seed, self.rc.ratio), out / "split.json")

    def builder(self, variant: str, layer_range=None):
        rc = self.rc
        cfg = _encoder_config(rc, len(self.vocab))
        layers = layer_range if layer_range is not None else _layer_range(rc)
        try:
            resolve_layers(layers, cfg.n_layers)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

        def build(seed: int) -> PromptClassifier:
            torch.manual_seed(seed)
            model = PromptClassifier(cfg, self.n_classes, variant, layers, rc.attn_projection)
            if rc.init:
                load_encoder_weights(model, rc.init)
            return model
        return build

    def run_variant(self, variant: str, layer_range=None):
        build = self.builder(variant, layer_range)
        train, test = self.encoded(variant != "no_attention_no_prompt")
        return train_seeds(build, train, _train_config(self.rc, variant), test)

    def meta(self, model: PromptClassifier) -> dict:
        return {"vocab": list(self.vocab.id_to_token), "label_map": self.dataset.label_map,
                "template": self.template.pattern if model.uses_prompt else None,
                "max_len": self.rc.max_len, "task": self.rc.task}


def _summary(runs) -> dict:
    agg = aggregate([r.report for r in runs])
    return {"aggregate": agg.to_dict(),
            "runs": [{"seed": r.seed, **r.report.to_dict()} for r in runs]}


# -- commands ---------------------------------------------------------------------

def cmd_vocab(rc: RunConfig, out: Path) -> None:
    data = _load_data(rc)
    template = _template(rc)
    vocab = train_vocab([wrap(template, e.text) for e in data], rc.vocab_size)
    vocab.save(out / "vocab.txt")
    _dump({"size": len(vocab), "target_size": rc.vocab_size}, out / "vocab.json")
    print(f"vocabulary of {len(vocab)} tokens written to {out / 'vocab.txt'}")


def cmd_pretrain(rc: RunConfig, out: Path) -> None:
    data = _load_data(rc)
    vocab = _vocab(rc, data.texts)
    vocab.save(out / "vocab.txt")
    torch.manual_seed(rc.seed)
    encoder = Encoder(_encoder_config(rc, len(vocab)))
    encoder, hist = pretrain_mlm(encoder, vocab, data.texts, _train_config(rc), rc.max_len)
    save_model(out / "encoder.pcls", encoder, {"vocab": list(vocab.id_to_token)})
    _dump({"loss": hist.loss, "accuracy": hist.accuracy, "skipped": hist.skipped,
           "steps": hist.steps}, out / "pretrain.json")
    lines = ["epoch  loss      masked_acc"]
    lines += [f"{i + 1:<6} {l:<9.4f} {a:.4f}" for i, (l, a) in enumerate(zip(hist.loss, hist.accuracy))]
    _emit("\n".join(lines) + "\n", out / "pretrain.txt")


def cmd_train(rc: RunConfig, out: Path) -> None:
    prep = _Prepared(rc)
    prep.write_common(out)
    runs = prep.run_variant(rc.variant)
    for r in runs:
        run_dir = out / f"seed_{r.seed}"
        run_dir.mkdir(exist_ok=True)
        save_model(run_dir / "model.pcls", r.model, prep.meta(r.model))
        write_history(r.history, run_dir / "history.csv")
        write_report(run_dir / "metrics.json", r.report, {"seed": r.seed})
        plotting.plot_history(r.history, run_dir / "history.png")
    summary = _summary(runs)
    summary["config"] = rc.to_dict()
    _dump(summary, out / "report.json")
    table = format_table({rc.variant: aggregate([r.report for r in runs])},
                         f"{rc.task}: {len(runs)} seeds, mean±std(max)")
    _emit(table, out / "report.txt")


def _eval_examples(rc: RunConfig, label_map: dict | None):
    if rc.data:
        identity = label_map is None or all(k == str(v) for k, v in label_map.items())
        return list(load_dataset(rc.data, rc.format, None if identity else label_map))
    data = _load_data(rc)
    return stratified_split(data, rc.ratio, rc.seed)[1]


def _load_checkpoint(rc: RunConfig):
    if not rc.checkpoint:
        raise UsageError("--checkpoint is required")
    model, meta = load_model(rc.checkpoint)
    if not isinstance(model, PromptClassifier):
        raise UsageError(f"{rc.checkpoint} is not a classifier checkpoint")
    vocab = Vocabulary(tuple(meta["vocab"]))
    template = PromptTemplate.parse(meta["template"]) if meta.get("template") else None
    model.eval()
    return model, meta, vocab, template


def cmd_eval(rc: RunConfig, out: Path) -> None:
    model, meta, vocab, template = _load_checkpoint(rc)
    examples = _eval_examples(rc, meta.get("label_map"))
    data = encode_examples(vocab, examples, template, meta["max_len"])
    report, preds, loss = evaluate(model, data)
    write_report(out / "metrics.json", report, {"loss": loss, "n": len(examples)})
    with open(out / "predictions.csv", "w", encoding="utf-8") as fh:
        fh.write("id,gold,predicted\n")
        for e, p in zip(examples, preds):
            fh.write(f"{e.id},{e.label},{p}\n")
    lines = [f"{k:<10} {100 * v:.3f}" for k, v in report.headline().items()]
    _emit("\n".join(lines) + "\n", out / "metrics.txt")


def cmd_ablate(rc: RunConfig, out: Path) -> None:
    variants = [v.strip() for v in rc.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}")
    prep = _Prepared(rc)
    prep.write_common(out)
    result, aggs = {}, {}
    for v in variants:
        runs = prep.run_variant(v)
        result[v] = _summary(runs)
        aggs[v] = aggregate([r.report for r in runs])
    _dump({"task": rc.task, "variants": result}, out / "ablation.json")
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,metric,mean,std,max\n")
        for v, a in aggs.items():
            for k in a.mean:
                fh.write(f"{v},{k},{a.mean[k]:.10g},{a.std[k]:.10g},{a.max[k]:.10g}\n")
    plotting.plot_ablation({v: a.to_dict() for v, a in aggs.items()}, out / "ablation.png")
    _emit(format_table(aggs, f"Ablation on {rc.task} ({rc.seeds} seeds, mean±std(max))"),
          out / "ablation.txt")


def cmd_sweep_layers(rc: RunConfig, out: Path) -> None:
    prep = _Prepared(rc)
    prep.write_common(out)
    top = rc.n_layers
    rows = []
    for start in range(0, top + 1):
        runs = prep.run_variant(rc.variant, (start, top))
        agg = aggregate([r.report for r in runs])
        rows.append({"start": start, "stop": top, "layer_ids": list(range(start, top + 1)),
                     "mean": agg.mean, "std": agg.std, "max": agg.max, "seeds": agg.n})
    _dump({"task": rc.task, "variant": rc.variant, "rows": rows}, out / "sweep.json")
    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("start,stop,accuracy,macro_p,macro_r,macro_f1\n")
        for r in rows:
            m = r["mean"]
            fh.write(f"{r['start']},{r['stop']},{m['accuracy']:.10g},{m['macro_p']:.10g},"
                     f"{m['macro_r']:.10g},{m['macro_f1']:.10g}\n")
    plotting.plot_layer_sweep(rows, out / "sweep.png", rc.task)
    lines = ["layers   ACC(%)   P(%)     R(%)     F1(%)"]
    for r in rows:
        m = r["mean"]
        lines.append(f"{r['start']:>2}..{r['stop']:<3}  " + "  ".join(
            f"{100 * m[k]:7.3f}" for k in ("accuracy", "macro_p", "macro_r", "macro_f1")))
    _emit("\n".join(lines) + "\n", out / "sweep.txt")


def cmd_stats(rc: RunConfig, out: Path) -> None:
    data = _load_data(rc)
    vocab = _vocab(rc, data.texts)
    train, test = stratified_split(data, rc.ratio, rc.seed)
    stats = compute_stats(data, vocab)
    payload = {"task": rc.task, "classes": data.n_classes, "train": len(train), "test": len(test),
               **stats.to_dict()}
    _dump(payload, out / "stats.json")
    head = ["Task", "Class Num", "Train", "Test", "Mean", "Mode", "Median"]
    head += [f"<{t}" for t in stats.below]
    row = [rc.task, str(data.n_classes), str(len(train)), str(len(test)), f"{stats.mean:.2f}",
           str(stats.mode), f"{stats.median:.1f}"]
    row += [f"{100 * f:.2f}%" for f in stats.below.values()]
    widths = [max(len(h), len(c)) for h, c in zip(head, row)]
    text = "  ".join(h.ljust(w) for h, w in zip(head, widths)) + "\n"
    text += "  ".join(c.ljust(w) for c, w in zip(row, widths)) + "\n"
    text += f"(lengths in {stats.unit}; whitespace-word mean {stats.word_mean:.2f})\n"
    _emit(text, out / "stats.txt")


def cmd_attention_report(rc: RunConfig, out: Path) -> None:
    model, meta, vocab, template = _load_checkpoint(rc)
    if model.variant not in ("full", "with_bilstm"):
        raise UsageError(f"variant {model.variant!r} has no attention weights")
    examples = _eval_examples(rc, meta.get("label_map"))
    data = encode_examples(vocab, examples, template, meta["max_len"])
    lines, figures = [], out / "figures"
    figures.mkdir(exist_ok=True)
    with torch.no_grad():
        for start in range(0, len(data), 256):
            index = torch.arange(start, min(start + 256, len(data)))
            ids, valid, mpos, labels = data.batch(index)
            details = model.forward_details(ids, valid, mpos)
            preds = details["logits"].argmax(-1)
            for j, i in enumerate(index.tolist()):
                lines.append({"example_id": data.example_ids[i], "layer_ids": list(model.layer_ids),
                              "alphas": details["alphas"][j].tolist(),
                              "predicted": int(preds[j]), "gold": int(labels[j])})
    with open(out / "attention.jsonl", "w", encoding="utf-8") as fh:
        for rec in lines:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    for rec in lines[: rc.figures]:
        plotting.plot_attention(rec["alphas"], rec["layer_ids"],
                                figures / f"attention_{rec['example_id']}.png",
                                f"example {rec['example_id']}")
    mean = [sum(r["alphas"][k] for r in lines) / len(lines) for k in range(len(model.layer_ids))]
    text = "layer  mean_attention(%)\n" + "".join(
        f"{l:<6} {100 * a:.2f}\n" for l, a in zip(model.layer_ids, mean))
    _emit(text, out / "attention.txt")


def _profile_config(rc: RunConfig, explicit: dict) -> tuple[EncoderConfig, int]:
    if rc.base:
        seq_len = rc.max_len if "max_len" in explicit else 256
        return BASE_CONFIG, seq_len
    return _encoder_config(rc, rc.vocab_size), rc.max_len


def cmd_profile(rc: RunConfig, out: Path, explicit: dict) -> None:
    cfg, seq_len = _profile_config(rc, explicit)
    layers = resolve_layers(_layer_range(rc), cfg.n_layers)
    reports = [count_macs(cfg, v, seq_len, rc.classes, len(layers), rc.attn_projection)
               for v in ("with_bilstm", "full", "no_attention", "no_attention_no_prompt")]
    ref = reports[0]
    _dump({"seq_len": seq_len, "config": cfg.to_dict(), "reference": ref.variant,
           "reports": [dict(r.to_dict(), reduction=reduction(ref, r)) for r in reports]},
          out / "cost.json")
    _emit(format_cost_table(reports, ref), out / "cost.txt")


def cmd_time(rc: RunConfig, out: Path) -> None:
    template = _template(rc)
    text = rc.text
    if text is None:
        data = _load_data(rc)
        text = data.examples[0].text
    vocab = Vocabulary.load(rc.vocab) if rc.vocab else train_vocab([wrap(template, text)], rc.vocab_size)
    cfg = _encoder_config(rc, len(vocab))
    results = {}
    for variant in ("with_bilstm", "full"):
        torch.manual_seed(rc.seed)
        model = PromptClassifier(cfg, rc.classes, variant, _layer_range(rc))
        results[variant] = time_breakdown(model, vocab, template, text, rc.groups, rc.repeats)
    _dump({v: r.to_dict() for v, r in results.items()}, out / "time.json")
    plotting.plot_time_shares({v: r.shares for v, r in results.items()}, out / "time.png")
    _emit("".join(f"[{v}] groups={r.groups} repeats={r.repeats}\n{r.table()}"
                  for v, r in results.items()), out / "time.txt")


HANDLERS = {
    "vocab": cmd_vocab, "pretrain": cmd_pretrain, "train": cmd_train, "eval": cmd_eval,
    "ablate": cmd_ablate, "sweep-layers": cmd_sweep_layers, "stats": cmd_stats,
    "attention-report": cmd_attention_report, "time": cmd_time,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_file = args.pop("config")
    explicit = {k: v for k, v in args.items() if v is not None}
    rc = resolve(config_file, explicit)
    threads = os.environ.get("PROMPTCLASS_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / ".lock"), timeout=0)
    try:
        lock.acquire()
    except Timeout:
        raise UsageError(f"another process is writing to {out}") from None
    try:
        if command == "profile":
            cmd_profile(rc, out, explicit)
        else:
            HANDLERS[command](rc, out)
    finally:
        lock.release()
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
