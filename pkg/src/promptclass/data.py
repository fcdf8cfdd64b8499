"""Labelled corpora: loading, stratified splitting, statistics, toy generation."""

from __future__ import annotations

import csv
import json
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError
from .tokenizer import Vocabulary, tokenize

LENGTH_THRESHOLDS = (32, 64, 128, 256, 300)


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int
    id: str


@dataclass
class Dataset:
    examples: list[LabeledExample]
    label_map: dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def n_classes(self) -> int:
        labels = [e.label for e in self.examples]
        return max(len(self.label_map), max(labels) + 1 if labels else 0)

    @property
    def texts(self) -> list[str]:
        return [e.text for e in self.examples]

    @property
    def labels(self) -> list[int]:
        return [e.label for e in self.examples]


def _is_int_label(value) -> bool:
    if isinstance(value, bool):
        return False
    if isinstance(value, int):
        return value >= 0
    return isinstance(value, str) and value.isdigit()


def _read_rows(path: Path, fmt: str) -> list[tuple[int, str, object, str | None]]:
    rows = []
    with path.open(encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataError(f"{path}: empty file")
            missing = {"text", "label"} - set(reader.fieldnames)
            if missing:
                raise DataError(f"{path}:1: header lacks column(s) {', '.join(sorted(missing))}")
            start = 2
            for rec in reader:
                if rec.get("text") is None or rec.get("label") in (None, "") or None in rec:
                    raise DataError(f"{path}:{start}: malformed row")
                rows.append((start, rec["text"], rec["label"], rec.get("id") or None))
                start = reader.line_num + 1
        elif fmt == "jsonl":
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
                if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
                    raise DataError(f"{path}:{lineno}: object needs 'text' and 'label'")
                if obj["text"] is None:
                    raise DataError(f"{path}:{lineno}: text is null")
                ident = obj.get("id")
                rows.append((lineno, str(obj["text"]), obj["label"],
                             None if ident is None else str(ident)))
        else:
            raise DataError(f"unknown dataset format {fmt!r}")
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows


def load_dataset(path: str | Path, fmt: str | None = None,
                 label_map: dict[str, int] | None = None) -> Dataset:
    """Read CSV (``text,label``) or JSONL records.

    Non-negative integer labels pass through unchanged; anything else is
    mapped to dense ids by first appearance, unless ``label_map`` is given.
    """
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix in (".jsonl", ".json") else "csv")
    rows = _read_rows(path, fmt)
    numeric = label_map is None and all(_is_int_label(r[2]) for r in rows)
    mapping: dict[str, int] = dict(label_map or {})
    examples = []
    for i, (lineno, text, raw, ident) in enumerate(rows):
        if numeric:
            label = int(raw)
            mapping.setdefault(str(label), label)
        else:
            key = str(raw)
            if key not in mapping:
                if label_map is not None:
                    raise DataError(f"{path}:{lineno}: label {key!r} not in label map")
                mapping[key] = len(mapping)
            label = mapping[key]
        examples.append(LabeledExample(text, label, ident if ident is not None else str(i)))
    if numeric:
        mapping = {str(k): k for k in sorted(int(k) for k in mapping)}
    return Dataset(examples, mapping)


def save_dataset(data: Dataset | list[LabeledExample], path: str | Path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix in (".jsonl", ".json") else "csv")
    examples = list(data)
    with path.open("w", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            writer = csv.writer(fh)
            writer.writerow(["text", "label", "id"])
            for e in examples:
                writer.writerow([e.text, e.label, e.id])
        else:
            for e in examples:
                fh.write(json.dumps({"text": e.text, "label": e.label, "id": e.id}) + "\n")


def save_label_map(label_map: dict[str, int], path: str | Path) -> None:
    Path(path).write_text(json.dumps(label_map, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(data: Dataset | list[LabeledExample], ratio: float = 0.8,
                     seed: int = 0) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Per class: shuffle with ``seed`` and cut at round(count * ratio)."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    examples = list(data)
    by_class: dict[int, list[LabeledExample]] = defaultdict(list)
    for e in examples:
        by_class[e.label].append(e)
    if not by_class:
        raise DataError("cannot split an empty dataset")
    n_classes = data.n_classes if isinstance(data, Dataset) else max(by_class) + 1
    empty = [c for c in range(n_classes) if c not in by_class]
    if empty:
        raise DataError(f"class(es) {empty} have no examples")
    rng = random.Random(seed)
    train, test = [], []
    for label in sorted(by_class):
        members = list(by_class[label])
        rng.shuffle(members)
        cut = _round_half_up(len(members) * ratio)
        train.extend(members[:cut])
        test.extend(members[cut:])
    return train, test


def split_manifest(train, test, seed: int, ratio: float) -> dict:
    return {"seed": seed, "ratio": ratio,
            "train": [e.id for e in train], "test": [e.id for e in test]}


@dataclass
class DatasetStats:
    size: int
    class_counts: dict[int, int]
    unit: str
    mean: float
    mode: int
    median: float
    below: dict[int, float]  # threshold -> fraction of examples shorter than it
    word_mean: float
    word_mode: int
    word_median: float

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "class_counts": {str(k): v for k, v in sorted(self.class_counts.items())},
            "unit": self.unit,
            "mean": self.mean, "mode": self.mode, "median": self.median,
            "below": {str(k): v for k, v in self.below.items()},
            "word_lengths": {"mean": self.word_mean, "mode": self.word_mode,
                             "median": self.word_median},
        }


def _summary(lengths: list[int]) -> tuple[float, int, float]:
    if not lengths:
        return 0.0, 0, 0.0
    counts = Counter(lengths)
    top = max(counts.values())
    mode = min(k for k, c in counts.items() if c == top)
    ordered = sorted(lengths)
    median = float(ordered[(len(ordered) - 1) // 2])
    return sum(lengths) / len(lengths), mode, median


def compute_stats(data: Dataset | list[LabeledExample], v: Vocabulary) -> DatasetStats:
    examples = list(data)
    lengths = [len(tokenize(v, e.text)) for e in examples]
    words = [len(e.text.split()) for e in examples]
    mean, mode, median = _summary(lengths)
    w_mean, w_mode, w_median = _summary(words)
    n = len(examples)
    below = {t: (sum(1 for x in lengths if x < t) / n if n else 0.0) for t in LENGTH_THRESHOLDS}
    return DatasetStats(n, dict(Counter(e.label for e in examples)), "tokens",
                        mean, mode, median, below, w_mean, w_mode, w_median)


# -- synthetic corpora -------------------------------------------------------

_IDENTS = ["x", "y", "count", "total", "item", "name", "value", "data", "result", "idx",
           "buf", "node", "key", "size", "flag", "tmp", "user", "path", "list", "obj"]

_LANGUAGES = {
    "pyish": (["def", "elif", "lambda", "yield", "import", "None", "self", "pass"],
              [":", "#", "=", "(", ")"]),
    "cish": (["int", "void", "struct", "printf", "malloc", "sizeof", "NULL", "return"],
             [";", "{", "}", "*", "&"]),
    "lispish": (["defun", "setq", "cons", "car", "cdr", "progn", "nil", "let"],
                ["(", ")", "'", "(", ")"]),
    "sqlish": (["SELECT", "FROM", "WHERE", "JOIN", "GROUP", "ORDER", "INSERT", "UPDATE"],
               [",", "*", "=", ";", "'"]),
}

_SMELL = {
    "clean": (["get", "set", "is", "has", "compute", "load", "save", "find"],
              ["return", "value", "result", "found"]),
    "smelly": (["getAll", "setNone", "isList", "hasMany", "doStuff", "handleIt", "process2", "misc"],
               ["void", "ignored", "tmp2", "unused"]),
}

_COMMENTS = {
    "summary": ["returns", "computes", "represents", "the", "given", "value", "class", "method"],
    "usage": ["use", "call", "example", "before", "invoke", "pass", "instead", "must"],
    "license": ["copyright", "license", "rights", "reserved", "apache", "distributed", "warranty", "gpl"],
    "pointer": ["see", "link", "refer", "http", "docs", "javadoc", "related", "also"],
}

_DEBT = {
    "clean": ["returns", "the", "value", "of", "this", "field", "called", "when", "initialized"],
    "debt": ["TODO", "FIXME", "hack", "workaround", "temporary", "XXX", "ugly", "remove", "later"],
}

TOY_TASKS = {"languages": 4, "binary_smell": 2, "comments": 4, "debt": 2}
TOY_TASK_ALIASES = {"toy-languages": "languages", "toy-smell": "binary_smell",
                    "toy-comments": "comments", "toy-debt": "debt"}


def _noisy(rng: random.Random, own: list[str], pool: list[list[str]], noise: float) -> str:
    if rng.random() < noise:
        return rng.choice(rng.choice(pool))
    return rng.choice(own)


def _language_snippet(rng, keywords, puncts, others, noise):
    toks = []
    for _ in range(rng.randint(4, 9)):
        if rng.random() < 0.5:
            toks.append(_noisy(rng, keywords, [o[0] for o in others], noise))
        else:
            toks.append(rng.choice(_IDENTS))
        if rng.random() < 0.6:
            toks.append(_noisy(rng, puncts, [o[1] for o in others], noise))
    return " ".join(toks)


def _word_snippet(rng, words, others, noise, filler=("a", "an", "it", "to", "in", "and")):
    toks = []
    for _ in range(rng.randint(4, 10)):
        if rng.random() < 0.55:
            toks.append(_noisy(rng, words, others, noise))
        else:
            toks.append(rng.choice(filler))
    return " ".join(toks)


def make_toy_corpus(task_shape: str, n_per_class: int = 100, seed: int = 0,
                    noise: float = 0.05) -> Dataset:
    """Synthetic snippets whose class is set by disjoint keyword inventories.

    With probability ``noise`` a class-bearing token is drawn from another
    class instead; labels themselves are never flipped.
    """
    task_shape = TOY_TASK_ALIASES.get(task_shape, task_shape)
    if task_shape not in TOY_TASKS:
        raise DataError(f"unknown toy task {task_shape!r}")
    if n_per_class < 10:
        raise DataError("n_per_class must be >= 10")
    rng = random.Random(f"{task_shape}:{seed}")
    examples = []
    if task_shape == "languages":
        names = list(_LANGUAGES)
        for _ in range(n_per_class):
            for label, name in enumerate(names):
                kw, pu = _LANGUAGES[name]
                others = [_LANGUAGES[o] for o in names if o != name]
                examples.append((_language_snippet(rng, kw, pu, others, noise), label))
    elif task_shape == "binary_smell":
        names = list(_SMELL)
        for _ in range(n_per_class):
            for label, name in enumerate(names):
                verbs, body = _SMELL[name]
                other = _SMELL[names[1 - label]]
                fn = _noisy(rng, verbs, [other[0]], noise)
                ident = rng.choice(_IDENTS)
                ret = _noisy(rng, body, [other[1]], noise)
                examples.append((f"public {ret} {fn}{ident.title()} ( int {ident} ) {{ return {ident} ; }}",
                                 label))
    else:
        table = _COMMENTS if task_shape == "comments" else _DEBT
        names = list(table)
        for _ in range(n_per_class):
            for label, name in enumerate(names):
                others = [table[o] for o in names if o != name]
                examples.append(("// " + _word_snippet(rng, table[name], others, noise), label))
    return Dataset([LabeledExample(t, y, f"{task_shape}-{i}") for i, (t, y) in enumerate(examples)],
                   {name: i for i, name in enumerate(names)})
