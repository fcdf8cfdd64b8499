"""Cloze prompt templates and [MASK] localisation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, UsageError
from .tokenizer import MASK, Vocabulary, pad_or_truncate, tokenize

INPUT_SLOT = "{x}"


@dataclass(frozen=True)
class PromptTemplate:
    """A pattern with one ``{x}`` input slot and one ``[MASK]`` slot.

    ``parts`` keeps literal segments verbatim; slots appear as the
    sentinel strings ``INPUT_SLOT`` and ``MASK``.
    """

    name: str
    parts: tuple[str, ...]

    @classmethod
    def parse(cls, pattern: str, name: str | None = None) -> "PromptTemplate":
        if pattern.count(INPUT_SLOT) != 1:
            raise UsageError(f"template {pattern!r} needs exactly one {INPUT_SLOT} slot")
        if pattern.count(MASK) != 1:
            raise UsageError(f"template {pattern!r} needs exactly one {MASK} slot")
        parts: list[str] = []
        rest = pattern
        while rest:
            idx = [(rest.find(s), s) for s in (INPUT_SLOT, MASK) if s in rest]
            if not idx:
                parts.append(rest)
                break
            pos, slot = min(idx)
            if pos:
                parts.append(rest[:pos])
            parts.append(slot)
            rest = rest[pos + len(slot) :]
        return cls(name or pattern, tuple(parts))

    @property
    def pattern(self) -> str:
        return "".join(self.parts)

    @property
    def mask_first(self) -> bool:
        return self.parts.index(MASK) < self.parts.index(INPUT_SLOT)


def wrap(t: PromptTemplate, x: str) -> str:
    return "".join(x if p == INPUT_SLOT else p for p in t.parts)


BUILTIN_TEMPLATES: dict[str, PromptTemplate] = {
    t.name: t
    for t in (
        PromptTemplate.parse("It was [MASK] . {x}", "it_was"),
        PromptTemplate.parse("{x} In summary , it was [MASK] .", "in_summary"),
        PromptTemplate.parse("{x} All in all , it was [MASK] .", "all_in_all"),
        PromptTemplate.parse("Just [MASK] ! {x}", "just"),
    )
}

TASK_TEMPLATES = {
    "code-language": "just",
    "code-smell": "in_summary",
    "code-comment": "it_was",
    "technical-debt": "just",
}


def get_template(spec: str) -> PromptTemplate:
    """Resolve a built-in name or a literal pattern."""
    if spec in BUILTIN_TEMPLATES:
        return BUILTIN_TEMPLATES[spec]
    return PromptTemplate.parse(spec)


def default_template(task: str) -> PromptTemplate:
    key = task.removeprefix("toy-")
    key = {"languages": "code-language", "smell": "code-smell",
           "comments": "code-comment", "debt": "technical-debt"}.get(key, key)
    try:
        return BUILTIN_TEMPLATES[TASK_TEMPLATES[key]]
    except KeyError:
        raise UsageError(f"no default template for task {task!r}") from None


def load_templates(path: str | Path) -> dict[str, PromptTemplate]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        name, sep, pattern = line.partition("\t")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected name<TAB>pattern")
        out[name] = PromptTemplate.parse(pattern, name)
    return out


def save_templates(templates: dict[str, PromptTemplate], path: str | Path) -> None:
    Path(path).write_text("".join(f"{n}\t{t.pattern}\n" for n, t in templates.items()),
                          encoding="utf-8")


def encode_text(v: Vocabulary, text: str, n: int) -> tuple[list[int], int]:
    """[CLS] + tokens + [SEP], padded or truncated at the end to ``n``."""
    return pad_or_truncate([v.cls_id] + tokenize(v, text) + [v.sep_id], n)


def encode_prompt(v: Vocabulary, t: PromptTemplate, x: str, n: int) -> tuple[list[int], int, int]:
    """Returns (ids, valid_length, mask_position)."""
    ids, valid = encode_text(v, wrap(t, x), n)
    hits = [i for i, tok in enumerate(ids) if tok == v.mask_id]
    if len(hits) > 1:
        raise DataError(f"prompt contains {len(hits)} mask tokens; expected one")
    if not hits:
        raise DataError("mask lost to truncation")
    return ids, valid, hits[0]


def mask_position(v: Vocabulary, t: PromptTemplate, x: str, n: int) -> int:
    return encode_prompt(v, t, x, n)[2]
