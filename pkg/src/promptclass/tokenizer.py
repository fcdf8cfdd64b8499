"""Greedy subword tokenizer with frequency-merge vocabulary training.

Text is first cut into chunks: a word (``\\w+``) or a single punctuation
character, each optionally carrying one leading space, or a lone
whitespace character.  A leading space is fused with the first character
of its chunk, so ``" a"`` is one base symbol.  Merges never cross chunk
boundaries.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DataError

PAD, CLS, MASK, SEP, UNK = "[PAD]", "[CLS]", "[MASK]", "[SEP]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, MASK, SEP, UNK)
PAD_ID = 0

_CHUNK_RE = re.compile(r" ?\w+| ?[^\s\w]|\s")
_SPECIAL_RE = re.compile(" ?(" + "|".join(re.escape(s) for s in SPECIAL_TOKENS) + ")")


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)
    max_token_len: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.id_to_token[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise DataError(f"vocabulary must start with {', '.join(SPECIAL_TOKENS)}")
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "token_to_id", mapping)
        object.__setattr__(self, "max_token_len", max(len(t) for t in self.id_to_token))

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS]

    @property
    def mask_id(self) -> int:
        return self.token_to_id[MASK]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIAL_TOKENS)))

    def save(self, path: str | Path) -> None:
        lines = [_escape(tok) for tok in self.id_to_token]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(_unescape(line) for line in lines))


# Vocabulary files hold one token per line, so line breaks, tabs and
# backslashes inside tokens are written as two-character escapes.
_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_UNESCAPES = {v[1]: k for k, v in _ESCAPES.items()}


def _escape(token: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in token)


def _unescape(line: str) -> str:
    out = []
    chars = iter(line)
    for ch in chars:
        if ch == "\\":
            nxt = next(chars, "")
            if nxt not in _UNESCAPES:
                raise DataError(f"bad escape sequence in vocabulary line {line!r}")
            out.append(_UNESCAPES[nxt])
        else:
            out.append(ch)
    return "".join(out)


def split_specials(text: str) -> list[str]:
    """Split ``text`` into plain segments and special-token literals.

    A special literal swallows one preceding space.
    """
    parts: list[str] = []
    pos = 0
    for m in _SPECIAL_RE.finditer(text):
        if m.start() > pos:
            parts.append(text[pos : m.start()])
        parts.append(m.group(1))
        pos = m.end()
    if pos < len(text):
        parts.append(text[pos:])
    return parts


def chunk(text: str) -> list[str]:
    return _CHUNK_RE.findall(text)


def base_symbols(piece: str) -> tuple[str, ...]:
    if len(piece) > 1 and piece[0] == " ":
        return (piece[:2],) + tuple(piece[2:])
    return tuple(piece)


def _iter_chunks(corpus: Iterable[str]):
    for text in corpus:
        for part in split_specials(text):
            if part in SPECIAL_TOKENS:
                continue
            yield from chunk(part)


def train_vocab(corpus: list[str], target_size: int) -> Vocabulary:
    """Learn a vocabulary by repeatedly merging the most frequent adjacent pair.

    Ties go to the lexicographically smallest pair.  Training stops at
    ``target_size`` entries or when no pair occurs at least twice.
    """
    if not corpus:
        raise DataError("empty corpus")

    words = Counter(base_symbols(c) for c in _iter_chunks(corpus))
    alphabet = sorted({s for w in words for s in w})
    minimum = len(SPECIAL_TOKENS) + len(alphabet)
    if target_size < minimum:
        raise DataError(f"target_size {target_size} too small; minimum feasible size is {minimum}")

    tokens = list(SPECIAL_TOKENS) + alphabet
    seen = set(tokens)
    while len(tokens) < target_size:
        pairs: Counter = Counter()
        for word, freq in words.items():
            for a, b in zip(word, word[1:]):
                pairs[a, b] += freq
        if not pairs:
            break
        best_freq = max(pairs.values())
        if best_freq < 2:
            break
        a, b = min(p for p, f in pairs.items() if f == best_freq)
        merged = a + b
        words = Counter({_merge(w, a, b, merged): f for w, f in words.items()})
        if merged not in seen:
            seen.add(merged)
            tokens.append(merged)
    return Vocabulary(tuple(tokens))


def _merge(word: tuple[str, ...], a: str, b: str, merged: str) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == a and word[i + 1] == b:
            out.append(merged)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def _segment(v: Vocabulary, piece: str, out: list[int], unknown: bool) -> bool:
    """Append ids for ``piece``; returns whether it ended inside an unknown span."""
    i = 0
    while i < len(piece):
        for j in range(min(len(piece), i + v.max_token_len), i, -1):
            tid = v.token_to_id.get(piece[i:j])
            if tid is not None and tid >= len(SPECIAL_TOKENS):
                out.append(tid)
                i = j
                unknown = False
                break
        else:
            if not unknown:
                out.append(v.unk_id)
            unknown = True
            i += 1
    return unknown


def tokenize(v: Vocabulary, text: str) -> list[int]:
    """Greedy longest-match segmentation; unknown spans collapse to one UNK."""
    ids: list[int] = []
    unknown = False
    for part in split_specials(text):
        if part in SPECIAL_TOKENS:
            ids.append(v.token_to_id[part])
            unknown = False
            continue
        for piece in chunk(part):
            unknown = _segment(v, piece, ids, unknown)
    return ids


def decode(v: Vocabulary, ids: Iterable[int], skip_special: bool = True) -> str:
    toks = []
    for i in ids:
        if skip_special and i < len(SPECIAL_TOKENS):
            continue
        toks.append(v.id_to_token[i])
    return "".join(toks)


def pad_or_truncate(ids: list[int], n: int) -> tuple[list[int], int]:
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    valid = min(len(ids), n)
    return list(ids[:valid]) + [PAD_ID] * (n - valid), valid
