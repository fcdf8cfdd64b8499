"""Run configuration: built-in defaults, then an INI-style file, then flags.

The file format is ``key = value`` lines under optional ``[section]``
headers.  Sections only group keys for readability; every key lives in
one flat namespace and may also be given as ``--key`` on the command line.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import UsageError


@dataclass
class RunConfig:
    task: str = "toy-languages"
    data: str | None = None
    format: str | None = None
    template: str | None = None
    layers: str | None = None
    max_len: int = 128
    seed: int = 0
    seeds: int = 5
    variant: str = "full"
    variants: str = "full,no_attention,no_attention_no_prompt"
    freeze_backbone: bool = False
    attn_projection: bool = False
    out: str = "run"
    vocab: str | None = None
    vocab_size: int = 2000
    init: str | None = None
    checkpoint: str | None = None
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ffn: int = 128
    dropout: float = 0.1
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 2e-3
    weight_decay: float = 0.01
    ratio: float = 0.8
    n_per_class: int = 125
    classes: int = 19
    base: bool = False
    groups: int = 10
    repeats: int = 1000
    figures: int = 4
    text: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(key: str, value):
    kind = FIELD_TYPES[key]
    if value is None or not isinstance(value, str):
        return value
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low not in _TRUE | _FALSE:
                raise ValueError
            return low in _TRUE
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None
    if kind.endswith("| None") and value.strip().lower() in ("", "none"):
        return None
    return value


def read_config_file(path: str | Path) -> dict:
    parser = configparser.ConfigParser(default_section="__defaults__", interpolation=None)
    parser.optionxform = str
    text = Path(path).read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            norm = key.strip().replace("-", "_")
            if norm not in FIELD_TYPES:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            values[norm] = coerce(norm, value)
    return values


def resolve(file_path: str | None, overrides: dict) -> RunConfig:
    values = {}
    if file_path:
        values.update(read_config_file(file_path))
    values.update({k: coerce(k, v) for k, v in overrides.items() if v is not None})
    return RunConfig(**values)
