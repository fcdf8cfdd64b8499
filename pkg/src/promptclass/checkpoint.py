"""PCLS checkpoint container.

Layout::

    b"PCLS" | uint32 version | uint64 header_bytes | header (UTF-8 JSON) | payloads

All integers little-endian.  The header carries the model configuration,
free-form metadata, and a tensor directory (name, shape, offset, nbytes)
whose offsets are relative to the start of the payload section.  Payloads
are little-endian float32, concatenated in directory order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .aggregator import PromptClassifier
from .encoder import Encoder, EncoderConfig
from .errors import DataError

MAGIC = b"PCLS"
VERSION = 1


def _tensor_blob(state: dict[str, torch.Tensor]) -> tuple[list[dict], list[bytes]]:
    directory, blobs, offset = [], [], 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4", copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset,
                          "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    return directory, blobs


def write_container(path: str | Path, config: dict, state: dict[str, torch.Tensor],
                    meta: dict | None = None) -> None:
    directory, blobs = _tensor_blob(state)
    header = json.dumps({"config": config, "meta": meta or {}, "tensors": directory},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_container(path: str | Path) -> tuple[dict, dict[str, torch.Tensor], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a PCLS checkpoint")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(raw[start : start + hlen].decode("utf-8"))
    payload = memoryview(raw)[start + hlen :]
    state = {}
    for entry in header["tensors"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise DataError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(payload[lo:hi], dtype="<f4").reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
    return header["config"], state, header["meta"]


def save_model(path: str | Path, model: PromptClassifier | Encoder, meta: dict | None = None) -> None:
    if isinstance(model, PromptClassifier):
        config = {"kind": "classifier", "encoder": model.config.to_dict(),
                  "n_classes": model.n_classes, "variant": model.variant,
                  "layer_range": list(model.layer_range),
                  "attn_projection": model.attn_projection}
    else:
        config = {"kind": "encoder", "encoder": model.config.to_dict()}
    write_container(path, config, model.state_dict(), meta)


def load_model(path: str | Path) -> tuple[PromptClassifier | Encoder, dict]:
    config, state, meta = read_container(path)
    enc_cfg = EncoderConfig(**config["encoder"])
    if config["kind"] == "classifier":
        model = PromptClassifier(enc_cfg, config["n_classes"], config["variant"],
                                 tuple(config["layer_range"]), config["attn_projection"])
    else:
        model = Encoder(enc_cfg)
    model.load_state_dict(state)
    return model, meta


def load_encoder_weights(model: PromptClassifier, path: str | Path) -> None:
    """Initialise a classifier's encoder from an encoder (or classifier) checkpoint."""
    config, state, _ = read_container(path)
    if config["kind"] == "classifier":
        state = {k.removeprefix("encoder."): v for k, v in state.items() if k.startswith("encoder.")}
    if EncoderConfig(**config["encoder"]) != model.config:
        raise DataError(f"{path}: encoder configuration does not match")
    model.encoder.load_state_dict(state)
