"""Binary model checkpoints.

Layout: an 8-byte magic, an 8-byte little-endian header length, a UTF-8
JSON header (format version, model config, vocabulary, training-stage
provenance, seed, and a tensor manifest of name/shape/byte offset), then
the raw little-endian float64 tensor payloads in manifest order. The
writer is canonical (sorted JSON keys, declaration-ordered manifest), so
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Vocab
from .errors import ConfigError, DataError, EexError
from .model import EarlyExitTransformer, ModelConfig

MAGIC = b"EEXCKPT1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: EarlyExitTransformer
    vocab: Vocab
    stages: list[str] = field(default_factory=list)
    seed: int = 0

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    params = ckpt.model.parameters()
    manifest = []
    offset = 0
    for p in params:
        size = p.data.size * 8
        manifest.append({"name": p.name, "shape": list(p.data.shape), "offset": offset})
        offset += size
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.token_to_id,
        "stages": list(ckpt.stages),
        "seed": int(ckpt.seed),
        "manifest": manifest,
        "payload_bytes": offset,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    """Rebuild the model bit-exactly; any structural problem raises a
    DataError naming the failure."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: bad checkpoint magic")
    (header_len,) = struct.unpack("<Q", blob[len(MAGIC): len(MAGIC) + 8])
    header_start = len(MAGIC) + 8
    if header_start + header_len > len(blob):
        raise DataError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(blob[header_start: header_start + header_len])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: unreadable checkpoint header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint version {header.get('format_version')!r}"
        )
    try:
        config = ModelConfig.from_dict(header["config"])
        vocab = Vocab.from_mapping({str(k): int(v) for k, v in header["vocab"].items()})
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed checkpoint header field: {exc}") from None
    except EexError as exc:
        raise DataError(f"{path}: invalid checkpoint contents: {exc}") from None

    payload = blob[header_start + header_len:]
    if len(payload) != header.get("payload_bytes"):
        raise DataError(
            f"{path}: payload is {len(payload)} bytes, manifest declares "
            f"{header.get('payload_bytes')}"
        )

    model = EarlyExitTransformer(config, seed=header.get("seed", 0))
    params = {p.name: p for p in model.parameters()}
    manifest = header["manifest"]
    if sorted(params) != sorted(entry["name"] for entry in manifest):
        raise DataError(f"{path}: manifest does not match the declared architecture")
    for entry in manifest:
        p = params[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != p.data.shape:
            raise DataError(
                f"{path}: tensor {entry['name']} has shape {shape}, expected {p.data.shape}"
            )
        start = entry["offset"]
        end = start + p.data.size * 8
        if end > len(payload):
            raise DataError(f"{path}: tensor {entry['name']} overruns the payload")
        p.data = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).copy()
    return Checkpoint(model=model, vocab=vocab, stages=list(header["stages"]),
                      seed=int(header["seed"]))


def require_same_config(ckpt: Checkpoint, config: ModelConfig) -> None:
    if ckpt.config.to_dict() != config.to_dict():
        raise ConfigError(
            "checkpoint model config does not match the run config: "
            f"{ckpt.config.to_dict()} vs {config.to_dict()}"
        )
