"""Model checkpoints: JSON header + raw little-endian float64 payload.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON
header, then the concatenated tensor data. The header stores the model
config, the full vocabulary (so a checkpoint is self-contained), its
hash for fast dataset compatibility checks, the tensor directory
(name/shape/offset in float64 units, parameters and batchnorm running
buffers alike) and any extra run metadata the trainer wants to keep.
"""

from __future__ import annotations

import json

import numpy as np

from .model import GcnModel, ModelConfig
from .scene import Vocabulary

MAGIC = b"SGEMBED1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint of the expected version."""


class CheckpointHashMismatch(CheckpointError):
    """Checkpoint vocabulary does not match the dataset it is used with."""


class CheckpointConfigMismatch(CheckpointError):
    """Checkpoint model config differs from the requested one."""


def _all_tensors(model: GcnModel) -> dict[str, np.ndarray]:
    arrays = {name: p.data for name, p in model.parameters().items()}
    arrays.update(model.buffers())
    return arrays


def save_checkpoint(model: GcnModel, path, extra: dict | None = None) -> None:
    arrays = _all_tensors(model)
    directory = []
    offset = 0
    for name, arr in arrays.items():
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "vocab": {
            "objects": list(model.vocab.object_labels),
            "relationships": list(model.vocab.relationship_labels),
        },
        "vocab_hash": model.vocab.content_hash(),
        "tensors": directory,
        "total_floats": offset,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(
    path,
    expected_config: ModelConfig | None = None,
    expected_vocab_hash: str | None = None,
) -> tuple[GcnModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, extra metadata)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    header_len = int.from_bytes(raw[8:16], "little")
    if len(raw) < 16 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    payload = np.frombuffer(raw[16 + header_len :], dtype="<f8")
    if payload.size != header["total_floats"]:
        raise CheckpointError(
            f"{path}: truncated payload ({payload.size} floats, expected {header['total_floats']})"
        )

    config = ModelConfig.from_dict(header["model_config"])
    if expected_config is not None and config != expected_config:
        raise CheckpointConfigMismatch(
            f"{path}: checkpoint config {config.to_dict()} differs from requested {expected_config.to_dict()}"
        )
    vocab = Vocabulary(tuple(header["vocab"]["objects"]), tuple(header["vocab"]["relationships"]))
    if vocab.content_hash() != header["vocab_hash"]:
        raise CheckpointError(f"{path}: header vocabulary does not match its recorded hash")
    if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
        raise CheckpointHashMismatch(
            f"{path}: checkpoint vocabulary hash {header['vocab_hash'][:12]}... does not match the dataset"
        )

    model = GcnModel.create(config, vocab, seed=0)
    arrays = _all_tensors(model)
    expected_names = list(arrays.keys())
    directory = {entry["name"]: entry for entry in header["tensors"]}
    if set(directory) != set(expected_names):
        raise CheckpointError(f"{path}: tensor directory does not match the model structure")
    for name in expected_names:
        entry = directory[name]
        arr = arrays[name]
        if tuple(entry["shape"]) != arr.shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {entry['shape']}, model expects {list(arr.shape)}"
            )
        start = entry["offset"]
        np.copyto(arr, payload[start : start + arr.size].reshape(arr.shape))
    return model, header.get("extra", {})


def models_equal(a: GcnModel, b: GcnModel) -> bool:
    """Exact equality of configs, vocabularies and every tensor/buffer."""
    if a.config != b.config or a.vocab != b.vocab:
        return False
    ta, tb = _all_tensors(a), _all_tensors(b)
    if set(ta) != set(tb):
        return False
    return all(np.array_equal(ta[name], tb[name]) for name in ta)
