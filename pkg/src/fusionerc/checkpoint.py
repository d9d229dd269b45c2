"""Versioned parameter dumps: magic line, JSON header line, raw float64 blobs.

The layout is byte-deterministic (sorted JSON, no timestamps) so identical
parameters always produce identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

MAGIC = b"FUSIONERC-CKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, kind: str, config: dict, state: Dict[str, np.ndarray], extra: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name in sorted(state):
        arr = np.asarray(state[name], dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {"format_version": FORMAT_VERSION, "kind": kind, "config": config,
              "extra": extra or {}, "tensors": entries}
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Tuple[str, dict, Dict[str, np.ndarray], dict]:
    """Return ``(kind, config, state, extra)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a fusionerc checkpoint")
    rest = raw[len(MAGIC):]
    newline = rest.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(rest[:newline].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    payload = rest[newline + 1:]
    state = {}
    for entry in header["tensors"]:
        start, end = entry["offset"], entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        state[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f8").reshape(entry["shape"]).copy()
    return header["kind"], header["config"], state, header.get("extra", {})


def save_model(path, model, extra: dict | None = None) -> None:
    from .extractor import TripletExtractor

    kind = "extractor" if isinstance(model, TripletExtractor) else "dialog_model"
    save_checkpoint(path, kind, model.cfg.to_dict(), model.state_dict(), extra)


def load_model(path):
    """Rebuild a ``DialogModel`` or ``TripletExtractor`` from a checkpoint."""
    from .extractor import ExtractorConfig, TripletExtractor
    from .model import DialogModel, ModelConfig

    kind, config, state, _ = load_checkpoint(path)
    if kind == "extractor":
        model = TripletExtractor(ExtractorConfig.from_dict(config))
    elif kind == "dialog_model":
        model = DialogModel(ModelConfig.from_dict(config))
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")
    model.load_state_dict(state)
    return model
