"""Versioned, self-describing model checkpoints.

A checkpoint is an ``.npz`` container holding

* ``__meta__``: UTF-8 JSON with the format version, model config, seed and
  any caller-supplied fields (training config, epoch, dev loss);
* ``param:<name>``: each trainable tensor as little-endian float32;
* ``buffer:<name>``: batch-norm running statistics as little-endian float64.

Writes go to a temporary file in the target directory and are renamed into
place, so a reader never sees a half-written checkpoint.
"""

from __future__ import annotations

import json
import os
import tempfile
import zipfile
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .model import ModelConfig, RawGatST
from .train import load_state_dict, state_dict

FORMAT_VERSION = 1
MAGIC = "rawgat-st-checkpoint"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: RawGatST, **meta) -> Path:
    path = Path(path)
    header = {
        "format": MAGIC,
        "version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "seed": model.config.seed,
        **meta,
    }
    blobs = {"__meta__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for key, arr in state_dict(model).items():
        blobs[key] = arr.astype("<f4" if key.startswith("param:") else "<f8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, **blobs)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_checkpoint(path) -> Tuple[dict, dict]:
    """Return (meta, arrays) or raise :class:`CheckpointError` naming the problem."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path}: no metadata record")
    try:
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata ({exc})") from exc
    if meta.get("format") != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    if meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {meta.get('version')}")
    return meta, arrays


def check_compatible(saved: ModelConfig, wanted: ModelConfig, fields=("fusion", "use_spectral", "use_temporal", "use_pooling")) -> None:
    for name in fields:
        a, b = getattr(saved, name), getattr(wanted, name)
        if a != b:
            raise CheckpointError(f"{name}: checkpoint has {a!r} but the configuration asks for {b!r}")


def load_checkpoint(path, expect: Optional[ModelConfig] = None) -> Tuple[RawGatST, dict]:
    meta, arrays = read_checkpoint(path)
    try:
        config = ModelConfig.from_dict(meta["model_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config record ({exc})") from exc
    if expect is not None:
        check_compatible(config, expect)
    model = RawGatST(config)
    try:
        load_state_dict(model, arrays)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    model.eval()
    return model, meta
