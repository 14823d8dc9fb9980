"""Checkpoints: a JSON manifest plus a little-endian float64 blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optim import ParamSet


def save_checkpoint(params: ParamSet | dict, path: str | Path, extra: dict | None = None) -> None:
    """Write ``<path>.json`` and ``<path>.bin``."""
    path = Path(path)
    state = params.state() if isinstance(params, ParamSet) else params
    entries, chunks, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float64", "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"blob": path.name + ".bin", "tensors": entries, "extra": extra or {}}
    path.with_name(path.name + ".bin").write_bytes(b"".join(chunks))
    path.with_name(path.name + ".json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads(path.with_name(path.name + ".json").read_text())
    blob = path.with_name(manifest["blob"]).read_bytes()
    state = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"])
        state[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return state, manifest.get("extra", {})
