"""Named-tensor JSON checkpoints.

Files hold ``{"header": {...}, "tensors": {name: {"shape": [...], "data":
[...]}}}`` with row-major flat data.  JSON floats round-trip float64 exactly,
so save followed by load is value-identical.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .autodiff import Tensor


def save_tensors(path: str | os.PathLike, tensors: dict, header: dict | None = None) -> None:
    """Write a named map of tensors or arrays, with an optional header."""
    blob = {"header": dict(header or {}), "tensors": {}}
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        blob["tensors"][name] = {
            "shape": list(arr.shape),
            "data": [float(x) for x in arr.reshape(-1)],
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_tensors(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (name -> float64 array, header)."""
    with open(path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    if "tensors" not in blob:
        raise ValueError(f"checkpoint {path}: missing 'tensors' section")
    tensors = {}
    for name, entry in blob["tensors"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        tensors[name] = arr
    return tensors, blob.get("header", {})
