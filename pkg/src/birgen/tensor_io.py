"""Flat binary tensor archive with a JSON shape manifest.

``<stem>.bin`` holds the float64 little-endian arrays back to back;
``<stem>.json`` lists ``{"name", "shape", "offset"}`` per tensor plus any
extra metadata.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _paths(path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def save_tensors(path, tensors: dict, meta: dict | None = None):
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(bin_path, "wb") as fh:
        for name, arr in tensors.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(a.tobytes())
            entries.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.nbytes
    manifest = {"dtype": "float64", "byteorder": "little", "tensors": entries}
    if meta:
        manifest["meta"] = meta
    json_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return bin_path, json_path


def load_tensors(path, with_meta=False):
    bin_path, json_path = _paths(path)
    manifest = json.loads(json_path.read_text())
    raw = bin_path.read_bytes()
    out = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        out[e["name"]] = np.frombuffer(raw, "<f8", n, e["offset"]).reshape(e["shape"]).copy()
    return (out, manifest.get("meta", {})) if with_meta else out
