"""Named-tensor files: a JSON descriptor next to a raw float32 payload.

``<stem>.json`` lists tensors in payload order with their shapes, plus free
metadata (seed, config). ``<stem>.f32`` is the little-endian concatenation
of the tensors in that order. Arrays are loaded back as float64 holding the
exact float32 values.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT = "teleqa-tensors"
VERSION = 1


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    """Write ``tensors`` (ordered name -> array) to ``path.json`` + ``path.f32``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    descriptor = {
        "format": FORMAT,
        "version": VERSION,
        "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()],
        "meta": meta or {},
    }
    payload = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in tensors.values())
    path.with_suffix(".json").write_text(json.dumps(descriptor, indent=2) + "\n")
    path.with_suffix(".f32").write_bytes(payload)


def load_tensors(path):
    """Return ``(tensors, meta)`` from a descriptor/payload pair."""
    path = Path(path)
    desc_path, data_path = path.with_suffix(".json"), path.with_suffix(".f32")
    for p in (desc_path, data_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing {p}")
    desc = json.loads(desc_path.read_text())
    if desc.get("format") != FORMAT or desc.get("version") != VERSION:
        raise FormatError(f"{desc_path}: not a {FORMAT} v{VERSION} descriptor")
    raw = data_path.read_bytes()
    sizes = [int(np.prod(t["shape"], dtype=np.int64)) for t in desc["tensors"]]
    if 4 * sum(sizes) != len(raw):
        raise FormatError(
            f"payload length mismatch: {data_path} has {len(raw)} bytes, expected {4 * sum(sizes)}"
        )
    flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    tensors, offset = {}, 0
    for t, n in zip(desc["tensors"], sizes):
        tensors[t["name"]] = flat[offset : offset + n].reshape(t["shape"])
        offset += n
    return tensors, desc.get("meta", {})
