"""Parameter checkpoint archive.

One checkpoint is a zip archive (numpy .npz) mapping parameter-path
strings (e.g. ``encoder/3/kernel``) to little-endian float64 buffers,
plus a JSON metadata record stored under a reserved key. Round trips
are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save_params(path, params: dict, meta: dict | None = None) -> None:
    """Write named parameters and a metadata record to `path` (.npz)."""
    arrays = {}
    for name, value in params.items():
        if name == _META_KEY:
            raise ValueError(f"parameter name {name!r} is reserved")
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        arrays[name] = np.ascontiguousarray(data, dtype="<f8")
    record = dict(meta or {})
    record["format_version"] = FORMAT_VERSION
    blob = np.frombuffer(json.dumps(record, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **{_META_KEY: blob}, **arrays)


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (arrays, metadata). Raises on unknown format versions."""
    with np.load(path) as archive:
        meta = json.loads(bytes(archive[_META_KEY]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"checkpoint {path}: unsupported format version {meta.get('format_version')!r}"
            )
        arrays = {k: archive[k] for k in archive.files if k != _META_KEY}
    return arrays, meta
