"""Single-file checkpoint archive.

A zip holding ``meta.json`` (format version, kind), ``config.json`` and one
``tensors/<name>.npy`` per parameter stored as little-endian float32. Zip
entry timestamps are pinned so identical parameters give identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import FormatError

CHECKPOINT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_archive(path, kind: str, config: dict, tensors: dict, extra: dict | None = None):
    meta = {"format_version": CHECKPOINT_VERSION, "kind": kind, "tensors": {}}
    if extra:
        meta.update(extra)
    with zipfile.ZipFile(path, "w") as zf:
        for name in sorted(tensors):
            arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            _entry(zf, f"tensors/{name}.npy", buf.getvalue())
            meta["tensors"][name] = list(arr.shape)
        _entry(zf, "config.json", json.dumps(config, sort_keys=True, indent=2))
        _entry(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=2))


def load_archive(path, kind: str | None = None):
    """Return ``(config, tensors, meta)``."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            config = json.loads(zf.read("config.json"))
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise FormatError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
            if kind is not None and meta.get("kind") != kind:
                raise FormatError(f"{path}: expected a {kind!r} checkpoint, found {meta.get('kind')!r}")
            tensors = {}
            for name, shape in meta["tensors"].items():
                arr = np.lib.format.read_array(io.BytesIO(zf.read(f"tensors/{name}.npy")), allow_pickle=False)
                if list(arr.shape) != shape:
                    raise FormatError(f"{path}: tensor {name} shape {arr.shape} != {shape}")
                tensors[name] = arr
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a valid checkpoint ({exc})") from exc
    return config, tensors, meta
