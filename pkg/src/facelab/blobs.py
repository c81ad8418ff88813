"""Manifest + raw little-endian array blobs.

A blob directory holds ``manifest.json`` and ``arrays.bin``.  The manifest
lists every array (name, dtype, shape, byte offset) next to free-form
metadata.  Floats are stored as ``<f4``, index arrays as ``<i4``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from facelab.errors import DatasetIOError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
ARRAYS_NAME = "arrays.bin"

_DTYPES: dict[str, str] = {"f": "<f4", "i": "<i4", "u": "<i4", "b": "<i4"}


def _storage_dtype(arr: np.ndarray) -> str:
    kind = arr.dtype.kind
    if kind not in _DTYPES:
        raise TypeError(f"Cannot store array of dtype {arr.dtype}")
    return _DTYPES[kind]


def write_blobs(
    directory: str | Path,
    arrays: dict[str, np.ndarray],
    meta: dict[str, Any] | None = None,
) -> Path:
    """Write ``arrays`` and ``meta`` into ``directory``. Returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    entries: list[dict[str, Any]] = []
    offset = 0
    with open(directory / ARRAYS_NAME, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            dtype = _storage_dtype(arr)
            raw = np.ascontiguousarray(arr.astype(dtype)).tobytes()
            fh.write(raw)
            entries.append(
                {"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset}
            )
            offset += len(raw)

    manifest = {"arrays": entries, "meta": meta or {}}
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.debug("Wrote %d arrays (%d bytes) to %s", len(entries), offset, directory)
    return directory


def read_blobs(directory: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a blob directory back into ``(arrays, meta)``."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise DatasetIOError(f"No {MANIFEST_NAME} in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    raw = (directory / ARRAYS_NAME).read_bytes()

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, manifest.get("meta", {})


def fingerprint(directory: str | Path) -> str:
    """SHA-256 over the manifest and the array bytes."""
    directory = Path(directory)
    digest = hashlib.sha256()
    digest.update((directory / MANIFEST_NAME).read_bytes())
    digest.update((directory / ARRAYS_NAME).read_bytes())
    return digest.hexdigest()


def arrays_fingerprint(arrays: dict[str, np.ndarray]) -> str:
    """SHA-256 over named arrays, independent of any file on disk."""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(arr.astype(_storage_dtype(arr))).tobytes())
    return digest.hexdigest()
