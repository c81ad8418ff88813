"""Morphable model persistence (manifest + float32 blobs) and OBJ mesh I/O."""

from __future__ import annotations

import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from facelab.blobs import arrays_fingerprint, read_blobs, write_blobs
from facelab.errors import DatasetIOError
from facelab.face import ModelSpec
from facelab.face.model import MorphableModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

_ARRAY_FIELDS = (
    "template",
    "identity_basis",
    "expression_basis",
    "eyelid_basis",
    "triangles",
    "jaw_weights",
    "jaw_pivot",
    "landmark_indices",
    "face_region",
)


def model_arrays(model: MorphableModel) -> dict[str, np.ndarray]:
    return {name: getattr(model, name).detach().cpu().numpy() for name in _ARRAY_FIELDS}


def model_fingerprint(model: MorphableModel) -> str:
    return arrays_fingerprint(model_arrays(model))


def save_model(model: MorphableModel, directory: str | Path) -> Path:
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "morphable_model",
        "seed": model.seed,
        "spec": asdict(model.spec),
        "dims": {
            "n_vertices": model.n_vertices,
            "d_beta": model.d_beta,
            "d_psi": model.d_psi,
            "n_landmarks": int(len(model.landmark_indices)),
        },
    }
    path = write_blobs(directory, model_arrays(model), meta)
    logger.info("Saved morphable model to %s", path)
    return path


def load_model(directory: str | Path) -> MorphableModel:
    arrays, meta = read_blobs(directory)
    if meta.get("kind") != "morphable_model":
        raise DatasetIOError(f"{directory} does not hold a morphable model")
    tensors = {}
    for name in _ARRAY_FIELDS:
        arr = arrays[name]
        dtype = torch.long if arr.dtype.kind == "i" else torch.float32
        tensors[name] = torch.from_numpy(arr).to(dtype)
    return MorphableModel(**tensors, spec=ModelSpec(**meta["spec"]), seed=int(meta["seed"]))


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------


def export_obj(path: str | Path, vertices, triangles) -> Path:
    """Write an ASCII OBJ (1-based face indices)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    verts = np.asarray(vertices.detach().cpu() if hasattr(vertices, "detach") else vertices)
    tris = np.asarray(triangles.detach().cpu() if hasattr(triangles, "detach") else triangles)
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in verts.reshape(-1, 3)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in tris.reshape(-1, 3)]
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read vertices and triangles from an OBJ; polygons are fan-triangulated."""
    path = Path(path)
    if not path.exists():
        raise DatasetIOError(f"OBJ file not found: {path}", sample_id=path.stem)
    verts: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64).reshape(-1, 3)
