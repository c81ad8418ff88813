"""Synthetic dataset: data models."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import Tensor

from facelab.errors import DatasetIOError
from facelab.face import FaceParams

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
SPLITS = ("train", "val", "test")
FORMAT_VERSION = 1


@dataclass
class SyntheticSample:
    """One generated sample; ``image`` is ``(H, W, 3)`` float in [0, 1]."""

    sample_id: int
    image: Tensor
    params: FaceParams
    landmarks: Tensor  # (K, 2) pixels
    mesh_hash: str
    seed: int


@dataclass
class Batch:
    images: Tensor  # (B, H, W, 3)
    landmarks: Tensor  # (B, K, 2)
    params: FaceParams
    sample_ids: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.images.shape[0]

    @classmethod
    def cat(cls, batches: list[Batch]) -> Batch:
        return cls(
            images=torch.cat([b.images for b in batches]),
            landmarks=torch.cat([b.landmarks for b in batches]),
            params=FaceParams.cat([b.params for b in batches]),
            sample_ids=[i for b in batches for i in b.sample_ids],
        )


@dataclass
class DatasetManifest:
    """Index of a generated dataset: splits, provenance and expression statistics."""

    n_samples: int
    splits: dict[str, list[int]]
    fractions: dict[str, float]
    model_fingerprint: str
    seed: int
    appearance: dict
    image_size: int
    shard: str = "synthetic"
    expression_stats: dict[str, float] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def split(self, name: str) -> list[int]:
        if name not in self.splits:
            raise DatasetIOError(f"Unknown split: {name!r}. Choose from: {', '.join(self.splits)}")
        return self.splits[name]

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / MANIFEST_FILE
        try:
            path.write_text(json.dumps(asdict(self), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise DatasetIOError(f"Cannot write manifest {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, directory: str | Path) -> DatasetManifest:
        path = Path(directory) / MANIFEST_FILE
        if not path.exists():
            raise DatasetIOError(f"No dataset manifest at {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in raw.items() if k in known})
