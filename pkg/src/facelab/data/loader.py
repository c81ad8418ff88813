"""Reading generated datasets back, and mixing named shards into training batches."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch

from facelab.data import MANIFEST_FILE, Batch, DatasetManifest, SyntheticSample
from facelab.data.images import load_png
from facelab.errors import ConfigurationError, ContractViolation, DatasetIOError
from facelab.face import FaceParams
from facelab.face.io import load_model, model_fingerprint
from facelab.face.model import MorphableModel

logger = logging.getLogger(__name__)


class SyntheticDataset:
    """A generated dataset directory; samples are read lazily and cached."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest = DatasetManifest.load(self.root)
        self._model: MorphableModel | None = None
        self._cache: dict[int, SyntheticSample] = {}

    @property
    def name(self) -> str:
        return self.manifest.shard

    @property
    def image_size(self) -> tuple[int, int]:
        return self.manifest.image_size, self.manifest.image_size

    @property
    def model(self) -> MorphableModel:
        if self._model is None:
            model = load_model(self.root / "model")
            if model_fingerprint(model) != self.manifest.model_fingerprint:
                raise DatasetIOError(f"Model in {self.root} does not match the manifest fingerprint")
            self._model = model
        return self._model

    @property
    def expression_stats(self) -> dict[str, float]:
        return self.manifest.expression_stats

    def split_size(self, split: str) -> int:
        return len(self.manifest.split(split))

    def sample(self, sample_id: int) -> SyntheticSample:
        cached = self._cache.get(sample_id)
        if cached is not None:
            return cached
        stem = f"{sample_id:06d}"
        path = self.root / "params" / f"{stem}.json"
        if not path.exists():
            raise DatasetIOError(f"Missing parameter file {path}", sample_id=stem)
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetIOError(f"Corrupt parameter file {path}: {exc}", sample_id=stem) from exc
        sample = SyntheticSample(
            sample_id=sample_id,
            image=load_png(self.root / "images" / f"{stem}.png"),
            params=FaceParams.from_dict(record["params"]),
            landmarks=torch.tensor(record["landmarks"], dtype=torch.float32),
            mesh_hash=record["mesh_hash"],
            seed=int(record["seed"]),
        )
        self._cache[sample_id] = sample
        return sample

    def load_batch(self, split: str, indices) -> Batch:
        """Samples at ``indices`` (positions within ``split``) as one batch."""
        ids = self.manifest.split(split)
        samples = []
        for i in indices:
            i = int(i)
            if not 0 <= i < len(ids):
                raise ContractViolation(f"Index {i} is outside split {split!r} of size {len(ids)}")
            samples.append(self.sample(ids[i]))
        if not samples:
            raise ContractViolation("load_batch needs at least one index")
        return Batch(
            images=torch.stack([s.image for s in samples]),
            landmarks=torch.stack([s.landmarks for s in samples]),
            params=FaceParams.cat([s.params for s in samples]),
            sample_ids=[s.sample_id for s in samples],
        )

    def iter_batches(self, split: str, batch_size: int):
        """Every sample of ``split`` in order, ``batch_size`` at a time."""
        n = self.split_size(split)
        for start in range(0, n, batch_size):
            yield self.load_batch(split, range(start, min(start + batch_size, n)))


def load_batch(root: str | Path, split: str, indices) -> Batch:
    return SyntheticDataset(root).load_batch(split, indices)


# ---------------------------------------------------------------------------
# Shard mixing
# ---------------------------------------------------------------------------


def shard_counts(mix: dict[str, float], batch_size: int) -> dict[str, int]:
    """Split ``batch_size`` by the mix fractions with the largest-remainder rule."""
    names = list(mix)
    raw = np.array([mix[n] for n in names], dtype=np.float64) * batch_size
    counts = np.floor(raw).astype(int)
    remainder = batch_size - int(counts.sum())
    # Stable order keeps ties deterministic
    for idx in np.argsort(-(raw - counts), kind="stable")[:remainder]:
        counts[idx] += 1
    return {n: int(c) for n, c in zip(names, counts, strict=True)}


class ShardMixer:
    """Deterministic per-step batches drawn from several named datasets."""

    def __init__(self, shards: dict[str, SyntheticDataset], mix: dict[str, float], seed: int, split: str = "train"):
        unknown = sorted(set(mix) - set(shards))
        if unknown:
            raise ConfigurationError(
                f"Unknown dataset shard: {unknown[0]!r}. Choose from: {', '.join(shards)}"
            )
        fingerprints = {ds.manifest.model_fingerprint for ds in shards.values()}
        if len(fingerprints) > 1:
            raise ConfigurationError("Dataset shards were generated with different morphable models")
        self.shards = shards
        self.mix = {k: v for k, v in mix.items() if v > 0}
        self.seed = seed
        self.split = split

    @property
    def primary(self) -> SyntheticDataset:
        """The shard with the largest fraction; its model and statistics stand for the mix."""
        return self.shards[max(self.mix, key=self.mix.__getitem__)]

    def with_seed(self, seed: int) -> ShardMixer:
        return ShardMixer(self.shards, self.mix, seed, self.split)

    def plan(self, step: int, batch_size: int) -> list[tuple[str, list[int]]]:
        """Which split positions of which shard make up the batch of ``step``."""
        plan = []
        for shard_index, (name, count) in enumerate(shard_counts(self.mix, batch_size).items()):
            if count == 0:
                continue
            size = self.shards[name].split_size(self.split)
            if size == 0:
                raise ConfigurationError(f"Shard {name!r} has an empty {self.split!r} split")
            rng = np.random.default_rng([self.seed, step, shard_index])
            picks = rng.choice(size, size=count, replace=size < count)
            plan.append((name, [int(i) for i in picks]))
        return plan

    def batch(self, step: int, batch_size: int) -> Batch:
        parts = [self.shards[name].load_batch(self.split, idx) for name, idx in self.plan(step, batch_size)]
        return Batch.cat(parts)


def open_shards(root: str | Path, mix: dict[str, float]) -> dict[str, SyntheticDataset]:
    """One dataset per shard named in ``mix``, each generated into ``root/<shard>``."""
    root = Path(root)
    shards = {}
    for name in mix:
        if not (root / name / MANIFEST_FILE).exists():
            raise ConfigurationError(f"Shard {name!r} has no dataset in {root / name}")
        shards[name] = SyntheticDataset(root / name)
    logger.info("Opened %d dataset shards under %s", len(shards), root)
    return shards
