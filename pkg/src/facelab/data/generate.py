"""Synthetic dataset generation with exact ground truth."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import torch

from facelab.data import FORMAT_VERSION, SPLITS, DatasetManifest, SyntheticSample
from facelab.data.appearance import AppearanceConfig, render_textured
from facelab.data.images import save_png, to_uint8
from facelab.errors import ContractViolation, DatasetIOError
from facelab.face import FaceParams
from facelab.face.io import model_fingerprint, save_model
from facelab.face.model import MorphableModel, decode, landmarks2d

logger = logging.getLogger(__name__)

PSI_STD_FIRST = 8.0
PSI_STD_LAST = 2.0
TAIL_PROBABILITY = 0.15
TAIL_SCALE = 2.5
POSE_RANGE = 0.2
SCALE_RANGE = (0.33, 0.42)  # camera scale as a fraction of image width
CENTER_JITTER = 0.05
JAW_OPEN_RANGE = (0.0, 0.35)
JAW_LATERAL = 0.05


def psi_stds(d_psi: int) -> np.ndarray:
    """Geometrically decaying per-component expression std."""
    if d_psi == 0:
        return np.zeros(0)
    t = np.arange(d_psi) / max(d_psi - 1, 1)
    return PSI_STD_FIRST * (PSI_STD_LAST / PSI_STD_FIRST) ** t


def sample_params(model: MorphableModel, rng: np.random.Generator, size: tuple[int, int]) -> FaceParams:
    height, width = size
    expression = rng.normal(size=model.d_psi) * psi_stds(model.d_psi)
    if rng.uniform() < TAIL_PROBABILITY:
        expression = expression * TAIL_SCALE
    jaw = np.array(
        [rng.uniform(*JAW_OPEN_RANGE), rng.uniform(-JAW_LATERAL, JAW_LATERAL), rng.uniform(-JAW_LATERAL, JAW_LATERAL)]
    )
    camera = np.array(
        [
            rng.uniform(*SCALE_RANGE) * width,
            width * (0.5 + rng.uniform(-CENTER_JITTER, CENTER_JITTER)),
            height * (0.5 + rng.uniform(-CENTER_JITTER, CENTER_JITTER)),
        ]
    )
    values = {
        "shape": rng.normal(size=model.d_beta),
        "expression": expression,
        "eyelids": rng.uniform(0.0, 1.0, size=2),
        "jaw": jaw,
        "pose": rng.uniform(-POSE_RANGE, POSE_RANGE, size=3),
        "camera": camera,
    }
    return FaceParams(**{k: torch.tensor(v, dtype=model.dtype).reshape(1, -1) for k, v in values.items()})


def mesh_hash(model: MorphableModel, params: FaceParams) -> str:
    with torch.no_grad():
        verts = decode(model, params)[0].to(torch.float32).numpy()
    return hashlib.sha256(np.ascontiguousarray(verts, dtype="<f4").tobytes()).hexdigest()


def sample_seed(seed: int, index: int) -> int:
    return seed ^ index


def make_sample(
    model: MorphableModel, index: int, seed: int, appearance: AppearanceConfig, size: tuple[int, int]
) -> SyntheticSample:
    """Deterministic sample ``index`` of the dataset generated with ``seed``."""
    s = sample_seed(seed, index)
    rng = np.random.default_rng(s)
    params = sample_params(model, rng, size)
    image = render_textured(model, params, appearance, s, size)
    # Stored images are 8-bit; keep the in-memory copy on the same grid
    image = torch.from_numpy(to_uint8(image).astype(np.float32) / 255.0)
    with torch.no_grad():
        landmarks = landmarks2d(model, params)[0]
    return SyntheticSample(
        sample_id=index, image=image, params=params, landmarks=landmarks, mesh_hash=mesh_hash(model, params), seed=s
    )


def split_indices(n: int, val: float, test: float, seed: int) -> dict[str, list[int]]:
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test * n))
    n_val = int(round(val * n))
    return {
        "test": sorted(int(i) for i in order[:n_test]),
        "val": sorted(int(i) for i in order[n_test : n_test + n_val]),
        "train": sorted(int(i) for i in order[n_test + n_val :]),
    }


def expression_stats(params: list[FaceParams]) -> dict[str, float]:
    psi = torch.cat([p.expression for p in params]).double()
    full = torch.cat([p.expression_vector() for p in params]).double()
    if psi.shape[1] == 0:
        return {"psi_std": 0.0, "psi_mean_norm": 0.0, "psi_full_std": float(full.std(dim=0).mean())}
    return {
        "psi_std": float(psi.std(dim=0).mean()),
        "psi_mean_norm": float(psi.norm(dim=1).mean()),
        "psi_full_std": float(full.std(dim=0).mean()),
    }


def write_sample(out_dir: Path, sample: SyntheticSample) -> None:
    stem = f"{sample.sample_id:06d}"
    save_png(out_dir / "images" / f"{stem}.png", sample.image)
    record = {
        "id": sample.sample_id,
        "seed": sample.seed,
        "params": sample.params.to_dict(),
        "landmarks": [[float(x), float(y)] for x, y in sample.landmarks.tolist()],
        "mesh_hash": sample.mesh_hash,
    }
    path = out_dir / "params" / f"{stem}.json"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"Cannot write {path}: {exc}", sample_id=stem) from exc


def generate_dataset(
    model: MorphableModel,
    n: int,
    appearance: AppearanceConfig,
    seed: int,
    out_dir: str | Path,
    size: tuple[int, int] = (128, 128),
    val: float = 0.1,
    test: float = 0.1,
) -> DatasetManifest:
    """Render ``n`` samples into ``out_dir`` (images/, params/, model/, manifest.json)."""
    if n < 1:
        raise ContractViolation(f"Dataset needs at least one sample, got n={n}")
    appearance.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"Cannot create dataset directory {out_dir}: {exc}") from exc

    save_model(model, out_dir / "model")
    all_params = []
    for index in range(n):
        sample = make_sample(model, index, seed, appearance, size)
        write_sample(out_dir, sample)
        all_params.append(sample.params)
        if (index + 1) % 100 == 0:
            logger.info("Generated %d/%d samples", index + 1, n)

    manifest = DatasetManifest(
        n_samples=n,
        splits=split_indices(n, val, test, seed),
        fractions={"train": 1.0 - val - test, "val": val, "test": test},
        model_fingerprint=model_fingerprint(model),
        seed=seed,
        appearance=appearance.to_dict(),
        image_size=size[0],
        expression_stats=expression_stats(all_params),
        format_version=FORMAT_VERSION,
    )
    manifest.save(out_dir)
    logger.info("Wrote %d samples to %s (%s)", n, out_dir, ", ".join(f"{s}={len(manifest.splits[s])}" for s in SPLITS))
    return manifest
