"""Frozen-encoder image reconstruction, cycle consistency and vertex-error protocols."""

from __future__ import annotations

import logging
from typing import Protocol

import numpy as np
import torch
from torch import Tensor

from facelab.data import Batch
from facelab.data.loader import SyntheticDataset
from facelab.errors import ContractViolation
from facelab.evaluation import EvalConfig, EvalReport, digest
from facelab.face import FaceParams
from facelab.face.metrics import ScanStats, scan_to_mesh
from facelab.face.model import MorphableModel, decode
from facelab.losses.features import get_extractor
from facelab.losses.terms import perceptual, photometric
from facelab.masking import stack_images
from facelab.masking.mask import associate_vertices, mask_batch, transfer_pixels
from facelab.networks.encoder import EncoderSet, encode
from facelab.networks.freezing import checksum
from facelab.networks.translator import Translator, translate
from facelab.render import RenderOutput
from facelab.render.rasterizer import render_geometry
from facelab.training.settings import TrainConfig

logger = logging.getLogger(__name__)

PROTOCOL_TRANSLATOR_SEED = 101
TRAIN_RNG_TAG = 1
TEST_RNG_TAG = 2


class Predictor(Protocol):
    fingerprint: str

    def predict(self, batch: Batch) -> FaceParams: ...


class EncoderPredictor:
    """Parameters from a (frozen) encoder set."""

    def __init__(self, encoders: EncoderSet, fingerprint: str = ""):
        self.encoders = encoders
        self.fingerprint = fingerprint or checksum(encoders)

    @torch.no_grad()
    def predict(self, batch: Batch) -> FaceParams:
        return encode(self.encoders, batch.images)


class OraclePredictor:
    """Ground-truth parameters of synthetic samples."""

    fingerprint = "oracle"

    def predict(self, batch: Batch) -> FaceParams:
        return batch.params


def render_params(model: MorphableModel, params: FaceParams, config: TrainConfig) -> RenderOutput:
    return render_geometry(
        decode(model, params),
        params.camera,
        model.face_triangles,
        config.size,
        sigma=config.render_sigma,
        gamma=config.render_gamma,
    )


def synthesize(
    translator: Translator,
    model: MorphableModel,
    params: FaceParams,
    batch: Batch,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Tensor:
    with torch.no_grad():
        render = render_params(model, params, config)
    masked = mask_batch(batch.images, batch.landmarks, config.mask_ratio, config.mask_dilation, rng)
    return translate(translator, render.image, stack_images(masked))


# ---------------------------------------------------------------------------
# Frozen-encoder image reconstruction
# ---------------------------------------------------------------------------


def reconstruction_metrics(
    translator: Translator,
    predictor: Predictor,
    dataset: SyntheticDataset,
    config: TrainConfig,
    evaluation: EvalConfig,
) -> tuple[float, float]:
    """Mean L1 and perceptual loss of ``translator`` over the evaluation split."""
    extractor = get_extractor(config.perceptual_extractor, config.extractor_seed)
    l1_sum = vgg_sum = 0.0
    count = 0
    with torch.no_grad():
        for index, batch in enumerate(dataset.iter_batches(evaluation.split, evaluation.batch_size)):
            rng = np.random.default_rng([evaluation.seed, TEST_RNG_TAG, index])
            output = synthesize(translator, dataset.model, predictor.predict(batch), batch, config, rng)
            l1_sum += float(photometric(output, batch.images)) * batch.size
            vgg_sum += float(perceptual(output, batch.images, extractor)) * batch.size
            count += batch.size
    return l1_sum / max(count, 1), vgg_sum / max(count, 1)


def frozen_encoder_protocol(
    predictor: Predictor,
    dataset: SyntheticDataset,
    config: TrainConfig,
    evaluation: EvalConfig = EvalConfig(),
    translator: Translator | None = None,
) -> EvalReport:
    """Train a fresh translator for ``evaluation.epochs`` epochs on the predictor's geometry, report test L1/VGG.

    The predictor is never updated.  ``history`` holds the mean training L1 of
    every epoch.
    """
    if translator is None:
        translator = Translator(config.translator_config(), seed=evaluation.seed + PROTOCOL_TRANSLATOR_SEED)
    extractor = get_extractor(config.perceptual_extractor, config.extractor_seed)
    optimizer = torch.optim.Adam(translator.parameters(), lr=evaluation.lr)
    history = []
    step = 0
    for epoch in range(evaluation.epochs):
        epoch_l1, seen = 0.0, 0
        for batch in dataset.iter_batches(evaluation.train_split, evaluation.batch_size):
            rng = np.random.default_rng([evaluation.seed, TRAIN_RNG_TAG, step])
            with torch.no_grad():
                params = predictor.predict(batch)
            optimizer.zero_grad(set_to_none=True)
            output = synthesize(translator, dataset.model, params, batch, config, rng)
            l1 = photometric(output, batch.images)
            loss = config.w_photo * l1 + config.w_vgg * perceptual(output, batch.images, extractor)
            loss.backward()
            optimizer.step()
            epoch_l1 += float(l1) * batch.size
            seen += batch.size
            step += 1
        history.append(epoch_l1 / max(seen, 1))
        logger.info("Frozen-encoder protocol epoch %d/%d: train L1 %.5f", epoch + 1, evaluation.epochs, history[-1])

    l1, vgg = reconstruction_metrics(translator, predictor, dataset, config, evaluation)
    report = EvalReport(
        protocol="frozen_encoder",
        l1=l1,
        vgg=vgg,
        history=history,
        fingerprint=digest(
            {"predictor": predictor.fingerprint, "protocol": "frozen_encoder", "eval": evaluation.to_dict(), "config": config.fingerprint()}
        ),
    )
    report.validate()
    return report


# ---------------------------------------------------------------------------
# Cycle consistency
# ---------------------------------------------------------------------------


def cycle_metrics(intended: Tensor, recovered: Tensor) -> tuple[float, float]:
    """``(vert_l1, vert_abs_std)`` of ``(I, N, n_v, 3)`` intended and recovered vertex sets.

    vert_l1 is the per-vertex L1 norm averaged over images, variants and
    vertices; vert_abs_std averages ``|std_N(intended) - std_N(recovered)|``
    over images, vertices and coordinates (population std over the N variants).
    """
    if intended.shape != recovered.shape:
        raise ContractViolation(f"Vertex sets differ in shape: {tuple(intended.shape)} vs {tuple(recovered.shape)}")
    if intended.ndim != 4 or intended.shape[1] < 2:
        raise ContractViolation("cycle metrics need (images, variants >= 2, vertices, 3) tensors")
    intended = intended.double()
    recovered = recovered.double()
    vert_l1 = (intended - recovered).abs().sum(dim=-1).mean()
    std_i = intended.std(dim=1, correction=0)
    std_r = recovered.std(dim=1, correction=0)
    vert_abs_std = (std_i - std_r).abs().mean()
    return float(vert_l1), float(vert_abs_std)


def expression_variants(psi: Tensor, d_psi: int, n_variants: int, scale: float, rng: np.random.Generator) -> Tensor:
    """``(B, N, d_psi + 5)`` copies of ``psi`` with Gaussian noise of std ``scale`` on psi_expr."""
    noise = np.zeros((psi.shape[0], n_variants, psi.shape[1]))
    noise[..., :d_psi] = rng.normal(0.0, scale, size=(psi.shape[0], n_variants, d_psi))
    return psi[:, None, :] + torch.from_numpy(noise).to(psi.dtype)


@torch.no_grad()
def cycle_eval(
    encoders: EncoderSet,
    translator: Translator,
    dataset: SyntheticDataset,
    config: TrainConfig,
    evaluation: EvalConfig = EvalConfig(),
    perturb_scale: float | None = None,
) -> EvalReport:
    """Perturb each test image's predicted Psi N times, synthesize, re-encode and compare meshes.

    Recovered meshes keep the intended identity, pose and camera; only Psi
    comes from the re-encoding.
    """
    n = evaluation.n_variants
    if n < 2:
        raise ContractViolation(f"cycle_eval needs at least 2 variants, got {n}")
    model = dataset.model
    if perturb_scale is None:
        perturb_scale = evaluation.perturb_factor * dataset.expression_stats.get("psi_std", 1.0)

    intended_all, recovered_all = [], []
    for index, batch in enumerate(dataset.iter_batches(evaluation.split, evaluation.batch_size)):
        rng = np.random.default_rng([evaluation.seed, TEST_RNG_TAG, index])
        params = encode(encoders, batch.images)
        variants = expression_variants(params.expression_vector(), model.d_psi, n, perturb_scale, rng)
        masked = mask_batch(batch.images, batch.landmarks, config.mask_ratio, config.mask_dilation, rng)
        masked = [associate_vertices(m, model, params.select(b)) for b, m in enumerate(masked)]

        intended, recovered = [], []
        for v in range(n):
            params_v = params.with_expression_vector(variants[:, v])
            moved = [
                transfer_pixels(m, model, params.select(b), params_v.select(b), config.mask_dilation)
                for b, m in enumerate(masked)
            ]
            render = render_params(model, params_v, config)
            synthesized = translate(translator, render.image, stack_images(moved))
            psi_back = encode(encoders, synthesized).expression_vector()
            intended.append(decode(model, params_v))
            recovered.append(decode(model, params_v.with_expression_vector(psi_back)))
        intended_all.append(torch.stack(intended, dim=1))
        recovered_all.append(torch.stack(recovered, dim=1))

    vert_l1, vert_abs_std = cycle_metrics(torch.cat(intended_all), torch.cat(recovered_all))
    report = EvalReport(
        protocol="cycle",
        vert_l1=vert_l1,
        vert_abs_std=vert_abs_std,
        fingerprint=digest(
            {
                "encoders": checksum(encoders),
                "translator": checksum(translator),
                "protocol": "cycle",
                "eval": evaluation.to_dict(),
                "perturb_scale": perturb_scale,
            }
        ),
    )
    report.validate()
    return report


# ---------------------------------------------------------------------------
# Vertex errors
# ---------------------------------------------------------------------------


def vertex_error(predicted_meshes, ground_truth, triangles) -> ScanStats:
    """Scan-to-mesh statistics per item, aggregated.

    Each ground-truth item (mesh vertices or scan points) is measured against
    the corresponding predicted mesh.  Means and medians are averaged over
    items; the max is the largest item max.
    """
    if len(predicted_meshes) != len(ground_truth):
        raise ContractViolation(f"{len(predicted_meshes)} predictions for {len(ground_truth)} ground-truth items")
    if len(predicted_meshes) == 0:
        raise ContractViolation("vertex_error needs at least one item")
    stats = [scan_to_mesh(gt, pred, triangles) for pred, gt in zip(predicted_meshes, ground_truth, strict=True)]
    return ScanStats(
        mean=float(np.mean([s.mean for s in stats])),
        median=float(np.mean([s.median for s in stats])),
        max=float(np.max([s.max for s in stats])),
    )


@torch.no_grad()
def dataset_vertex_error(predictor: Predictor, dataset: SyntheticDataset, split: str = "test", batch_size: int = 8) -> EvalReport:
    """Predicted meshes against ground-truth meshes of a split."""
    model = dataset.model
    predicted, truth = [], []
    for batch in dataset.iter_batches(split, batch_size):
        predicted.extend(decode(model, predictor.predict(batch)))
        truth.extend(decode(model, batch.params))
    stats = vertex_error(predicted, truth, model.triangles)
    report = EvalReport(
        protocol="vertex",
        vertex_stats=stats._asdict(),
        fingerprint=digest({"predictor": predictor.fingerprint, "protocol": "vertex", "split": split}),
    )
    report.validate()
    return report


@torch.no_grad()
def parameter_error(predictor: Predictor, dataset: SyntheticDataset, split: str = "test", batch_size: int = 8) -> float:
    """Mean per-vertex L2 distance between predicted and ground-truth meshes."""
    model = dataset.model
    total, count = 0.0, 0
    for batch in dataset.iter_batches(split, batch_size):
        diff = decode(model, predictor.predict(batch)) - decode(model, batch.params)
        total += float(diff.norm(dim=-1).mean()) * batch.size
        count += batch.size
    return total / max(count, 1)
