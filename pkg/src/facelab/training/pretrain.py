"""Encoder pretraining on landmarks and reference identity."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import torch

from facelab.data import Batch
from facelab.data.loader import ShardMixer, SyntheticDataset
from facelab.errors import ConfigurationError, NumericalError
from facelab.face.model import MorphableModel, landmarks2d
from facelab.losses.terms import landmark_loss
from facelab.networks.encoder import EncoderBranch, EncoderSet, encode
from facelab.networks.freezing import set_frozen
from facelab.training import PRETRAIN_LOG
from facelab.training.settings import TrainConfig

logger = logging.getLogger(__name__)

PRETRAIN_LANDMARK_WEIGHT = 100.0
PRETRAIN_SEED_OFFSET = 1_000_003
REINIT_SEED_OFFSET = 17


def as_mixer(
    data: ShardMixer | SyntheticDataset | dict[str, SyntheticDataset], config: TrainConfig, seed: int | None = None
) -> ShardMixer:
    """The batch source of a run.

    A dict of shards is mixed by ``config.dataset_mix``. A single dataset is
    one shard, which only a one-shard mix can describe. Mixers pass through,
    re-seeded when ``seed`` is given.
    """
    if isinstance(data, ShardMixer):
        return data if seed is None else data.with_seed(seed)
    seed = config.seed if seed is None else seed
    if isinstance(data, dict):
        return ShardMixer(data, config.dataset_mix, seed)
    if len(config.dataset_mix) > 1:
        raise ConfigurationError(
            f"dataset_mix names {len(config.dataset_mix)} shards but a single dataset was given: {data.root}"
        )
    return ShardMixer({data.name: data}, {data.name: 1.0}, seed)


def pretrain_losses(
    encoders: EncoderSet, model: MorphableModel, batch: Batch, size: tuple[int, int]
) -> tuple[torch.Tensor, torch.Tensor]:
    """Landmark loss and beta MSE of one batch."""
    params = encode(encoders, batch.images)
    lmk = landmark_loss(batch.landmarks, landmarks2d(model, params), size)
    beta = torch.mean((params.shape - batch.params.shape) ** 2) if model.d_beta else params.shape.new_zeros(())
    return lmk, beta


@torch.no_grad()
def landmark_error(encoders: EncoderSet, dataset: SyntheticDataset, split: str = "val", batch_size: int = 16) -> float:
    """Mean landmark loss of ``encoders`` over a whole split."""
    total, count = 0.0, 0
    for batch in dataset.iter_batches(split, batch_size):
        lmk, _ = pretrain_losses(encoders, dataset.model, batch, dataset.image_size)
        total += float(lmk) * batch.size
        count += batch.size
    return total / max(count, 1)


def reinitialize_expression(encoders: EncoderSet, seed: int) -> None:
    config = encoders.config
    out_features = encoders.expression.head.out_features
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        encoders.branches["expression"] = EncoderBranch(config.width, out_features)


def pretrain(
    encoders: EncoderSet,
    data: ShardMixer | SyntheticDataset | dict[str, SyntheticDataset],
    config: TrainConfig,
    model: MorphableModel,
    out_dir: str | Path | None = None,
) -> EncoderSet:
    """Train all three branches jointly on landmark + beta regression, then freeze E_beta and E_Theta.

    With ``config.pretrain_expression`` off the expression branch is
    re-initialized afterwards, so the main stage starts it from scratch.
    """
    mixer = as_mixer(data, config, config.seed + PRETRAIN_SEED_OFFSET)
    for branch in encoders.branches.values():
        set_frozen(branch, False)
    optimizer = torch.optim.Adam(encoders.parameters(), lr=config.pretrain_lr)
    log = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        log = open(Path(out_dir) / PRETRAIN_LOG, "w", encoding="utf-8")

    try:
        for it in range(config.pretrain_iterations):
            batch = mixer.batch(it, config.batch_size)
            optimizer.zero_grad(set_to_none=True)
            lmk, beta = pretrain_losses(encoders, model, batch, config.size)
            loss = PRETRAIN_LANDMARK_WEIGHT * lmk + config.w_pretrain_beta * beta
            if not math.isfinite(float(loss)):
                raise NumericalError(
                    f"Pretraining loss is {float(loss)} at iteration {it} (landmark {float(lmk)}, beta {float(beta)})"
                )
            loss.backward()
            optimizer.step()
            record = {"step": it, "lmk": float(lmk), "beta": float(beta), "loss": float(loss)}
            if log is not None:
                log.write(json.dumps(record) + "\n")
            if config.log_every and it % config.log_every == 0:
                logger.info("Pretrain %d/%d: landmark %.5f, beta %.5f", it, config.pretrain_iterations, lmk, beta)
    finally:
        if log is not None:
            log.close()

    set_frozen(encoders.shape, True)
    set_frozen(encoders.pose, True)
    if not config.pretrain_expression:
        reinitialize_expression(encoders, config.seed + REINIT_SEED_OFFSET)
        logger.info("Expression branch re-initialized after pretraining")
    return encoders
