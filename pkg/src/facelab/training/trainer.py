"""The training driver: alternating passes, learning-rate schedule, logs and checkpoints."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch

from facelab.augmentation import TemplateLibrary
from facelab.augmentation.library import LibrarySpec, build_extreme_library
from facelab.data import Batch
from facelab.data.loader import ShardMixer, SyntheticDataset
from facelab.errors import ConfigurationError
from facelab.face.model import MorphableModel
from facelab.losses import LossReport
from facelab.losses.features import get_extractor
from facelab.networks.checkpoint import load_checkpoint, save_checkpoint
from facelab.networks.encoder import EncoderSet
from facelab.networks.freezing import set_frozen
from facelab.networks.translator import Translator
from facelab.training import CYCLE, TRAIN_LOG, TrainState
from facelab.training.pretrain import as_mixer
from facelab.training.settings import TrainConfig
from facelab.training.steps import TrainContext, cycle_step, pass_for_step, reconstruction_step

logger = logging.getLogger(__name__)

TRANSLATOR_SEED_OFFSET = 1
LIBRARY_SEED_OFFSET = 2


def _template_library(config: TrainConfig, model: MorphableModel, reference_norm: float) -> TemplateLibrary | None:
    if not config.cycle_enabled or "inject" not in config.augment_modes:
        return None
    if config.template_library:
        library = TemplateLibrary.load(config.template_library)
        if library.d_psi != model.d_psi:
            raise ConfigurationError(
                f"Template library has d_psi={library.d_psi}, the model has {model.d_psi}"
            )
        return library
    spec = LibrarySpec(reference_norm=max(reference_norm, 1e-6), verify=False)
    return build_extreme_library(model, spec, np.random.default_rng(config.seed + LIBRARY_SEED_OFFSET))


class Trainer:
    """Runs the main stage on top of pretrained encoders.

    E_beta and E_Theta stay frozen for the whole run; one Adam optimizer holds
    the parameters of E_Psi and T.
    """

    def __init__(
        self,
        config: TrainConfig,
        data: ShardMixer | SyntheticDataset | dict[str, SyntheticDataset],
        model: MorphableModel,
        encoders: EncoderSet | None = None,
        translator: Translator | None = None,
        out_dir: str | Path | None = None,
        expression_stats: dict[str, float] | None = None,
    ):
        config.validate()
        self.config = config
        self.model = model
        self.mixer = as_mixer(data, config)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        encoders = encoders if encoders is not None else EncoderSet(config.encoder_config(), seed=config.seed)
        translator = (
            translator
            if translator is not None
            else Translator(config.translator_config(), seed=config.seed + TRANSLATOR_SEED_OFFSET)
        )
        set_frozen(encoders.shape, True)
        set_frozen(encoders.pose, True)
        set_frozen(encoders.expression, False)
        set_frozen(translator, False)

        stats = expression_stats or {}
        optimizer = torch.optim.Adam(
            [*encoders.expression.parameters(), *translator.parameters()], lr=config.lr
        )
        self.ctx = TrainContext(
            config=config,
            model=model,
            encoders=encoders,
            translator=translator,
            optimizer=optimizer,
            perceptual=get_extractor(config.perceptual_extractor, config.extractor_seed),
            emotion=get_extractor(config.emotion_extractor, config.extractor_seed),
            library=_template_library(config, model, stats.get("psi_mean_norm", 1.0)),
            psi_std=stats.get("psi_std", 1.0),
        )
        self.state = TrainState(step=0, seed=config.seed, pretrained=True, config_fingerprint=config.fingerprint())

    @property
    def encoders(self) -> EncoderSet:
        return self.ctx.encoders

    @property
    def translator(self) -> Translator:
        return self.ctx.translator

    def batch_for(self, step: int) -> Batch:
        """Batch of ``step``; with ``shared_batch`` a cycle step reuses the preceding step's batch."""
        if self.config.shared_batch and pass_for_step(step, self.config.cycle_enabled) == CYCLE:
            return self.mixer.batch(step - 1, self.config.batch_size)
        return self.mixer.batch(step, self.config.batch_size)

    def step(self) -> LossReport:
        """Run the pass scheduled for the current step and advance the counter."""
        step = self.state.step
        batch = self.batch_for(step)
        if pass_for_step(step, self.config.cycle_enabled) == CYCLE:
            report = cycle_step(self.ctx, batch, step)
        else:
            report = reconstruction_step(self.ctx, batch, step)
        self.state.step = step + 1
        return report

    def fit(self, iterations: int | None = None) -> list[LossReport]:
        """Train until ``iterations`` (default ``config.iterations``) steps have run in total."""
        target = self.config.iterations if iterations is None else iterations
        cfg = self.config
        reports = []
        log = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            log = open(self.out_dir / TRAIN_LOG, "a", encoding="utf-8")
        try:
            while self.state.step < target:
                report = self.step()
                reports.append(report)
                if log is not None:
                    log.write(json.dumps(report.to_dict()) + "\n")
                if cfg.log_every and report.step % cfg.log_every == 0:
                    logger.info(
                        "Step %d/%d (%s): total %.4f, photo %.4f, lmk %.5f, cycle %.5f, lr %.2e",
                        report.step,
                        target,
                        report.pass_name,
                        report.weighted_total,
                        report.photo,
                        report.lmk,
                        report.cycle_exp,
                        report.lr,
                    )
                if cfg.checkpoint_every and self.out_dir is not None and self.state.step % cfg.checkpoint_every == 0:
                    self.save(self.out_dir / f"step_{self.state.step:07d}")
        finally:
            if log is not None:
                log.close()
        return reports

    def save(self, directory: str | Path) -> Path:
        meta = {**self.state.to_dict(), "config": self.config.to_dict()}
        return save_checkpoint(directory, self.encoders, self.translator, self.ctx.optimizer, meta)

    @classmethod
    def resume(
        cls,
        checkpoint_dir: str | Path,
        config: TrainConfig,
        data: ShardMixer | SyntheticDataset | dict[str, SyntheticDataset],
        model: MorphableModel,
        out_dir: str | Path | None = None,
        expression_stats: dict[str, float] | None = None,
    ) -> Trainer:
        """Continue a run from a checkpoint written by :meth:`save`."""
        checkpoint = load_checkpoint(checkpoint_dir)
        trainer = cls(
            config,
            data,
            model,
            encoders=checkpoint.encoders,
            translator=checkpoint.translator,
            out_dir=out_dir,
            expression_stats=expression_stats,
        )
        if checkpoint.optimizer_state is not None:
            trainer.ctx.optimizer.load_state_dict(checkpoint.optimizer_state)
        state = TrainState.from_dict(checkpoint.meta)
        if state.config_fingerprint and state.config_fingerprint != config.fingerprint():
            logger.warning("Resuming %s with a different config than it was trained with", checkpoint_dir)
        trainer.state = state
        logger.info("Resumed from %s at step %d", checkpoint_dir, state.step)
        return trainer


def train(
    config: TrainConfig,
    data: ShardMixer | SyntheticDataset | dict[str, SyntheticDataset],
    out_dir: str | Path,
    encoders: EncoderSet | None = None,
) -> Path:
    """Main stage on ``data``; returns the final checkpoint directory."""
    mixer = as_mixer(data, config)
    dataset = mixer.primary
    trainer = Trainer(
        config,
        mixer,
        dataset.model,
        encoders=encoders,
        out_dir=out_dir,
        expression_stats=dataset.expression_stats,
    )
    trainer.fit()
    return trainer.save(Path(out_dir) / "final")
