"""Ablation families: named config variants trained under one seed and compared side by side."""

from __future__ import annotations

import copy
import logging
from collections.abc import Callable
from dataclasses import asdict, fields, replace
from pathlib import Path

from facelab.augmentation import MODES
from facelab.data.loader import SyntheticDataset
from facelab.errors import ConfigurationError
from facelab.evaluation import AblationTable, EvalConfig, EvalReport
from facelab.evaluation.protocols import (
    EncoderPredictor,
    cycle_eval,
    dataset_vertex_error,
    frozen_encoder_protocol,
    reconstruction_metrics,
)
from facelab.networks.encoder import EncoderSet
from facelab.training.pretrain import REINIT_SEED_OFFSET, pretrain, reinitialize_expression
from facelab.training.settings import TrainConfig
from facelab.training.trainer import Trainer

logger = logging.getLogger(__name__)

Variants = list[tuple[str, TrainConfig]]

_ABLATIONS: dict[str, Callable[[TrainConfig], Variants]] = {}


def register_ablation(name: str) -> Callable[[Callable[[TrainConfig], Variants]], Callable[[TrainConfig], Variants]]:
    def decorator(fn: Callable[[TrainConfig], Variants]) -> Callable[[TrainConfig], Variants]:
        _ABLATIONS[name] = fn
        return fn

    return decorator


def available_ablations() -> list[str]:
    return list(_ABLATIONS)


def ablation_variants(name: str, base: TrainConfig) -> Variants:
    """The labeled configs of family ``name`` derived from ``base``."""
    fn = _ABLATIONS.get(name)
    if fn is None:
        raise ConfigurationError(f"Unknown ablation: {name!r}. Choose from: {', '.join(_ABLATIONS)}")
    return fn(base)


def config_diff(base: TrainConfig, other: TrainConfig) -> dict[str, list]:
    """Fields whose values differ, as ``{name: [base, other]}``."""
    a, b = asdict(base), asdict(other)
    return {f.name: [a[f.name], b[f.name]] for f in fields(TrainConfig) if a[f.name] != b[f.name]}


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


@register_ablation("masking_ratio")
def _masking_ratio(base: TrainConfig) -> Variants:
    return [("ratio_1pct", replace(base, mask_ratio=0.01)), ("ratio_5pct", replace(base, mask_ratio=0.05))]


@register_ablation("cycle")
def _cycle(base: TrainConfig) -> Variants:
    on = replace(base, cycle_enabled=True, augment_modes=list(MODES))
    variants = [("with_cycle", on), ("without_cycle", replace(on, cycle_enabled=False))]
    labels = {"inject": "no_injection", "permute": "no_permutation", "zero": "no_zeroing", "perturb": "no_random"}
    for mode, label in labels.items():
        variants.append((label, replace(on, augment_modes=[m for m in MODES if m != mode])))
    return variants


@register_ablation("skip_connections")
def _skip_connections(base: TrainConfig) -> Variants:
    return [("with_skips", replace(base, skip_connections=True)), ("without_skips", replace(base, skip_connections=False))]


@register_ablation("landmark_protocol")
def _landmark_protocol(base: TrainConfig) -> Variants:
    # P2 drops the landmark term after the first quarter of training
    stop = max(base.iterations // 4, 1)
    return [
        ("P1_no_landmarks", replace(base, w_lmk=0.0, landmark_stop_step=-1)),
        ("P2_early_stop", replace(base, landmark_stop_step=stop)),
        ("P3_always", replace(base, landmark_stop_step=-1)),
    ]


@register_ablation("emotion_weight")
def _emotion_weight(base: TrainConfig) -> Variants:
    return [(f"w_emo_{w:g}", replace(base, w_emo=w)) for w in (0.0, 1.0, 2.0, 5.0, 10.0)]


@register_ablation("expression_pretraining")
def _expression_pretraining(base: TrainConfig) -> Variants:
    return [
        ("pretrained_expression", replace(base, pretrain_expression=True)),
        ("scratch_expression", replace(base, pretrain_expression=False)),
    ]


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def _pretrain_key(config: TrainConfig) -> tuple:
    return (
        config.seed,
        config.pretrain_iterations,
        config.pretrain_lr,
        config.w_pretrain_beta,
        config.batch_size,
        config.encoder_width,
        config.image_size,
    )


def evaluate_variant(
    label: str,
    trainer: Trainer,
    dataset: SyntheticDataset,
    config: TrainConfig,
    evaluation: EvalConfig,
    with_protocol: bool,
) -> EvalReport:
    """Cycle, vertex and image metrics of a trained variant."""
    predictor = EncoderPredictor(trainer.encoders)
    report = cycle_eval(trainer.encoders, trainer.translator, dataset, config, evaluation)
    report = report.merge(dataset_vertex_error(predictor, dataset, evaluation.split, evaluation.batch_size))
    if with_protocol:
        report = report.merge(frozen_encoder_protocol(predictor, dataset, config, evaluation))
    else:
        l1, vgg = reconstruction_metrics(trainer.translator, predictor, dataset, config, evaluation)
        report.l1, report.vgg = l1, vgg
    report.label = label
    report.validate()
    return report


def run_ablation(
    name: str,
    base: TrainConfig,
    dataset: SyntheticDataset,
    evaluation: EvalConfig | None = None,
    out_dir: str | Path | None = None,
) -> AblationTable:
    """Train every variant of family ``name`` with the shared seed and compare them."""
    variants = ablation_variants(name, base)
    evaluation = evaluation or EvalConfig(seed=base.seed, batch_size=base.batch_size)
    model = dataset.model
    pretrained: dict[tuple, EncoderSet] = {}
    table = AblationTable(family=name)

    for label, config in variants:
        config.validate()
        key = _pretrain_key(config)
        if key not in pretrained:
            encoders = EncoderSet(config.encoder_config(), seed=config.seed)
            pretrained[key] = pretrain(encoders, dataset, replace(config, pretrain_expression=True), model)
        encoders = copy.deepcopy(pretrained[key])
        if not config.pretrain_expression:
            reinitialize_expression(encoders, config.seed + REINIT_SEED_OFFSET)

        variant_dir = Path(out_dir) / label if out_dir is not None else None
        logger.info("Ablation %s: training variant %s", name, label)
        trainer = Trainer(
            config,
            dataset,
            model,
            encoders=encoders,
            out_dir=variant_dir,
            expression_stats=dataset.expression_stats,
        )
        trainer.fit()
        if variant_dir is not None:
            trainer.save(variant_dir / "final")
        table.rows.append(
            evaluate_variant(label, trainer, dataset, config, evaluation, with_protocol=name == "skip_connections")
        )
        table.diffs[label] = config_diff(base, config)
    return table
