"""One reconstruction step and one cycle step, plus the schedules that pick them."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import Tensor, nn

from facelab.augmentation import TemplateLibrary
from facelab.augmentation.augment import augment_expressions
from facelab.data import Batch
from facelab.errors import NumericalError
from facelab.face.model import MorphableModel, decode, landmarks2d
from facelab.losses import LossReport, LossWeights
from facelab.losses.features import FeatureExtractor
from facelab.losses.terms import (
    cycle_expression,
    cycle_shape,
    emotion_loss,
    expression_reg,
    landmark_loss,
    perceptual,
    photometric,
)
from facelab.masking import stack_images
from facelab.masking.mask import associate_vertices, mask_batch, transfer_pixels
from facelab.networks.encoder import EncoderSet, encode
from facelab.networks.freezing import frozen
from facelab.networks.translator import Translator, translate
from facelab.render.rasterizer import render_geometry
from facelab.training import CYCLE, ENCODER_FROZEN, RECONSTRUCTION, TRANSLATOR_FROZEN
from facelab.training.settings import TrainConfig

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def pass_for_step(step: int, cycle_enabled: bool = True) -> str:
    """Even steps reconstruct, odd steps run the cycle pass."""
    if cycle_enabled and step % 2 == 1:
        return CYCLE
    return RECONSTRUCTION


def cycle_phase(step: int) -> str:
    """Flips on every cycle step: the first one holds T fixed, the next one E_Psi."""
    return TRANSLATOR_FROZEN if (step // 2) % 2 == 0 else ENCODER_FROZEN


def learning_rate(config: TrainConfig, step: int) -> float:
    """Cosine annealing from ``lr`` to ``lr_min``, restarted every ``epoch_length`` steps."""
    t = step % config.epoch_length
    return config.lr_min + 0.5 * (config.lr - config.lr_min) * (1.0 + math.cos(math.pi * t / config.epoch_length))


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def effective_weights(config: TrainConfig, step: int) -> LossWeights:
    weights = config.loss_weights()
    if 0 <= config.landmark_stop_step <= step:
        return replace(weights, lmk=0.0)
    return weights


# ---------------------------------------------------------------------------
# Context
# ---------------------------------------------------------------------------


@dataclass
class TrainContext:
    """Networks, optimizer and fixed components shared by every step."""

    config: TrainConfig
    model: MorphableModel
    encoders: EncoderSet
    translator: Translator
    optimizer: torch.optim.Optimizer
    perceptual: FeatureExtractor
    emotion: FeatureExtractor
    library: TemplateLibrary | None = None
    psi_std: float = 1.0

    @property
    def expression_parameters(self) -> list[nn.Parameter]:
        return list(self.encoders.expression.parameters())

    def set_lr(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    def render(self, params):
        cfg = self.config
        vertices = decode(self.model, params)
        return render_geometry(
            vertices,
            params.camera,
            self.model.face_triangles,
            cfg.size,
            sigma=cfg.render_sigma,
            gamma=cfg.render_gamma,
        )


def _weighted(terms: dict[str, Tensor], weights: LossWeights) -> Tensor | None:
    total = None
    for name, value in terms.items():
        w = getattr(weights, name)
        if w == 0.0 or not value.requires_grad:
            continue
        total = w * value if total is None else total + w * value
    return total


def _accumulate(params: list[nn.Parameter], grads: tuple[Tensor | None, ...]) -> None:
    for p, g in zip(params, grads, strict=True):
        if g is None:
            continue
        p.grad = g.detach().clone() if p.grad is None else p.grad + g


def _check(value: Tensor, name: str, step: int, pass_name: str) -> float:
    out = float(value.detach())
    if not math.isfinite(out):
        raise NumericalError(f"Loss term {name!r} is {out} at step {step} ({pass_name} pass)")
    return out


# ---------------------------------------------------------------------------
# Passes
# ---------------------------------------------------------------------------


def reconstruction_step(ctx: TrainContext, batch: Batch, step: int) -> LossReport:
    """encode -> decode -> render -> mask -> translate, then one optimizer step.

    Photometric, perceptual, landmark and regularization terms update E_Psi and
    T; the emotion term reaches E_Psi only.
    """
    cfg = ctx.config
    rng = step_rng(cfg.seed, step)
    lr = learning_rate(cfg, step)
    ctx.set_lr(lr)
    weights = effective_weights(cfg, step)
    ctx.optimizer.zero_grad(set_to_none=True)

    params = encode(ctx.encoders, batch.images)
    render = ctx.render(params)
    exclude = render.face_mask.detach() if cfg.exclude_render_interior else None
    masked = mask_batch(batch.images, batch.landmarks, cfg.mask_ratio, cfg.mask_dilation, rng, exclude)
    output = translate(ctx.translator, render.image, stack_images(masked))

    terms = {
        "photo": photometric(output, batch.images),
        "vgg": perceptual(output, batch.images, ctx.perceptual),
        "lmk": landmark_loss(batch.landmarks, landmarks2d(ctx.model, params), cfg.size),
        "reg": expression_reg(params.expression_vector(), ctx.model.d_psi, cfg.reg_full_expression),
    }
    emo = emotion_loss(output, batch.images, ctx.emotion)
    report = LossReport(step=step, pass_name=RECONSTRUCTION, lr=lr)
    for name, value in terms.items():
        setattr(report, name, _check(value, name, step, RECONSTRUCTION))
    report.emo = _check(emo, "emo", step, RECONSTRUCTION)
    report.weighted_total = report.total(weights)

    main = _weighted(terms, weights)
    updated = False
    if weights.emo != 0.0 and emo.requires_grad:
        # T is held fixed for this term: its gradient only reaches E_Psi
        expression_params = ctx.expression_parameters
        grads = torch.autograd.grad(
            weights.emo * emo, expression_params, retain_graph=main is not None, allow_unused=True
        )
        _accumulate(expression_params, grads)
        updated = any(g is not None for g in grads)
    if main is not None:
        main.backward()
        updated = True
    if updated:
        ctx.optimizer.step()
    return report


def cycle_step(ctx: TrainContext, batch: Batch, step: int) -> LossReport:
    """Augment Psi, move the retained pixels, synthesize, re-encode and pull the parameters back.

    The encoding that supplies the original parameters is a fixed oracle.  On
    translator-frozen steps only E_Psi learns; on encoder-frozen steps only T.
    """
    cfg = ctx.config
    rng = step_rng(cfg.seed, step)
    lr = learning_rate(cfg, step)
    ctx.set_lr(lr)
    weights = effective_weights(cfg, step)
    phase = cycle_phase(step)
    ctx.optimizer.zero_grad(set_to_none=True)

    with torch.no_grad():
        params = encode(ctx.encoders, batch.images)
    d_psi = ctx.model.d_psi
    plan = cfg.augment_plan(ctx.psi_std)
    psi_aug, modes = augment_expressions(params.expression_vector(), d_psi, plan, ctx.library, rng)
    params_aug = params.with_expression_vector(psi_aug)

    masked = mask_batch(batch.images, batch.landmarks, cfg.mask_ratio, cfg.mask_dilation, rng)
    moved = []
    for b, item in enumerate(masked):
        old, new = params.select(b), params_aug.select(b)
        item = associate_vertices(item, ctx.model, old)
        moved.append(transfer_pixels(item, ctx.model, old, new, cfg.mask_dilation))
    dropped = sum(m.dropped for m in moved)

    with torch.no_grad():
        render_aug = ctx.render(params_aug)
    if phase == TRANSLATOR_FROZEN:
        with torch.no_grad():
            synthesized = translate(ctx.translator, render_aug.image, stack_images(moved))
        predicted = encode(ctx.encoders, synthesized)
    else:
        synthesized = translate(ctx.translator, render_aug.image, stack_images(moved))
        with frozen(ctx.encoders.expression):
            predicted = encode(ctx.encoders, synthesized)

    terms = {
        "cycle_exp": cycle_expression(psi_aug, predicted.expression_vector()),
        "cycle_shape": cycle_shape(params.shape, predicted.shape),
    }
    report = LossReport(step=step, pass_name=CYCLE, lr=lr, dropped_pixels=dropped)
    for name, value in terms.items():
        setattr(report, name, _check(value, name, step, CYCLE))
    report.weighted_total = report.total(weights)

    total = _weighted(terms, weights)
    if total is not None:
        total.backward()
        ctx.optimizer.step()
    logger.debug("Cycle step %d (%s): modes %s, %d pixels dropped", step, phase, ",".join(modes), dropped)
    return report
