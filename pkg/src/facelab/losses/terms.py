"""Loss terms of the reconstruction and cycle passes."""

from __future__ import annotations

import torch
from torch import Tensor

from facelab.errors import ContractViolation
from facelab.losses.features import FeatureExtractor


def photometric(rendered: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over pixels and channels."""
    return (rendered - target).abs().mean()


def perceptual(rendered: Tensor, target: Tensor, extractor: FeatureExtractor) -> Tensor:
    """Sum over scales of the mean absolute feature difference."""
    total = rendered.new_zeros(())
    for fa, fb in zip(extractor(rendered), extractor(target), strict=True):
        total = total + (fa - fb).abs().mean()
    return total


def landmark_loss(target: Tensor, predicted: Tensor, size: tuple[int, int]) -> Tensor:
    """Sum over landmarks of squared distance in size-normalized coordinates, averaged over the batch.

    ``target`` and ``predicted`` are ``(B, K, 2)`` pixel positions; x is divided
    by W and y by H.
    """
    if target.shape != predicted.shape:
        raise ContractViolation(f"Landmark shapes differ: {tuple(target.shape)} vs {tuple(predicted.shape)}")
    height, width = size
    scale = target.new_tensor([width, height])
    diff = (predicted - target) / scale
    return (diff * diff).sum(dim=(-1, -2)).mean()


def expression_reg(psi: Tensor, d_psi: int, include_jaw_eyelids: bool = False) -> Tensor:
    """``||psi_expr||^2`` (batch mean); optionally over the full Psi vector."""
    part = psi if include_jaw_eyelids else psi[..., :d_psi]
    return (part * part).sum(dim=-1).mean()


def emotion_loss(rendered: Tensor, target: Tensor, extractor: FeatureExtractor) -> Tensor:
    """Squared distance of emotion descriptors, batch mean."""
    (fa,) = extractor(rendered)
    (fb,) = extractor(target)
    return ((fa - fb) ** 2).sum(dim=-1).mean()


def cycle_expression(psi_aug: Tensor, psi_pred: Tensor) -> Tensor:
    """MSE over the full Psi vector (expression, eyelids, jaw)."""
    return torch.mean((psi_pred - psi_aug) ** 2)


def cycle_shape(beta_orig: Tensor, beta_pred: Tensor) -> Tensor:
    """MSE over beta; zero when beta is empty."""
    if beta_orig.numel() == 0:
        return beta_orig.new_zeros(())
    return torch.mean((beta_pred - beta_orig) ** 2)
