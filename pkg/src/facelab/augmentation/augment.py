"""The four cycle-pass augmentation modes with jaw/eyelid co-simulation."""

from __future__ import annotations

import logging

import numpy as np
import torch
from torch import Tensor

from facelab.augmentation import AugmentPlan, TemplateLibrary
from facelab.errors import ConfigurationError, ContractViolation
from facelab.face import N_EYELIDS

logger = logging.getLogger(__name__)

_MAX_DERANGEMENT_TRIES = 1000


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random permutation without fixed points (rejection sampling), ``n >= 2``."""
    if n < 2:
        raise ContractViolation(f"A derangement needs at least 2 elements, got {n}")
    for _ in range(_MAX_DERANGEMENT_TRIES):
        perm = rng.permutation(n)
        if not (perm == np.arange(n)).any():
            return perm
    # Cyclic shift as a last resort
    return np.roll(np.arange(n), 1)


def draw_modes(plan: AugmentPlan, batch: int, rng: np.random.Generator) -> list[str]:
    if plan.mode is not None:
        return [plan.mode] * batch
    modes = [m for m in plan.modes if batch >= 2 or m != "permute"]
    if not modes:
        raise ContractViolation("Only permute mode is enabled but the batch has a single element")
    return [modes[i] for i in rng.integers(0, len(modes), size=batch)]


def augment_expressions(
    psi: Tensor,
    d_psi: int,
    plan: AugmentPlan,
    library: TemplateLibrary | None,
    rng: np.random.Generator,
) -> tuple[Tensor, list[str]]:
    """Augmented copy of a ``(B, d_psi + 5)`` Psi batch and the mode used per sample.

    Only Psi is touched; shape, pose and camera are left to the caller.
    """
    plan.validate()
    batch = psi.shape[0]
    modes = draw_modes(plan, batch, rng)
    if "permute" in modes and batch < 2:
        raise ContractViolation("permute mode needs a batch of at least 2")
    if "inject" in modes and (library is None or len(library) == 0):
        raise ConfigurationError("Template injection is enabled but the template library is empty")

    source = psi.detach().cpu().numpy().astype(np.float64)
    out = source.copy()
    perm = derangement(batch, rng) if "permute" in modes else None
    for i, mode in enumerate(modes):
        if mode == "permute":
            out[i] = source[perm[i]]
        elif mode == "perturb":
            out[i, :d_psi] = source[i, :d_psi] + rng.normal(0.0, 1.0, size=d_psi) * plan.noise_scale
        elif mode == "inject":
            pick = int(rng.integers(0, len(library)))
            out[i] = library.vectors[pick].double().numpy()
        else:
            out[i, :d_psi] = 0.0

    # Jaw and eyelids are redrawn in every mode
    jaw0 = d_psi + N_EYELIDS
    for i, mode in enumerate(modes):
        lo, hi = plan.zero_mode_jaw_range if mode == "zero" else plan.jaw_range
        out[i, d_psi:jaw0] = rng.uniform(*plan.eyelid_range, size=N_EYELIDS)
        out[i, jaw0] = rng.uniform(lo, hi)
        out[i, jaw0 + 1 :] = rng.uniform(-plan.jaw_lateral, plan.jaw_lateral, size=2)

    return torch.from_numpy(out).to(dtype=psi.dtype, device=psi.device), modes
