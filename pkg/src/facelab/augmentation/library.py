"""Synthetic extreme-expression template library.

Each label gets a curated set of expression-basis directions plus a jaw
offset (opening, lateral swing, twist).  Magnitudes are drawn at 2-3 times
the mean training expression norm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from facelab.augmentation import TemplateLibrary
from facelab.augmentation.fitting import fit_template, fitted_vertices
from facelab.errors import NumericalError
from facelab.face.model import MorphableModel, decode

logger = logging.getLogger(__name__)

ROUND_TRIP_TOLERANCE = 1e-3

# label -> (direction slot offsets, jaw (open, lateral, twist))
EXTREME_EXPRESSIONS: dict[str, tuple[tuple[int, ...], tuple[float, float, float]]] = {
    "lips_back": ((0, 3), (0.05, 0.0, 0.0)),
    "rolling_lips": ((1, 4, 7), (0.1, 0.0, 0.0)),
    "mouth_side": ((2, 5), (0.15, 0.12, 0.0)),
    "kissing": ((3, 6), (0.05, 0.0, 0.0)),
    "high_smile": ((0, 1, 8), (0.2, 0.0, 0.0)),
    "mouth_up": ((4, 9), (0.0, 0.0, 0.05)),
    "mouth_middle": ((5, 10), (0.25, 0.0, 0.0)),
    "mouth_down": ((6, 11), (0.35, 0.0, 0.0)),
    "blow_cheeks": ((7, 12, 2), (0.0, 0.0, 0.0)),
    "cheeks_in": ((8, 13), (0.1, 0.0, 0.0)),
    "jaw": ((9,), (0.55, -0.1, 0.05)),
    "lips_up": ((10, 14), (0.1, 0.0, -0.05)),
}


@dataclass(frozen=True)
class LibrarySpec:
    labels: tuple[str, ...] = tuple(EXTREME_EXPRESSIONS)
    scale_range: tuple[float, float] = (2.0, 3.0)
    reference_norm: float = 1.0  # mean ||psi_expr|| of the training data
    verify: bool = True

    def __len__(self) -> int:
        return len(self.labels)


def _direction(d_psi: int, slots: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    vec = np.zeros(d_psi)
    if d_psi == 0:
        return vec
    for slot in slots:
        vec[slot % d_psi] += rng.choice((-1.0, 1.0)) * rng.uniform(0.6, 1.0)
    # Small spread over the remaining components keeps entries distinct
    vec += 0.1 * rng.normal(size=d_psi)
    return vec / np.linalg.norm(vec)


def build_extreme_library(
    model: MorphableModel, spec: LibrarySpec, rng: np.random.Generator
) -> TemplateLibrary:
    """One authored template per label; each is checked to round-trip through :func:`fit_template`."""
    d_psi = model.d_psi
    vectors = []
    for label in spec.labels:
        slots, (jaw_open, jaw_lateral, jaw_twist) = EXTREME_EXPRESSIONS[label]
        psi_expr = _direction(d_psi, slots, rng) * rng.uniform(*spec.scale_range) * spec.reference_norm
        eyelids = rng.uniform(0.0, 1.0, size=2)
        # Asymmetric jitter so mirrored labels never coincide
        jaw = np.array([jaw_open, jaw_lateral, jaw_twist]) + rng.uniform(-0.02, 0.02, size=3)
        vectors.append(np.concatenate([psi_expr, eyelids, jaw]))

    library = TemplateLibrary(
        names=list(spec.labels),
        vectors=torch.tensor(np.stack(vectors), dtype=model.dtype),
        provenance="authored",
        d_psi=d_psi,
    )
    if spec.verify:
        verify_library(model, library)
    logger.info("Built %d extreme-expression templates", len(library))
    return library


def template_meshes(model: MorphableModel, library: TemplateLibrary) -> torch.Tensor:
    params = model.zero_params(batch=len(library)).with_expression_vector(library.vectors.to(model.dtype))
    with torch.no_grad():
        return decode(model, params)


def verify_library(model: MorphableModel, library: TemplateLibrary) -> list[float]:
    """Max vertex error of each template after a fit round trip; raises if one exceeds tolerance."""
    meshes = template_meshes(model, library)
    if not torch.isfinite(meshes).all():
        raise NumericalError("A template decodes to a non-finite mesh")
    beta = torch.zeros(model.d_beta)
    errors = []
    for name, mesh in zip(library.names, meshes, strict=True):
        fit = fit_template([mesh], model, beta)
        recovered = fitted_vertices(model, beta, fit)[0]
        err = float((recovered - mesh).abs().max())
        errors.append(err)
        if err >= ROUND_TRIP_TOLERANCE:
            raise NumericalError(f"Template {name!r} does not round-trip: max vertex error {err:.2e}")
    return errors
