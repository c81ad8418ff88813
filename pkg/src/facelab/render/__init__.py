"""Differentiable monochrome rendering: data models."""

from dataclasses import dataclass

from torch import Tensor


@dataclass
class RenderOutput:
    """Geometry render of a batch.

    image: ``(B, H, W)`` shaded geometry S in [0, 1], background 0
    face_mask: ``(B, H, W)`` bool, pixels covered by the rendered face
    soft_coverage: ``(B, H, W)`` in [0, 1]
    """

    image: Tensor
    face_mask: Tensor
    soft_coverage: Tensor
