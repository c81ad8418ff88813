"""Face masking and sparse pixel guidance: data models."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import Tensor


@dataclass
class MaskedImage:
    """Input image with the face region removed except for a few retained pixels.

    image: ``(H, W, 3)`` in [0, 1]; zero where ``mask`` is set and no pixel is retained
    positions: ``(N, 2)`` long, retained pixel positions as ``(x, y)``
    values: ``(N, 3)`` RGB of the retained pixels
    mask: ``(H, W)`` bool, True where the face region was removed
    vertex_ids: ``(N,)`` long, associated model vertex per retained pixel, -1 for none
    dropped: retained pixels lost by the last ``transfer_pixels`` call
    """

    image: Tensor
    positions: Tensor
    values: Tensor
    mask: Tensor
    vertex_ids: Tensor
    dropped: int = 0

    @property
    def n_retained(self) -> int:
        return self.positions.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.mask.shape[0], self.mask.shape[1]

    def with_vertex_ids(self, vertex_ids: Tensor) -> MaskedImage:
        return replace(self, vertex_ids=vertex_ids)


def stack_images(items: list[MaskedImage]) -> Tensor:
    """Batch the masked images into ``(B, H, W, 3)``."""
    return torch.stack([m.image for m in items])
