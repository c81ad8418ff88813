"""Encoder branches and the image-to-image translator: architecture configs.

All image tensors at the module boundaries are channels-last ``(B, H, W, C)``
in [0, 1]; the networks permute internally.
"""

from dataclasses import dataclass

BRANCHES = ("expression", "shape", "pose")


@dataclass(frozen=True)
class EncoderConfig:
    """Per-branch convolutional backbone width and image size."""

    image_size: tuple[int, int] = (128, 128)
    width: int = 16  # channels of the first stage, doubled per stage
    d_beta: int = 16
    d_psi: int = 20


@dataclass(frozen=True)
class TranslatorConfig:
    image_size: tuple[int, int] = (128, 128)
    bottleneck_channels: int = 512
    residual_blocks: int = 4
    skip_connections: bool = True
