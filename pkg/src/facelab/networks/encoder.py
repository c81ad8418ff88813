"""Three-branch parameter encoder: expression, shape and pose/camera."""

from __future__ import annotations

import logging

import torch
from torch import Tensor, nn

from facelab.errors import ContractViolation
from facelab.face import N_CAMERA, N_EYELIDS, N_JAW, N_POSE, FaceParams
from facelab.networks import BRANCHES, EncoderConfig
from facelab.networks.freezing import is_frozen

logger = logging.getLogger(__name__)

# Prior camera scale as a fraction of image width: the [-1, 1] face spans 75% of the frame
SCALE_FRACTION = 0.375
HEAD_INIT_STD = 1e-3


def group_count(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class ConvBackbone(nn.Module):
    """Four strided conv stages followed by global average pooling."""

    def __init__(self, width: int, in_channels: int = 3):
        super().__init__()
        layers: list[nn.Module] = []
        channels = in_channels
        for stage in range(4):
            out = width * 2**stage
            layers += [
                nn.Conv2d(channels, out, 3, stride=2, padding=1),
                nn.GroupNorm(group_count(out), out),
                nn.ReLU(inplace=True),
                nn.Conv2d(out, out, 3, padding=1),
                nn.GroupNorm(group_count(out), out),
                nn.ReLU(inplace=True),
            ]
            channels = out
        self.features = nn.Sequential(*layers)
        self.out_channels = channels

    def forward(self, x: Tensor) -> Tensor:
        return self.features(x).mean(dim=(2, 3))


class EncoderBranch(nn.Module):
    """Backbone + linear head whose bias holds the parameter prior."""

    def __init__(self, width: int, out_features: int):
        super().__init__()
        self.backbone = ConvBackbone(width)
        self.head = nn.Linear(self.backbone.out_channels, out_features)
        nn.init.normal_(self.head.weight, std=HEAD_INIT_STD)
        nn.init.zeros_(self.head.bias)

    def forward(self, image: Tensor) -> Tensor:
        return self.head(self.backbone(image))


class EncoderSet(nn.Module):
    """E_Psi, E_beta and E_Theta, each an independent :class:`EncoderBranch`."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        outputs = {
            "expression": config.d_psi + N_EYELIDS + N_JAW,
            "shape": config.d_beta,
            "pose": N_CAMERA + N_POSE,
        }
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.branches = nn.ModuleDict(
                {name: EncoderBranch(config.width, outputs[name]) for name in BRANCHES}
            )

    @property
    def expression(self) -> EncoderBranch:
        return self.branches["expression"]

    @property
    def shape(self) -> EncoderBranch:
        return self.branches["shape"]

    @property
    def pose(self) -> EncoderBranch:
        return self.branches["pose"]

    def frozen_flags(self) -> dict[str, bool]:
        return {name: is_frozen(branch) for name, branch in self.branches.items()}

    def check_image(self, image: Tensor) -> None:
        height, width = self.config.image_size
        if image.ndim != 4 or tuple(image.shape[1:]) != (height, width, 3):
            raise ContractViolation(
                f"Encoder expects images of shape (B, {height}, {width}, 3), got {tuple(image.shape)}"
            )

    def forward(self, image: Tensor) -> FaceParams:
        return encode(self, image)


def camera_from_raw(raw: Tensor, size: tuple[int, int]) -> Tensor:
    """Map raw head outputs to ``(scale, tx, ty)``; the exp keeps the scale positive."""
    height, width = size
    scale = SCALE_FRACTION * width * torch.exp(raw[:, 0])
    tx = width * (0.5 + raw[:, 1])
    ty = height * (0.5 + raw[:, 2])
    return torch.stack([scale, tx, ty], dim=1)


def prior_camera(size: tuple[int, int], batch: int = 1) -> Tensor:
    return camera_from_raw(torch.zeros(batch, N_CAMERA), size)


def params_from_outputs(
    config: EncoderConfig, expression: Tensor, shape: Tensor, pose: Tensor
) -> FaceParams:
    psi_expr, eyelids, jaw = FaceParams.split_expression_vector(expression, config.d_psi)
    return FaceParams(
        shape=shape,
        expression=psi_expr,
        eyelids=eyelids,
        jaw=jaw,
        pose=pose[:, N_CAMERA:],
        camera=camera_from_raw(pose[:, :N_CAMERA], config.image_size),
    )


def encode(encoders: EncoderSet, image: Tensor) -> FaceParams:
    """Regress face parameters from ``(B, H, W, 3)`` images."""
    encoders.check_image(image)
    x = image.permute(0, 3, 1, 2)
    return params_from_outputs(
        encoders.config,
        encoders.expression(x),
        encoders.shape(x),
        encoders.pose(x),
    )


def encode_expression(encoders: EncoderSet, image: Tensor) -> Tensor:
    """Psi only, ``(B, d_psi + 5)``; used by the cycle path's re-encoding."""
    encoders.check_image(image)
    return encoders.expression(image.permute(0, 3, 1, 2))
