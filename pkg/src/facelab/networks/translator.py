"""U-shaped image-to-image translator T(S (+) M(I)) -> I'."""

from __future__ import annotations

import logging

import torch
from torch import Tensor, nn

from facelab.errors import ConfigurationError, ContractViolation
from facelab.networks import TranslatorConfig
from facelab.networks.encoder import group_count

logger = logging.getLogger(__name__)

IN_CHANNELS = 4  # S + masked RGB
OUT_CHANNELS = 3


def _conv_block(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    kernel = 4 if stride == 2 else 3
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=1),
        nn.GroupNorm(group_count(out_ch), out_ch),
        nn.LeakyReLU(0.2, inplace=True),
    )


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GroupNorm(group_count(channels), channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.GroupNorm(group_count(channels), channels),
        )

    def forward(self, x: Tensor) -> Tensor:
        return torch.relu(x + self.body(x))


class UpBlock(nn.Module):
    """Transposed-conv upsampling, then concatenation with the skip tensor and a conv."""

    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1)
        self.fuse = _conv_block(out_ch + skip_ch, out_ch)

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        return self.fuse(torch.cat([self.up(x), skip], dim=1))


class Translator(nn.Module):
    """Three halving encoder blocks, a residual bottleneck at H/8 x W/8, three doubling decoder blocks.

    With ``skip_connections=False`` the decoder receives zeros in place of the
    skip tensors; the parameter count stays identical.
    """

    def __init__(self, config: TranslatorConfig, seed: int = 0):
        super().__init__()
        height, width = config.image_size
        if height % 8 or width % 8:
            raise ConfigurationError(f"Translator needs H and W divisible by 8, got {height}x{width}")
        self.config = config
        c3 = config.bottleneck_channels
        c2 = max(c3 // 2, 1)
        c1 = max(c3 // 4, 1)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.down1 = _conv_block(IN_CHANNELS, c1, stride=2)
            self.down2 = _conv_block(c1, c2, stride=2)
            self.down3 = _conv_block(c2, c3, stride=2)
            self.bottleneck = nn.Sequential(*(ResidualBlock(c3) for _ in range(config.residual_blocks)))
            self.up1 = UpBlock(c3, c2, c2)
            self.up2 = UpBlock(c2, c1, c1)
            self.up3 = UpBlock(c1, IN_CHANNELS, c1)
            self.head = nn.Conv2d(c1, OUT_CHANNELS, 1)

    def _skip(self, tensor: Tensor) -> Tensor:
        return tensor if self.config.skip_connections else torch.zeros_like(tensor)

    def bottleneck_features(self, x: Tensor) -> Tensor:
        return self.bottleneck(self.down3(self.down2(self.down1(x))))

    def forward(self, x: Tensor) -> Tensor:
        """``x`` is channels-first ``(B, 4, H, W)``; returns ``(B, 3, H, W)`` in (0, 1)."""
        e1 = self.down1(x)
        e2 = self.down2(e1)
        z = self.bottleneck(self.down3(e2))
        d = self.up1(z, self._skip(e2))
        d = self.up2(d, self._skip(e1))
        d = self.up3(d, self._skip(x))
        return torch.sigmoid(self.head(d))


def translate(translator: Translator, geometry: Tensor, masked: Tensor) -> Tensor:
    """I' from the geometry image ``(B, H, W)`` and masked images ``(B, H, W, 3)``."""
    height, width = translator.config.image_size
    if geometry.shape[-2:] != masked.shape[1:3]:
        raise ContractViolation(
            f"Geometry {tuple(geometry.shape)} and masked image {tuple(masked.shape)} differ in size"
        )
    if geometry.shape[-2] % 8 or geometry.shape[-1] % 8:
        raise ConfigurationError(f"Image size must be divisible by 8, got {tuple(geometry.shape[-2:])}")
    if (geometry.shape[-2], geometry.shape[-1]) != (height, width):
        raise ContractViolation(f"Translator built for {height}x{width}, got {tuple(geometry.shape[-2:])}")
    x = torch.cat([geometry[:, None], masked.permute(0, 3, 1, 2)], dim=1)
    return translator(x).permute(0, 2, 3, 1)
