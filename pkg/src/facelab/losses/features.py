"""Fixed-weight feature extractors for the perceptual and emotion losses.

Weights are drawn once from a seeded generator and stored as buffers, so they
never appear among trainable parameters.  Pretrained networks can be plugged
in by registering another :class:`FeatureExtractor` under a new name.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Callable

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from facelab.errors import ConfigurationError

logger = logging.getLogger(__name__)

PYRAMID_CHANNELS = (16, 32, 64)
EMOTION_SEED_OFFSET = 7919


class FeatureExtractor(nn.Module, ABC):
    """Maps ``(B, H, W, 3)`` images in [0, 1] to features."""

    name: str = ""

    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = seed

    @abstractmethod
    def features(self, image: Tensor) -> list[Tensor]:
        """Feature tensors, one per scale (or a single descriptor)."""

    def forward(self, image: Tensor) -> list[Tensor]:
        return self.features(image)


_EXTRACTORS: dict[str, type[FeatureExtractor]] = {}


def register_extractor(name: str) -> Callable[[type[FeatureExtractor]], type[FeatureExtractor]]:
    def decorator(cls: type[FeatureExtractor]) -> type[FeatureExtractor]:
        cls.name = name
        _EXTRACTORS[name] = cls
        return cls

    return decorator


def get_extractor(name: str, seed: int = 0) -> FeatureExtractor:
    """Create a feature extractor by registered name."""
    cls = _EXTRACTORS.get(name)
    if cls is None:
        raise ConfigurationError(
            f"Unknown feature extractor: {name!r}. Choose from: {', '.join(_EXTRACTORS)}"
        )
    return cls(seed=seed).eval()


def available_extractors() -> list[str]:
    return list(_EXTRACTORS)


class _FixedPyramid(FeatureExtractor):
    """Three conv+ReLU stages with 2x average pooling in between."""

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        gen = torch.Generator().manual_seed(seed)
        in_ch = 3
        for i, out_ch in enumerate(PYRAMID_CHANNELS):
            fan_in = in_ch * 9
            weight = torch.randn(out_ch, in_ch, 3, 3, generator=gen) * math.sqrt(2.0 / fan_in)
            self.register_buffer(f"weight{i}", weight)
            in_ch = out_ch

    def pyramid(self, image: Tensor) -> list[Tensor]:
        x = image.permute(0, 3, 1, 2) - 0.5
        outputs = []
        for i in range(len(PYRAMID_CHANNELS)):
            if i:
                x = F.avg_pool2d(x, 2)
            weight = getattr(self, f"weight{i}").to(x.dtype)
            x = F.relu(F.conv2d(x, weight, padding=1))
            outputs.append(x)
        return outputs


@register_extractor("random-pyramid")
class RandomPyramid(_FixedPyramid):
    """Perceptual proxy: feature maps at three scales."""

    def features(self, image: Tensor) -> list[Tensor]:
        return self.pyramid(image)


@register_extractor("emotion-proxy")
class EmotionProxy(_FixedPyramid):
    """Expression-descriptor proxy: globally pooled pyramid features, one vector per image."""

    def __init__(self, seed: int = 0):
        # distinct from the random-pyramid weights of the same seed
        super().__init__(seed + EMOTION_SEED_OFFSET)

    def features(self, image: Tensor) -> list[Tensor]:
        pooled = [f.mean(dim=(2, 3)) for f in self.pyramid(image)]
        return [torch.cat(pooled, dim=1)]
