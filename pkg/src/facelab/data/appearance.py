"""Textured rendering used only to synthesize dataset images.

Per-vertex albedo comes from a seeded low-frequency color field; shading is
the same frontal Lambertian term as the geometry renderer plus an ambient
floor.  Nothing in the reconstruction pipeline imports this module.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from scipy.ndimage import gaussian_filter
from torch import Tensor

from facelab.errors import ConfigurationError
from facelab.face import FaceParams
from facelab.face.model import MorphableModel, decode, project
from facelab.render.rasterizer import DEFAULT_GAMMA, face_shading, rasterize

logger = logging.getLogger(__name__)

APPEARANCE_PREFIX = "appearance_"


@dataclass(frozen=True)
class AppearanceConfig:
    skin_tone: tuple[float, float, float] = (0.78, 0.60, 0.50)
    albedo_variation: float = 0.12
    albedo_smoothing: float = 3.0  # grid cells
    lip_tint: float = 0.25
    ambient: float = 0.35
    diffuse: float = 0.65
    background_smoothing: float = 0.12  # fraction of image side
    render_sigma: float = 2e-5

    def validate(self) -> None:
        if not all(0.0 <= c <= 1.0 for c in self.skin_tone):
            raise ConfigurationError("skin_tone channels must lie in [0, 1]")
        if self.ambient < 0 or self.diffuse < 0 or self.ambient + self.diffuse > 1.0 + 1e-9:
            raise ConfigurationError("ambient and diffuse must be >= 0 and sum to at most 1")
        if self.albedo_smoothing <= 0 or self.background_smoothing <= 0 or self.render_sigma <= 0:
            raise ConfigurationError("smoothing widths and render_sigma must be positive")

    @classmethod
    def from_mapping(cls, raw: dict) -> AppearanceConfig:
        """Pick ``appearance_*`` keys out of a flat run config."""
        known = {f.name for f in fields(cls)}
        values = {}
        for key, value in raw.items():
            if key.startswith(APPEARANCE_PREFIX) and key[len(APPEARANCE_PREFIX) :] in known:
                name = key[len(APPEARANCE_PREFIX) :]
                values[name] = tuple(value) if isinstance(value, list) else value
        config = cls(**values)
        config.validate()
        return config

    def to_dict(self) -> dict:
        return asdict(self)


def albedo_field(model: MorphableModel, config: AppearanceConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-vertex RGB albedo ``(n_v, 3)`` in [0, 1]."""
    side = model.n_side
    noise = rng.normal(size=(3, side, side))
    smooth = np.stack([gaussian_filter(ch, config.albedo_smoothing, mode="nearest") for ch in noise])
    smooth /= max(float(np.abs(smooth).max()), 1e-12)
    albedo = np.asarray(config.skin_tone)[:, None, None] + config.albedo_variation * smooth

    # Redden the lip band
    coords = np.linspace(-1.0, 1.0, side)
    x, y = np.meshgrid(coords, coords)
    lips = np.exp(-((x / 0.35) ** 2) - ((y - 0.42) / 0.07) ** 2)
    albedo[1] -= config.lip_tint * lips
    albedo[2] -= 0.5 * config.lip_tint * lips
    return np.clip(albedo.reshape(3, -1).T, 0.0, 1.0)


def background(size: tuple[int, int], config: AppearanceConfig, rng: np.random.Generator) -> np.ndarray:
    height, width = size
    sigma = config.background_smoothing * min(height, width)
    noise = rng.normal(size=(height, width, 3))
    smooth = np.stack([gaussian_filter(noise[..., c], sigma, mode="wrap") for c in range(3)], axis=-1)
    smooth = (smooth - smooth.min()) / max(float(smooth.max() - smooth.min()), 1e-12)
    base = rng.uniform(0.2, 0.8, size=3)
    return np.clip(0.6 * base + 0.4 * smooth, 0.0, 1.0)


@torch.no_grad()
def render_textured(
    model: MorphableModel,
    params: FaceParams,
    config: AppearanceConfig,
    seed: int,
    size: tuple[int, int],
) -> Tensor:
    """Textured render of one face (``params`` batch of 1) over a procedural background, ``(H, W, 3)``."""
    rng = np.random.default_rng(seed)
    albedo = torch.from_numpy(albedo_field(model, config, rng)).to(model.dtype)
    bg = torch.from_numpy(background(size, config, rng)).to(model.dtype)

    vertices = decode(model, params)
    points = project(vertices, params.camera)
    triangles = model.triangles
    shade = config.ambient + config.diffuse * face_shading(vertices, triangles)  # (1, F)
    corner = albedo[triangles][None] * shade[..., None, None]  # (1, F, 3, 3)
    color, coverage = rasterize(
        points, vertices[..., 2], triangles, corner, size, sigma=config.render_sigma, gamma=DEFAULT_GAMMA
    )
    cov = coverage[0, ..., None]
    return (cov * color[0] + (1.0 - cov) * bg).clamp(0.0, 1.0)
