"""Soft rasterizer: sigmoid edge coverage and softmax depth blending.

Pixel ``(row, col)`` has its center at image coordinates ``(x=col, y=row)``,
the same pixel units ``face.model.project`` produces.  Each triangle only
touches the pixels of its bounding box grown by the distance at which its
coverage falls below ~1e-9, so the cost scales with covered area rather than
``H * W * F``.
"""

from __future__ import annotations

import logging
import math

import torch
import torch.nn.functional as F
from torch import Tensor

from facelab.errors import ContractViolation
from facelab.face.model import project
from facelab.render import RenderOutput

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 1e-4  # normalized device units (squared)
DEFAULT_GAMMA = 1e-2  # depth temperature, model units
BACKGROUND = 0.0

# Coverage logit below which a pixel is treated as untouched
_CUTOFF_LOGIT = 20.0
_EPS = 1e-12


def _cross2(a: Tensor, b: Tensor) -> Tensor:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _edge_distance2(p: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Squared distance from points to finite segments ``ab``."""
    ab = b - a
    ap = p - a
    t = ((ap * ab).sum(-1) / (ab * ab).sum(-1).clamp_min(_EPS)).clamp(0.0, 1.0)
    diff = ap - t[..., None] * ab
    return (diff * diff).sum(-1)


def _candidate_pairs(
    corners: Tensor, valid: Tensor, height: int, width: int, margin: int
) -> tuple[Tensor, Tensor, Tensor]:
    """(face index, pixel x, pixel y) for every face/pixel pair worth evaluating."""
    with torch.no_grad():
        lo = torch.floor(corners.min(dim=1).values - margin)
        hi = torch.ceil(corners.max(dim=1).values + margin)
        x0 = lo[:, 0].clamp(0, width - 1).long()
        y0 = lo[:, 1].clamp(0, height - 1).long()
        x1 = hi[:, 0].clamp(-1, width - 1).long()
        y1 = hi[:, 1].clamp(-1, height - 1).long()
        # Boxes entirely off-image collapse to empty
        keep = valid & (hi[:, 0] >= 0) & (hi[:, 1] >= 0) & (lo[:, 0] <= width - 1) & (lo[:, 1] <= height - 1)
        keep &= (x1 >= x0) & (y1 >= y0)
        faces = torch.nonzero(keep).squeeze(1)
        empty = torch.zeros(0, dtype=torch.long, device=corners.device)
        if faces.numel() == 0:
            return empty, empty, empty
        x0, y0, x1, y1 = x0[faces], y0[faces], x1[faces], y1[faces]
        span_x = int((x1 - x0).max()) + 1
        span_y = int((y1 - y0).max()) + 1
        ox = torch.arange(span_x, device=corners.device)
        oy = torch.arange(span_y, device=corners.device)
        px = x0[:, None, None] + ox[None, None, :]
        py = y0[:, None, None] + oy[None, :, None]
        inside = (px <= x1[:, None, None]) & (py <= y1[:, None, None])
        face_ids = faces[:, None, None].expand_as(inside)
        px = px.expand_as(inside)
        py = py.expand_as(inside)
        return face_ids[inside], px[inside], py[inside]


def rasterize(
    points: Tensor,
    depth: Tensor,
    triangles: Tensor,
    corner_attributes: Tensor,
    size: tuple[int, int],
    sigma: float = DEFAULT_SIGMA,
    gamma: float = DEFAULT_GAMMA,
) -> tuple[Tensor, Tensor]:
    """Blend per-corner attributes over the image.

    Args:
        points: ``(B, n_v, 2)`` projected vertices in pixels.
        depth: ``(B, n_v)`` depth, larger is nearer the camera.
        triangles: ``(F, 3)`` vertex indices.
        corner_attributes: ``(B, F, 3, D)`` attribute per triangle corner,
            interpolated with clamped barycentrics.
        size: ``(H, W)``.

    Returns:
        ``(attributes (B, H, W, D), soft_coverage (B, H, W))``; attributes are
        the depth-softmax blend, not yet multiplied by coverage.
    """
    if sigma <= 0:
        raise ContractViolation(f"Softness sigma must be positive, got {sigma}")
    height, width = size
    batch = points.shape[0]
    n_attr = corner_attributes.shape[-1]
    half = 0.5 * min(height, width)
    margin = min(max(height, width), int(math.ceil(math.sqrt(_CUTOFF_LOGIT * sigma) * half)) + 1)

    images = []
    coverages = []
    for b in range(batch):
        corners = points[b][triangles]  # (F, 3, 2)
        corner_z = depth[b][triangles]  # (F, 3)
        p0, p1, p2 = corners[:, 0], corners[:, 1], corners[:, 2]
        area2 = _cross2(p1 - p0, p2 - p0)
        valid = area2.detach().abs() > 1e-9

        face_ids, px, py = _candidate_pairs(corners.detach(), valid, height, width, margin)
        coverage = torch.zeros(height * width, dtype=points.dtype, device=points.device)
        blended = torch.zeros(height * width, n_attr, dtype=points.dtype, device=points.device)
        if face_ids.numel() == 0:
            images.append(blended.view(height, width, n_attr))
            coverages.append(coverage.view(height, width))
            continue

        pix = torch.stack([px, py], dim=-1).to(points.dtype)
        a, bb, c = p0[face_ids], p1[face_ids], p2[face_ids]
        safe_area = torch.where(valid[face_ids], area2[face_ids], torch.ones_like(area2[face_ids]))

        w0 = _cross2(bb - pix, c - pix) / safe_area
        w1 = _cross2(c - pix, a - pix) / safe_area
        w2 = 1.0 - w0 - w1
        bary = torch.stack([w0, w1, w2], dim=-1)
        inside = (bary.detach() >= 0).all(dim=-1)

        d2 = torch.minimum(
            torch.minimum(_edge_distance2(pix, a, bb), _edge_distance2(pix, bb, c)),
            _edge_distance2(pix, c, a),
        )
        sign = torch.where(inside, 1.0, -1.0).to(points.dtype)
        logit = sign * d2 / (half * half) / sigma

        flat = py * width + px
        # coverage = 1 - prod(1 - D) accumulated in log space
        log_miss = torch.zeros_like(coverage).index_add(0, flat, F.logsigmoid(-logit))
        coverage = 1.0 - torch.exp(log_miss)

        clamped = bary.clamp(0.0, 1.0)
        clamped = clamped / clamped.sum(-1, keepdim=True).clamp_min(_EPS)
        z = (clamped * corner_z[face_ids]).sum(-1)
        score = z / gamma + F.logsigmoid(logit)
        peak = torch.full_like(coverage, -torch.inf).scatter_reduce(
            0, flat, score.detach(), reduce="amax", include_self=False
        )
        weight = torch.exp(score - peak[flat])
        norm = torch.zeros_like(coverage).index_add(0, flat, weight)
        weight = weight / norm[flat]

        attrs = (clamped[..., None] * corner_attributes[b][face_ids]).sum(dim=1)
        blended = blended.index_add(0, flat, weight[:, None] * attrs)

        images.append(blended.view(height, width, n_attr))
        coverages.append(coverage.view(height, width))
    return torch.stack(images), torch.stack(coverages)


def face_shading(vertices: Tensor, triangles: Tensor) -> Tensor:
    """Lambertian term ``max(0, n . l)`` per face under the frontal light ``l = (0, 0, 1)``."""
    v = vertices[:, triangles]  # (B, F, 3, 3)
    normal = torch.linalg.cross(v[:, :, 1] - v[:, :, 0], v[:, :, 2] - v[:, :, 0], dim=-1)
    length = normal.norm(dim=-1).clamp_min(_EPS)
    return (normal[..., 2] / length).clamp_min(0.0)


def render_geometry(
    vertices: Tensor,
    camera: Tensor,
    triangles: Tensor,
    size: tuple[int, int],
    sigma: float = DEFAULT_SIGMA,
    gamma: float = DEFAULT_GAMMA,
) -> RenderOutput:
    """Monochrome shaded render S of posed ``vertices`` ``(B, n_v, 3)``.

    Pass the face-region triangles only; the rest of the head is never drawn.
    """
    points = project(vertices, camera)
    shade = face_shading(vertices, triangles)
    corner_attr = shade[..., None, None].expand(-1, -1, 3, 1)
    blended, coverage = rasterize(
        points, vertices[..., 2], triangles, corner_attr, size, sigma=sigma, gamma=gamma
    )
    image = coverage * blended[..., 0]
    return RenderOutput(image=image, face_mask=coverage > 0.5, soft_coverage=coverage)


def hard_face_mask(render: RenderOutput, threshold: float = 0.5) -> Tensor:
    """Binary mask ``soft_coverage > threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ContractViolation(f"threshold must lie in (0, 1), got {threshold}")
    return render.soft_coverage > threshold
