"""Convex-hull face masks, sparse pixel retention and expression-driven pixel transfer."""

from __future__ import annotations

import logging

import numpy as np
import torch
from scipy.ndimage import binary_dilation
from scipy.spatial import ConvexHull
from torch import Tensor

from facelab.errors import ConfigurationError, ContractViolation
from facelab.face import FaceParams
from facelab.face.model import MorphableModel, decode, project, vertex_normals
from facelab.masking import MaskedImage

logger = logging.getLogger(__name__)

DEFAULT_RATIO = 0.01
DEFAULT_DILATION = 4
ASSOCIATION_RADIUS = 2.0  # pixels


def _numpy(points) -> np.ndarray:
    if isinstance(points, Tensor):
        points = points.detach().cpu().numpy()
    return np.asarray(points, dtype=np.float64)


def round_half_away(x: Tensor) -> Tensor:
    """Round to the nearest integer, halves away from zero."""
    return torch.sign(x) * torch.floor(x.abs() + 0.5)


def disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return xx * xx + yy * yy <= radius * radius


def face_mask_from_landmarks(
    landmarks, dilation_radius: int, size: tuple[int, int]
) -> Tensor:
    """Filled convex hull of ``(K, 2)`` landmarks at pixel centers, dilated by a disk.

    Pixel centers on the hull boundary count as inside.
    """
    pts = _numpy(landmarks).reshape(-1, 2)
    if len(pts) < 3:
        raise ContractViolation(f"Need at least 3 landmarks for a hull, got {len(pts)}")
    if np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9) < 2:
        raise ContractViolation("Landmarks are collinear; the convex hull is degenerate")
    if dilation_radius < 0:
        raise ConfigurationError(f"dilation_radius must be >= 0, got {dilation_radius}")

    height, width = size
    hull = ConvexHull(pts)
    # Facet equations: normal . p + offset <= 0 inside
    normals = hull.equations[:, :2]
    offsets = hull.equations[:, 2]
    ys, xs = np.mgrid[0:height, 0:width]
    centers = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    inside = (centers @ normals.T + offsets <= 1e-9).all(axis=1).reshape(height, width)
    if dilation_radius > 0:
        inside = binary_dilation(inside, structure=disk(dilation_radius))
    return torch.from_numpy(inside)


def retained_count(ratio: float, area: int) -> int:
    return int(np.floor(ratio * area + 0.5))


def apply_mask(
    image: Tensor,
    mask: Tensor,
    ratio: float,
    rng: np.random.Generator,
    exclude: Tensor | None = None,
) -> MaskedImage:
    """Zero the masked region of ``(H, W, 3)`` image, keeping ``round(ratio * area)`` random pixels.

    ``exclude`` (optional ``(H, W)`` bool) removes pixels from the sampling pool;
    the count is then taken over the remaining eligible pixels.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigurationError(f"Mask ratio must lie in [0, 1], got {ratio}")
    height, width = mask.shape
    eligible = mask if exclude is None else mask & ~exclude
    pool = np.flatnonzero(eligible.cpu().numpy().ravel())
    count = retained_count(ratio, len(pool))
    chosen = np.sort(rng.choice(pool, size=count, replace=False)) if count else pool[:0]

    flat = torch.from_numpy(chosen).long()
    ys, xs = flat // width, flat % width
    values = image[ys, xs]
    masked = image.clone()
    masked[mask] = 0.0
    masked[ys, xs] = values
    return MaskedImage(
        image=masked,
        positions=torch.stack([xs, ys], dim=1),
        values=values,
        mask=mask.clone(),
        vertex_ids=torch.full((count,), -1, dtype=torch.long),
    )


def mask_batch(
    images: Tensor,
    landmarks: Tensor,
    ratio: float,
    dilation_radius: int,
    rng: np.random.Generator,
    exclude: Tensor | None = None,
) -> list[MaskedImage]:
    """Mask every ``(B, H, W, 3)`` image from its own landmark hull."""
    size = (images.shape[1], images.shape[2])
    items = []
    for b in range(images.shape[0]):
        mask = face_mask_from_landmarks(landmarks[b], dilation_radius, size)
        items.append(
            apply_mask(images[b], mask, ratio, rng, None if exclude is None else exclude[b])
        )
    return items


# ---------------------------------------------------------------------------
# Pixel transfer
# ---------------------------------------------------------------------------


def _front_facing_face_vertices(model: MorphableModel, vertices: Tensor) -> Tensor:
    normals = vertex_normals(vertices, model.face_triangles)[0]
    region = model.face_region
    return region[normals[region, 2] > 0]


@torch.no_grad()
def associate_vertices(
    masked: MaskedImage, model: MorphableModel, params: FaceParams
) -> MaskedImage:
    """Attach to each retained pixel the nearest visible face vertex within 2 px.

    Visible means front-facing (vertex normal towards the camera) and inside the
    face region.  Pixels without such a vertex get id -1 and never move.
    """
    if masked.n_retained == 0:
        return masked
    vertices = decode(model, params)
    points = project(vertices, params.camera)[0]
    candidates = _front_facing_face_vertices(model, vertices)
    pixel = masked.positions.to(points.dtype)
    dist = torch.cdist(pixel, points[candidates])
    best, idx = dist.min(dim=1)
    ids = torch.where(best <= ASSOCIATION_RADIUS, candidates[idx], torch.full_like(idx, -1))
    return masked.with_vertex_ids(ids.long())


@torch.no_grad()
def transfer_pixels(
    masked: MaskedImage,
    model: MorphableModel,
    params_old: FaceParams,
    params_new: FaceParams,
    dilation_radius: int = DEFAULT_DILATION,
) -> MaskedImage:
    """Move retained pixels with their associated vertices from ``params_old`` to ``params_new``.

    ``x_new = round_half_away(x + d)`` with ``d`` the projected displacement of
    the associated vertex (the camera is part of the params).  The removed
    region of the result is the old mask united with the dilated hull of the
    new landmarks; pixels landing outside it or off-image are dropped, and on
    collisions the pixel whose vertex is nearer the camera wins (lower index on
    ties).
    """
    height, width = masked.size
    verts_old = decode(model, params_old)
    verts_new = decode(model, params_new)
    proj_old = project(verts_old, params_old.camera)[0]
    proj_new = project(verts_new, params_new.camera)[0]

    landmarks_new = proj_new[model.landmark_indices]
    region = masked.mask | face_mask_from_landmarks(landmarks_new, dilation_radius, (height, width))

    ids = masked.vertex_ids
    has_vertex = ids >= 0
    safe = ids.clamp_min(0)
    shift = torch.where(has_vertex[:, None], proj_new[safe] - proj_old[safe], torch.zeros_like(proj_new[safe]))
    depth = torch.where(has_vertex, verts_new[0, safe, 2], torch.full_like(shift[:, 0], -torch.inf))

    moved = round_half_away(masked.positions.to(shift.dtype) + shift).long()
    xs, ys = moved[:, 0], moved[:, 1]
    on_image = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    keep = on_image.clone()
    keep[on_image] = region[ys[on_image], xs[on_image]]

    # Collisions: sort by (pixel, -depth, index) and keep the first of each pixel
    index = np.arange(masked.n_retained)[keep.numpy()]
    flat = (ys * width + xs).numpy()[index]
    order = np.lexsort((index, -depth.numpy()[index], flat))
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat[order][1:] != flat[order][:-1]
    winners = torch.from_numpy(np.sort(index[order][first])).long()

    image = masked.image.clone()
    image[region] = 0.0
    positions = moved[winners]
    values = masked.values[winners]
    image[positions[:, 1], positions[:, 0]] = values
    dropped = masked.n_retained - len(winners)
    if dropped:
        logger.debug("Pixel transfer dropped %d of %d pixels", dropped, masked.n_retained)
    return MaskedImage(
        image=image,
        positions=positions,
        values=values,
        mask=region,
        vertex_ids=ids[winners],
        dropped=dropped,
    )
