"""Exact point-to-triangle distances and scan-to-mesh statistics."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from facelab.errors import ContractViolation

# Point x triangle pairs evaluated per chunk
_CHUNK_PAIRS = 2_000_000


class ScanStats(NamedTuple):
    mean: float
    median: float
    max: float


def _as_numpy(arr) -> np.ndarray:
    if hasattr(arr, "detach"):
        arr = arr.detach().cpu().numpy()
    return np.asarray(arr, dtype=np.float64)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...k,...k->...", a, b)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    ok = den != 0
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def closest_points_on_triangles(
    points: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Closest point on each triangle for each point (Voronoi-region walk).

    ``points`` is ``(P, 1, 3)``, corners ``(1, F, 3)``; returns ``(P, F, 3)``.
    Region precedence follows the scalar algorithm: A, B, AB, C, AC, BC, interior.
    """
    ab = b - a
    ac = c - a
    ap = points - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)

    bp = points - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)

    cp = points - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    denom = va + vb + vc
    v = _safe_div(vb, denom)[..., None]
    w = _safe_div(vc, denom)[..., None]
    result = a + ab * v + ac * w

    # Overwrite from lowest to highest precedence
    w_bc = _safe_div(d4 - d3, (d4 - d3) + (d5 - d6))[..., None]
    region = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    result = np.where(region[..., None], b + w_bc * (c - b), result)

    w_ac = _safe_div(d2, d2 - d6)[..., None]
    region = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    result = np.where(region[..., None], a + w_ac * ac, result)

    region = (d6 >= 0) & (d5 <= d6)
    result = np.where(region[..., None], np.broadcast_to(c, result.shape), result)

    v_ab = _safe_div(d1, d1 - d3)[..., None]
    region = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    result = np.where(region[..., None], a + v_ab * ab, result)

    region = (d3 >= 0) & (d4 <= d3)
    result = np.where(region[..., None], np.broadcast_to(b, result.shape), result)

    region = (d1 <= 0) & (d2 <= 0)
    result = np.where(region[..., None], np.broadcast_to(a, result.shape), result)
    return result


def point_to_mesh(
    points, vertices, triangles
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-point exact distance to a triangle mesh.

    Returns ``(distances (P,), triangle_index (P,), closest_point (P, 3))``.
    """
    pts = _as_numpy(points).reshape(-1, 3)
    verts = _as_numpy(vertices).reshape(-1, 3)
    tris = np.asarray(triangles.detach().cpu() if hasattr(triangles, "detach") else triangles)
    tris = tris.astype(np.int64).reshape(-1, 3)
    if len(pts) == 0:
        raise ContractViolation("Scan point set is empty")
    if len(tris) == 0:
        raise ContractViolation("Mesh has no triangles")

    a = verts[tris[:, 0]][None]
    b = verts[tris[:, 1]][None]
    c = verts[tris[:, 2]][None]

    distances = np.empty(len(pts))
    tri_index = np.empty(len(pts), dtype=np.int64)
    closest = np.empty((len(pts), 3))
    step = max(1, _CHUNK_PAIRS // len(tris))
    for start in range(0, len(pts), step):
        chunk = pts[start : start + step, None, :]
        cand = closest_points_on_triangles(chunk, a, b, c)
        d2 = ((cand - chunk) ** 2).sum(axis=-1)
        best = np.argmin(d2, axis=1)
        rows = np.arange(len(best))
        distances[start : start + step] = np.sqrt(d2[rows, best])
        tri_index[start : start + step] = best
        closest[start : start + step] = cand[rows, best]
    return distances, tri_index, closest


def scan_to_mesh(points, vertices, triangles) -> ScanStats:
    """Mean, median and max of exact point-to-surface distances."""
    distances, _, _ = point_to_mesh(points, vertices, triangles)
    return ScanStats(
        mean=float(np.mean(distances)),
        median=float(np.median(distances)),
        max=float(np.max(distances)),
    )


def barycentric(point: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points already lying on their triangles, ``(..., 3)``."""
    v0, v1, v2 = b - a, c - a, point - a
    d00, d01, d11 = _dot(v0, v0), _dot(v0, v1), _dot(v1, v1)
    d20, d21 = _dot(v2, v0), _dot(v2, v1)
    den = d00 * d11 - d01 * d01
    v = _safe_div(d11 * d20 - d01 * d21, den)
    w = _safe_div(d00 * d21 - d01 * d20, den)
    return np.stack([1.0 - v - w, v, w], axis=-1)
