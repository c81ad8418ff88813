"""Linear blendshape face model with one-joint jaw, rigid pose and orthographic camera.

The synthetic model is a smooth face-like height field over a square grid.
Vertex ``i`` sits at grid row ``i // n_side`` and column ``i % n_side``;
x points right, y points down (image convention) and z points towards the
camera.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import torch
from scipy.ndimage import gaussian_filter
from torch import Tensor

from facelab.errors import ConfigurationError, ContractViolation
from facelab.face import N_EYELIDS, FaceParams, ModelSpec

logger = logging.getLogger(__name__)

# Face region: ellipse (x / a)^2 + ((y - cy) / b)^2 <= 1
_FACE_A = 0.8
_FACE_B = 0.95
_FACE_CY = 0.05

# Jaw rig: weights blend in between these rows (model units, y down)
_JAW_Y0 = 0.2
_JAW_Y1 = 0.45
_JAW_PIVOT = (0.0, 0.0, -0.8)

# Eyes, used by the eyelid blendshapes and the landmark layout
_EYE_CENTERS = ((-0.34, -0.22), (0.34, -0.22))

# Canonical landmark positions (x, y): contour, brows, eyes, nose, mouth
_CANONICAL_LANDMARKS: tuple[tuple[float, float], ...] = (
    *(
        (0.72 * np.cos(a), _FACE_CY + 0.86 * np.sin(a))
        for a in np.linspace(-0.05 * np.pi, 1.05 * np.pi, 8)
    ),
    (-0.45, -0.45), (-0.2, -0.5), (0.2, -0.5), (0.45, -0.45),
    (-0.5, -0.22), (-0.18, -0.22), (0.18, -0.22), (0.5, -0.22),
    (0.0, -0.15), (0.0, 0.1), (-0.12, 0.22), (0.12, 0.22),
    (-0.3, 0.5), (0.0, 0.42), (0.3, 0.5), (0.0, 0.6),
)


@dataclass
class MorphableModel:
    """Template, bases, jaw rig and landmark embedding.

    Bases are ``(n_v, 3, d)`` tensors; ``triangles`` covers the whole grid and
    ``face_triangles`` the subset whose three corners lie in the face region
    (the part that gets rendered).
    """

    template: Tensor
    identity_basis: Tensor
    expression_basis: Tensor
    eyelid_basis: Tensor
    triangles: Tensor
    jaw_weights: Tensor
    jaw_pivot: Tensor
    landmark_indices: Tensor
    face_region: Tensor
    spec: ModelSpec
    seed: int

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def n_side(self) -> int:
        return self.spec.n_side

    @property
    def d_beta(self) -> int:
        return self.identity_basis.shape[2]

    @property
    def d_psi(self) -> int:
        return self.expression_basis.shape[2]

    @property
    def d_expression(self) -> int:
        """Length of the full expression vector Psi."""
        return self.d_psi + N_EYELIDS + 3

    @property
    def face_triangles(self) -> Tensor:
        in_face = torch.zeros(self.n_vertices, dtype=torch.bool, device=self.template.device)
        in_face[self.face_region] = True
        keep = in_face[self.triangles].all(dim=1)
        return self.triangles[keep]

    @property
    def dtype(self) -> torch.dtype:
        return self.template.dtype

    def to(self, *args, **kwargs) -> MorphableModel:
        """Move float tensors (dtype/device); index tensors only follow the device."""
        moved = {}
        for name in (
            "template",
            "identity_basis",
            "expression_basis",
            "eyelid_basis",
            "jaw_weights",
            "jaw_pivot",
        ):
            moved[name] = getattr(self, name).to(*args, **kwargs)
        device = moved["template"].device
        for name in ("triangles", "landmark_indices", "face_region"):
            moved[name] = getattr(self, name).to(device)
        return replace(self, **moved)

    def zero_params(self, batch: int = 1, scale: float = 1.0) -> FaceParams:
        return FaceParams.zeros(self.d_beta, self.d_psi, batch=batch, scale=scale, dtype=self.dtype)


# ---------------------------------------------------------------------------
# Synthetic model construction
# ---------------------------------------------------------------------------


def _grid(n_side: int) -> tuple[np.ndarray, np.ndarray]:
    coords = np.linspace(-1.0, 1.0, n_side)
    x, y = np.meshgrid(coords, coords, indexing="xy")
    return x, y


def _height_field(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Face-like relief: dome, nose, brow ridge, eye sockets, lips, chin."""
    z = 0.5 * np.exp(-(x**2 / 0.9 + y**2 / 1.2))
    z += 0.18 * np.exp(-(x**2 / 0.02 + (y - 0.05) ** 2 / 0.08))
    z += 0.06 * np.exp(-((y + 0.38) ** 2) / 0.01) * np.exp(-(x**2) / 0.3)
    for ex, ey in _EYE_CENTERS:
        z -= 0.06 * np.exp(-((x - ex) ** 2 + (y - ey) ** 2) / 0.012)
    z += 0.04 * np.exp(-(x**2 / 0.08 + (y - 0.5) ** 2 / 0.005))
    z += 0.05 * np.exp(-(x**2 / 0.05 + (y - 0.8) ** 2 / 0.02))
    return z


def _grid_triangles(n_side: int) -> np.ndarray:
    """Two triangles per grid cell, wound so flat normals point to +z."""
    tris = []
    for row in range(n_side - 1):
        for col in range(n_side - 1):
            i = row * n_side + col
            tris.append((i, i + 1, i + n_side))
            tris.append((i + 1, i + n_side + 1, i + n_side))
    return np.asarray(tris, dtype=np.int64)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _smooth_field(rng: np.random.Generator, n_side: int, width: float) -> np.ndarray:
    """Low-frequency random displacement field, shape ``(n_side, n_side, 3)``."""
    noise = rng.standard_normal((3, n_side, n_side))
    smooth = np.stack([gaussian_filter(c, sigma=width, mode="nearest") for c in noise])
    return np.moveaxis(smooth, 0, -1)


def _gram_schmidt(columns: list[np.ndarray]) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass."""
    basis: list[np.ndarray] = []
    for k, col in enumerate(columns):
        v = col.astype(np.float64).copy()
        start_norm = np.linalg.norm(v)
        for _ in range(2):
            for q in basis:
                v -= np.dot(q, v) * q
        norm = np.linalg.norm(v)
        if start_norm == 0 or norm < 1e-8 * start_norm:
            raise ConfigurationError(
                f"Basis column {k} is linearly dependent; requested dimensions exceed the available rank"
            )
        basis.append(v / norm)
    if not basis:
        return np.zeros((len(columns[0]) if columns else 0, 0))
    return np.stack(basis, axis=1)


def _select_landmarks(
    x: np.ndarray, y: np.ndarray, face_region: np.ndarray, count: int
) -> np.ndarray:
    """Greedy nearest free face-region vertex for each canonical position."""
    positions = list(_CANONICAL_LANDMARKS[:count])
    # Extra landmarks go on an inner ring
    for a in np.linspace(0.0, 2 * np.pi, max(0, count - len(positions)), endpoint=False):
        positions.append((0.45 * np.cos(a), _FACE_CY + 0.55 * np.sin(a)))

    if count > len(face_region):
        raise ConfigurationError(
            f"{count} landmarks requested but the face region has only {len(face_region)} vertices"
        )
    fx, fy = x.ravel()[face_region], y.ravel()[face_region]
    taken: set[int] = set()
    chosen: list[int] = []
    for px, py in positions:
        order = np.argsort((fx - px) ** 2 + (fy - py) ** 2, kind="stable")
        for j in order:
            idx = int(face_region[j])
            if idx not in taken:
                taken.add(idx)
                chosen.append(idx)
                break
    return np.asarray(chosen, dtype=np.int64)


def build_synthetic_model(spec: ModelSpec, seed: int) -> MorphableModel:
    """Deterministically build a face-like morphable model from ``spec`` and ``seed``."""
    spec.validate()
    n = spec.n_side
    x, y = _grid(n)
    z = _height_field(x, y)
    template = np.stack([x, y, z], axis=-1).reshape(-1, 3)

    ellipse = (x / _FACE_A) ** 2 + ((y - _FACE_CY) / _FACE_B) ** 2
    face_region = np.flatnonzero(ellipse.ravel() <= 1.0)
    if len(face_region) < 3:
        raise ConfigurationError(f"Grid of {n}x{n} leaves no usable face region")

    jaw_weights = _smoothstep((y - _JAW_Y0) / (_JAW_Y1 - _JAW_Y0)).ravel()

    rng = np.random.default_rng(seed)
    face_envelope = np.exp(-np.clip(ellipse - 1.0, 0.0, None) * 4.0)[..., None]
    columns: list[np.ndarray] = []
    for _ in range(spec.d_beta):
        columns.append(_smooth_field(rng, n, spec.smoothing).ravel())
    for _ in range(spec.d_psi):
        columns.append((_smooth_field(rng, n, spec.smoothing) * face_envelope).ravel())
    for ex, ey in _EYE_CENTERS:
        lid = np.exp(-((x - ex) ** 2 + (y - ey) ** 2) / 0.01)[..., None]
        direction = np.array([0.0, 1.0, -0.5])
        field = lid * direction + 0.05 * _smooth_field(rng, n, max(1.0, spec.smoothing / 2))
        columns.append(field.ravel())

    basis = _gram_schmidt(columns).reshape(n * n, 3, -1)
    d_beta, d_psi = spec.d_beta, spec.d_psi

    def _t(arr: np.ndarray, dtype=torch.float32) -> Tensor:
        return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)

    model = MorphableModel(
        template=_t(template),
        identity_basis=_t(basis[:, :, :d_beta]),
        expression_basis=_t(basis[:, :, d_beta : d_beta + d_psi]),
        eyelid_basis=_t(basis[:, :, d_beta + d_psi :]),
        triangles=_t(_grid_triangles(n), torch.long),
        jaw_weights=_t(jaw_weights),
        jaw_pivot=_t(np.asarray(_JAW_PIVOT)),
        landmark_indices=_t(
            _select_landmarks(x, y, face_region, spec.n_landmarks), torch.long
        ),
        face_region=_t(face_region, torch.long),
        spec=spec,
        seed=seed,
    )
    logger.info(
        "Built synthetic model: %d vertices, d_beta=%d, d_psi=%d, %d landmarks (seed=%d)",
        model.n_vertices,
        d_beta,
        d_psi,
        len(model.landmark_indices),
        seed,
    )
    return model


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def rotation_delta(axis_angle: Tensor) -> Tensor:
    """Rodrigues rotation minus identity, ``(B, 3) -> (B, 3, 3)``.

    Returning ``R - I`` keeps zero rotations exact: ``v + (R - I) v == v``.
    """
    theta2 = (axis_angle * axis_angle).sum(dim=-1)
    theta = torch.sqrt(theta2 + 1e-24)
    half = 0.5 * theta
    a = torch.sin(theta) / theta
    b = 2.0 * (torch.sin(half) / theta) ** 2

    rx, ry, rz = axis_angle.unbind(dim=-1)
    zero = torch.zeros_like(rx)
    k = torch.stack(
        [
            torch.stack([zero, -rz, ry], dim=-1),
            torch.stack([rz, zero, -rx], dim=-1),
            torch.stack([-ry, rx, zero], dim=-1),
        ],
        dim=-2,
    )
    return a[:, None, None] * k + b[:, None, None] * (k @ k)


def rotation_matrix(axis_angle: Tensor) -> Tensor:
    eye = torch.eye(3, dtype=axis_angle.dtype, device=axis_angle.device)
    return eye + rotation_delta(axis_angle)


def blendshapes(model: MorphableModel, params: FaceParams) -> Tensor:
    """Unposed vertices: template + B_id beta + B_exp psi + B_eye e, ``(B, n_v, 3)``."""
    verts = model.template.unsqueeze(0)
    verts = verts + torch.einsum("vcd,bd->bvc", model.identity_basis, params.shape)
    if model.d_psi:
        verts = verts + torch.einsum("vcd,bd->bvc", model.expression_basis, params.expression)
    verts = verts + torch.einsum("vcd,bd->bvc", model.eyelid_basis, params.eyelids)
    return verts


def decode(model: MorphableModel, params: FaceParams) -> Tensor:
    """Posed vertices ``(B, n_v, 3)``: blendshapes, weighted jaw rotation, global rotation."""
    if params.shape.shape[1] != model.d_beta or params.expression.shape[1] != model.d_psi:
        raise ContractViolation(
            f"FaceParams dims (beta={params.shape.shape[1]}, psi={params.expression.shape[1]}) "
            f"do not match model (beta={model.d_beta}, psi={model.d_psi})"
        )
    verts = blendshapes(model, params)

    rel = verts - model.jaw_pivot
    jaw_delta = torch.einsum("bij,bvj->bvi", rotation_delta(params.jaw), rel)
    verts = verts + model.jaw_weights[None, :, None] * jaw_delta

    pose_delta = torch.einsum("bij,bvj->bvi", rotation_delta(params.pose), verts)
    return verts + pose_delta


def project(vertices: Tensor, camera: Tensor) -> Tensor:
    """Orthographic projection to pixels: ``scale * (x, y) + (tx, ty)``.

    ``vertices`` is ``(B, n, 3)``, ``camera`` ``(B, 3)``; depth stays in
    ``vertices[..., 2]``.
    """
    scale = camera[:, 0, None, None]
    offset = camera[:, None, 1:3]
    return scale * vertices[..., :2] + offset


def landmarks2d(model: MorphableModel, params: FaceParams) -> Tensor:
    """Projected landmark positions ``(B, K, 2)`` in pixels."""
    points = project(decode(model, params), params.camera)
    return points[:, model.landmark_indices]


def vertex_normals(vertices: Tensor, triangles: Tensor) -> Tensor:
    """Area-weighted per-vertex normals ``(B, n_v, 3)``."""
    v0 = vertices[:, triangles[:, 0]]
    v1 = vertices[:, triangles[:, 1]]
    v2 = vertices[:, triangles[:, 2]]
    face_normals = torch.linalg.cross(v1 - v0, v2 - v0, dim=-1)
    normals = torch.zeros_like(vertices)
    for corner in range(3):
        normals = normals.index_add(1, triangles[:, corner], face_normals)
    return normals / normals.norm(dim=-1, keepdim=True).clamp_min(1e-12)
