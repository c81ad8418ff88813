"""Morphable face model: data models.

``FaceParams`` is batch-first: every field is a ``(B, d)`` tensor, a single
face is ``B == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
from torch import Tensor

from facelab.errors import ConfigurationError, ContractViolation

N_EYELIDS = 2
N_JAW = 3
N_POSE = 3
N_CAMERA = 3


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions of a synthetic morphable model."""

    n_vertices: int = 1089  # 33 x 33 grid
    d_beta: int = 16
    d_psi: int = 20
    n_landmarks: int = 24
    smoothing: float = 5.0  # Gaussian kernel width in grid cells

    @property
    def n_side(self) -> int:
        side = int(round(self.n_vertices**0.5))
        if side * side != self.n_vertices or side < 3:
            raise ConfigurationError(
                f"n_vertices={self.n_vertices} is not a perfect square grid (>= 3x3)"
            )
        return side

    def validate(self) -> None:
        side = self.n_side
        if self.d_beta < 0 or self.d_psi < 0:
            raise ConfigurationError("Basis dimensions must be non-negative")
        if self.d_beta + self.d_psi + N_EYELIDS > 3 * side * side:
            raise ConfigurationError(
                f"d_beta + d_psi + {N_EYELIDS} = {self.d_beta + self.d_psi + N_EYELIDS} "
                f"exceeds available rank {3 * side * side}"
            )
        if self.n_landmarks < 3:
            raise ConfigurationError("At least 3 landmarks are required")
        if self.smoothing <= 0:
            raise ConfigurationError("smoothing must be positive")


@dataclass
class FaceParams:
    """One batch of faces: shape, expression, eyelids, jaw, pose, camera.

    camera is ``(scale, tx, ty)`` in pixel units; jaw and pose are axis-angle
    rotations in radians.
    """

    shape: Tensor
    expression: Tensor
    eyelids: Tensor
    jaw: Tensor
    pose: Tensor
    camera: Tensor

    # -- grouped views -----------------------------------------------------

    @property
    def batch_size(self) -> int:
        return self.shape.shape[0]

    @property
    def d_psi(self) -> int:
        return self.expression.shape[1]

    def expression_vector(self) -> Tensor:
        """Psi = (psi_expr, eyelids, jaw), shape ``(B, d_psi + 5)``."""
        return torch.cat([self.expression, self.eyelids, self.jaw], dim=1)

    def global_vector(self) -> Tensor:
        """Theta = (camera, pose), shape ``(B, 6)``."""
        return torch.cat([self.camera, self.pose], dim=1)

    @staticmethod
    def split_expression_vector(psi: Tensor, d_psi: int) -> tuple[Tensor, Tensor, Tensor]:
        if psi.shape[-1] != d_psi + N_EYELIDS + N_JAW:
            raise ContractViolation(
                f"Expression vector has {psi.shape[-1]} entries, expected {d_psi + N_EYELIDS + N_JAW}"
            )
        return (
            psi[..., :d_psi],
            psi[..., d_psi : d_psi + N_EYELIDS],
            psi[..., d_psi + N_EYELIDS :],
        )

    def with_expression_vector(self, psi: Tensor) -> FaceParams:
        """Copy with Psi replaced; shape, pose and camera are kept as they are."""
        expression, eyelids, jaw = self.split_expression_vector(psi, self.d_psi)
        return FaceParams(
            shape=self.shape,
            expression=expression,
            eyelids=eyelids,
            jaw=jaw,
            pose=self.pose,
            camera=self.camera,
        )

    # -- construction ------------------------------------------------------

    @classmethod
    def zeros(
        cls,
        d_beta: int,
        d_psi: int,
        batch: int = 1,
        scale: float = 1.0,
        dtype: torch.dtype = torch.float32,
    ) -> FaceParams:
        camera = torch.zeros(batch, N_CAMERA, dtype=dtype)
        camera[:, 0] = scale
        return cls(
            shape=torch.zeros(batch, d_beta, dtype=dtype),
            expression=torch.zeros(batch, d_psi, dtype=dtype),
            eyelids=torch.zeros(batch, N_EYELIDS, dtype=dtype),
            jaw=torch.zeros(batch, N_JAW, dtype=dtype),
            pose=torch.zeros(batch, N_POSE, dtype=dtype),
            camera=camera,
        )

    @classmethod
    def cat(cls, items: list[FaceParams]) -> FaceParams:
        return cls(
            **{f.name: torch.cat([getattr(p, f.name) for p in items], dim=0) for f in fields(cls)}
        )

    def map(self, fn) -> FaceParams:
        """Apply ``fn`` to every field tensor."""
        return FaceParams(**{f.name: fn(getattr(self, f.name)) for f in fields(self)})

    def detach(self) -> FaceParams:
        return self.map(lambda t: t.detach())

    def to(self, *args, **kwargs) -> FaceParams:
        return self.map(lambda t: t.to(*args, **kwargs))

    def select(self, index) -> FaceParams:
        """Batch subset; ``index`` is an int, slice or index tensor."""
        if isinstance(index, int):
            index = slice(index, index + 1)
        return self.map(lambda t: t[index])

    # -- checks ------------------------------------------------------------

    def validate(self, d_beta: int, d_psi: int) -> None:
        expected = {
            "shape": d_beta,
            "expression": d_psi,
            "eyelids": N_EYELIDS,
            "jaw": N_JAW,
            "pose": N_POSE,
            "camera": N_CAMERA,
        }
        batch = self.batch_size
        for name, dim in expected.items():
            t = getattr(self, name)
            if t.ndim != 2 or t.shape[0] != batch or t.shape[1] != dim:
                raise ContractViolation(
                    f"FaceParams.{name} has shape {tuple(t.shape)}, expected ({batch}, {dim})"
                )
            if not torch.isfinite(t).all():
                raise ContractViolation(f"FaceParams.{name} is not finite")
        if not (self.camera[:, 0] > 0).all():
            raise ContractViolation("Camera scale must be positive")

    # -- JSON --------------------------------------------------------------

    def to_dict(self, index: int = 0) -> dict[str, list[float]]:
        return {f.name: [float(v) for v in getattr(self, f.name)[index].tolist()] for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict, dtype: torch.dtype = torch.float32) -> FaceParams:
        try:
            return cls(
                **{
                    f.name: torch.tensor(data[f.name], dtype=dtype).reshape(1, len(data[f.name]))
                    for f in fields(cls)
                }
            )
        except KeyError as exc:
            raise ContractViolation(f"Missing FaceParams field {exc.args[0]!r}") from exc
