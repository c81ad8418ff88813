"""Iterative template fitting: recover per-frame Psi and rigid pose with identity held fixed.

Each frame minimizes ``mean_v ||v(x) - target_v||^2 + lam * ||Psi||^2`` over
``x = (pose, translation, Psi)`` with damped Gauss-Newton steps and step
halving, so every accepted iterate lowers the objective.  Point-cloud targets
use closest-point correspondences recomputed at the start of each iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from facelab.errors import ContractViolation, FittingDivergedError
from facelab.face import N_EYELIDS, N_POSE, FaceParams
from facelab.face.metrics import barycentric, point_to_mesh
from facelab.face.model import MorphableModel, decode

logger = logging.getLogger(__name__)

REGULARIZATION = 1e-6
REL_TOL = 1e-6
TOL_WINDOW = 20
MAX_ITERATIONS = 2000
DIVERGENCE_PATIENCE = 200
ABS_TOL = 1e-14
_MAX_HALVINGS = 30


@dataclass
class FitResult:
    psi: Tensor  # (T, d_psi + 5)
    pose: Tensor  # (T, 3)
    translation: Tensor  # (T, 3)
    residuals: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    histories: list[list[float]] = field(default_factory=list)


class _FrameProblem:
    """Residuals of one frame as a function of the packed parameter vector."""

    def __init__(self, model: MorphableModel, beta: Tensor, target: Tensor, as_points: bool):
        self.model = model
        self.beta = beta
        self.target = target
        self.as_points = as_points
        self.n_points = target.shape[0]
        self.faces: Tensor | None = None
        self.bary: Tensor | None = None

    def unpack(self, x: Tensor) -> tuple[FaceParams, Tensor]:
        d_psi = self.model.d_psi
        pose, trans, psi = x[:N_POSE], x[N_POSE : N_POSE + 3], x[N_POSE + 3 :]
        params = FaceParams(
            shape=self.beta,
            expression=psi[None, :d_psi],
            eyelids=psi[None, d_psi : d_psi + N_EYELIDS],
            jaw=psi[None, d_psi + N_EYELIDS :],
            pose=pose[None],
            camera=x.new_tensor([[1.0, 0.0, 0.0]]),
        )
        return params, trans

    def vertices(self, x: Tensor) -> Tensor:
        params, trans = self.unpack(x)
        return decode(self.model, params)[0] + trans

    def update_correspondences(self, x: Tensor) -> None:
        if not self.as_points:
            return
        verts = self.vertices(x).detach()
        tris = self.model.triangles
        _, tri_index, closest = point_to_mesh(self.target, verts, tris)
        corners = verts[tris[torch.from_numpy(tri_index)]].numpy()
        bary = barycentric(closest, corners[:, 0], corners[:, 1], corners[:, 2])
        self.faces = tris[torch.from_numpy(tri_index)]
        self.bary = torch.from_numpy(bary).to(x.dtype)

    def residual(self, x: Tensor) -> Tensor:
        verts = self.vertices(x)
        if self.as_points:
            surface = (self.bary[..., None] * verts[self.faces]).sum(dim=1)
            return (surface - self.target).reshape(-1)
        return (verts - self.target).reshape(-1)

    def objective(self, x: Tensor, lam: float) -> float:
        r = self.residual(x)
        psi = x[N_POSE + 3 :]
        return float((r @ r) / self.n_points + lam * (psi @ psi))


def _fit_frame(
    problem: _FrameProblem, x0: Tensor, lam: float, max_iterations: int
) -> tuple[Tensor, float, int, list[float]]:
    n = x0.numel()
    reg_mask = torch.zeros(n, dtype=x0.dtype)
    reg_mask[N_POSE + 3 :] = 1.0
    damping = 1e-6
    x = x0.clone()
    problem.update_correspondences(x)
    current = problem.objective(x, lam)
    history = [current]
    stalled = 0

    for iteration in range(1, max_iterations + 1):
        if current < ABS_TOL:
            return x, current, iteration - 1, history
        problem.update_correspondences(x)
        current = problem.objective(x, lam)
        r = problem.residual(x).detach()
        jac = torch.autograd.functional.jacobian(
            problem.residual, x, vectorize=True, strategy="forward-mode"
        )
        grad = 2.0 * (jac.T @ r) / problem.n_points + 2.0 * lam * reg_mask * x
        hess = 2.0 * (jac.T @ jac) / problem.n_points + torch.diag(2.0 * lam * reg_mask)

        accepted = False
        step = -torch.linalg.solve(hess + damping * torch.eye(n, dtype=x.dtype), grad)
        if float(step.norm()) <= 1e-12 * (1.0 + float(x.norm())):
            return x, current, iteration, history
        for _ in range(_MAX_HALVINGS):
            candidate = x + step
            value = problem.objective(candidate, lam)
            if np.isfinite(value) and value < current:
                accepted = True
                break
            step = 0.5 * step

        if accepted:
            x, current = candidate, value
            history.append(current)
            stalled = 0
            damping = max(damping / 3.0, 1e-12)
        else:
            stalled += 1
            damping *= 10.0
            if stalled >= DIVERGENCE_PATIENCE:
                raise FittingDivergedError(
                    f"Template fit made no progress for {stalled} iterations (objective {current:.3e})"
                )
            continue

        if len(history) > TOL_WINDOW:
            past = history[-TOL_WINDOW - 1]
            if (past - current) / max(past, 1e-300) < REL_TOL:
                return x, current, iteration, history
    return x, current, max_iterations, history


def fit_template(
    targets: list,
    model: MorphableModel,
    neutral_beta,
    regularization: float = REGULARIZATION,
    max_iterations: int = MAX_ITERATIONS,
) -> FitResult:
    """Fit Psi, pose and translation per frame of a mesh or point-cloud sequence.

    Targets with exactly ``n_vertices`` rows are treated as meshes in vertex
    correspondence; anything else as a point cloud.  Each frame starts from
    the previous frame's solution.
    """
    if not targets:
        raise ContractViolation("Template fitting needs at least one target frame")
    model64 = model.to(torch.float64)
    beta = torch.as_tensor(neutral_beta, dtype=torch.float64).reshape(1, -1)
    if beta.shape[1] != model.d_beta:
        raise ContractViolation(f"neutral beta has {beta.shape[1]} entries, model expects {model.d_beta}")

    n_params = N_POSE + 3 + model.d_expression
    x = torch.zeros(n_params, dtype=torch.float64)
    result_x = []
    result = FitResult(psi=torch.zeros(0), pose=torch.zeros(0), translation=torch.zeros(0))
    for frame, target in enumerate(targets):
        target = torch.as_tensor(np.asarray(target), dtype=torch.float64).reshape(-1, 3)
        if target.shape[0] == 0:
            raise ContractViolation(f"Target frame {frame} is empty")
        as_points = target.shape[0] != model.n_vertices
        problem = _FrameProblem(model64, beta, target, as_points)
        x, residual, iterations, history = _fit_frame(problem, x, regularization, max_iterations)
        logger.debug(
            "Frame %d: objective %.3e after %d iterations", frame, residual, iterations
        )
        result_x.append(x)
        result.residuals.append(residual)
        result.iterations.append(iterations)
        result.histories.append(history)

    packed = torch.stack(result_x).to(model.dtype)
    result.pose = packed[:, :N_POSE]
    result.translation = packed[:, N_POSE : N_POSE + 3]
    result.psi = packed[:, N_POSE + 3 :]
    return result


def fitted_vertices(model: MorphableModel, neutral_beta, result: FitResult) -> Tensor:
    """Decode a fit back to posed, translated vertices ``(T, n_v, 3)``."""
    frames = result.psi.shape[0]
    beta = torch.as_tensor(neutral_beta, dtype=model.dtype).reshape(1, -1).expand(frames, -1)
    params = FaceParams.zeros(model.d_beta, model.d_psi, batch=frames, dtype=model.dtype)
    params.shape = beta
    params = params.with_expression_vector(result.psi)
    params.pose = result.pose
    return decode(model, params) + result.translation[:, None, :]
