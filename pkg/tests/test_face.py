import numpy as np
import pytest
import torch

from facelab.errors import ConfigurationError, ContractViolation
from facelab.face import FaceParams, ModelSpec
from facelab.face.io import export_obj, load_model, model_fingerprint, read_obj, save_model
from facelab.face.metrics import scan_to_mesh
from facelab.face.model import (
    build_synthetic_model,
    decode,
    landmarks2d,
    project,
    rotation_matrix,
)


def test_zero_params_decode_to_template(tiny_model):
    params = tiny_model.zero_params()
    assert torch.equal(decode(tiny_model, params)[0], tiny_model.template)


def test_landmarks_follow_landmark_indices(tiny_model):
    params = tiny_model.zero_params(batch=2, scale=12.0)
    params.expression = torch.randn(2, tiny_model.d_psi, generator=torch.Generator().manual_seed(0))
    points = project(decode(tiny_model, params), params.camera)
    assert torch.equal(landmarks2d(tiny_model, params), points[:, tiny_model.landmark_indices])


def test_landmark_gradient_matches_finite_differences(tiny_model):
    model = tiny_model.to(torch.float64)
    params = model.zero_params(scale=10.0)
    params.jaw = torch.tensor([[0.2, 0.03, -0.02]], dtype=torch.float64)
    params.pose = torch.tensor([[0.1, -0.05, 0.02]], dtype=torch.float64)
    psi = torch.linspace(-1.0, 1.0, model.d_psi, dtype=torch.float64)[None]

    def fn(expression):
        p = FaceParams(
            shape=params.shape,
            expression=expression,
            eyelids=params.eyelids,
            jaw=params.jaw,
            pose=params.pose,
            camera=params.camera,
        )
        return landmarks2d(model, p)

    analytic = torch.autograd.functional.jacobian(fn, psi)
    h = 1e-5
    numeric = torch.zeros_like(analytic)
    for k in range(model.d_psi):
        step = torch.zeros_like(psi)
        step[0, k] = h
        numeric[..., 0, k] = (fn(psi + step) - fn(psi - step)) / (2 * h)
    assert torch.allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_model_is_deterministic_in_seed():
    spec = ModelSpec(n_vertices=81, d_beta=2, d_psi=3, n_landmarks=8, smoothing=2.0)
    a = build_synthetic_model(spec, seed=3)
    b = build_synthetic_model(spec, seed=3)
    c = build_synthetic_model(spec, seed=4)
    assert model_fingerprint(a) == model_fingerprint(b)
    assert model_fingerprint(a) != model_fingerprint(c)


def test_bases_are_orthonormal(tiny_model):
    basis = torch.cat(
        [tiny_model.identity_basis, tiny_model.expression_basis, tiny_model.eyelid_basis], dim=2
    ).reshape(-1, tiny_model.d_beta + tiny_model.d_psi + 2)
    gram = basis.T.double() @ basis.double()
    assert torch.allclose(gram, torch.eye(gram.shape[0], dtype=torch.float64), atol=1e-5)


def test_non_square_vertex_count_is_rejected():
    with pytest.raises(ConfigurationError):
        build_synthetic_model(ModelSpec(n_vertices=80), seed=0)


def test_decode_rejects_mismatched_dimensions(tiny_model):
    params = FaceParams.zeros(tiny_model.d_beta + 1, tiny_model.d_psi)
    with pytest.raises(ContractViolation):
        decode(tiny_model, params)


def test_rotation_matrix_is_orthonormal():
    angles = torch.tensor([[0.3, -0.2, 0.5], [0.0, 0.0, 0.0]], dtype=torch.float64)
    rot = rotation_matrix(angles)
    eye = torch.eye(3, dtype=torch.float64).expand(2, 3, 3)
    assert torch.allclose(rot @ rot.transpose(1, 2), eye, atol=1e-12)
    assert torch.allclose(torch.linalg.det(rot), torch.ones(2, dtype=torch.float64))


def test_params_validate_rejects_non_positive_scale(tiny_model):
    params = tiny_model.zero_params(scale=0.0)
    with pytest.raises(ContractViolation):
        params.validate(tiny_model.d_beta, tiny_model.d_psi)


def test_with_expression_vector_keeps_identity_and_camera(tiny_model):
    params = tiny_model.zero_params(batch=2, scale=5.0)
    params.shape = torch.ones(2, tiny_model.d_beta)
    psi = torch.full((2, tiny_model.d_psi + 5), 0.5)
    moved = params.with_expression_vector(psi)
    assert torch.equal(moved.shape, params.shape)
    assert torch.equal(moved.camera, params.camera)
    assert torch.equal(moved.expression_vector(), psi)


def test_saved_model_loads_with_same_fingerprint(tmp_path, tiny_model):
    save_model(tiny_model, tmp_path / "model")
    loaded = load_model(tmp_path / "model")
    assert model_fingerprint(loaded) == model_fingerprint(tiny_model)
    assert torch.equal(loaded.landmark_indices, tiny_model.landmark_indices)


def test_obj_export_reads_back(tmp_path, tiny_model):
    path = export_obj(tmp_path / "face.obj", tiny_model.template, tiny_model.triangles)
    verts, tris = read_obj(path)
    assert np.allclose(verts, tiny_model.template.numpy(), atol=1e-6)
    assert np.array_equal(tris, tiny_model.triangles.numpy())


def test_scan_to_mesh_exact_distances():
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
    triangles = np.array([[0, 1, 2], [1, 3, 2]])
    points = np.array([[0.25, 0.25, 0.1], [0.5, 0.5, -0.2], [2.0, 0.0, 0.0]])
    stats = scan_to_mesh(points, vertices, triangles)
    assert stats.mean == pytest.approx(1.3 / 3)
    assert stats.median == pytest.approx(0.2)
    assert stats.max == pytest.approx(1.0)


def test_scan_to_mesh_rejects_empty_scan():
    with pytest.raises(ContractViolation):
        scan_to_mesh(np.zeros((0, 3)), np.eye(3), np.array([[0, 1, 2]]))
