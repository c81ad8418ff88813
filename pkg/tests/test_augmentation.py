import numpy as np
import pytest
import torch

from facelab.augmentation import MODES, AugmentPlan, TemplateLibrary
from facelab.augmentation.augment import augment_expressions, derangement, draw_modes
from facelab.augmentation.fitting import fit_template, fitted_vertices
from facelab.augmentation.library import LibrarySpec, build_extreme_library, template_meshes
from facelab.errors import ConfigurationError, ContractViolation
from facelab.face import FaceParams
from facelab.face.model import decode, rotation_matrix

D_PSI = 6


def _psi(batch=6, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(batch, D_PSI + 5, generator=gen)


def _library(count=3):
    vectors = torch.arange(count * (D_PSI + 5), dtype=torch.float32).reshape(count, -1)
    return TemplateLibrary(names=[f"t{i}" for i in range(count)], vectors=vectors, provenance="authored", d_psi=D_PSI)


def _check_jaw_and_eyelids(out, plan, modes):
    eyelids = out[:, D_PSI : D_PSI + 2]
    assert ((eyelids >= plan.eyelid_range[0]) & (eyelids <= plan.eyelid_range[1])).all()
    for row, mode in zip(out, modes, strict=True):
        lo, hi = plan.zero_mode_jaw_range if mode == "zero" else plan.jaw_range
        assert lo <= float(row[D_PSI + 2]) <= hi
        assert (row[D_PSI + 3 :].abs() <= plan.jaw_lateral).all()


def test_derangement_has_no_fixed_points():
    rng = np.random.default_rng(0)
    for n in range(2, 12):
        perm = derangement(n, rng)
        assert sorted(perm.tolist()) == list(range(n))
        assert not (perm == np.arange(n)).any()
    with pytest.raises(ContractViolation):
        derangement(1, rng)


def test_permute_takes_another_samples_expression():
    psi = _psi()
    plan = AugmentPlan(mode="permute")
    out, modes = augment_expressions(psi, D_PSI, plan, None, np.random.default_rng(0))
    for i in range(psi.shape[0]):
        sources = [j for j in range(psi.shape[0]) if torch.equal(out[i, :D_PSI], psi[j, :D_PSI])]
        assert sources and i not in sources
    _check_jaw_and_eyelids(out, plan, modes)


def test_zero_mode_clears_psi_expr_and_widens_jaw():
    plan = AugmentPlan(mode="zero")
    out, modes = augment_expressions(_psi(), D_PSI, plan, None, np.random.default_rng(1))
    assert (out[:, :D_PSI] == 0).all()
    _check_jaw_and_eyelids(out, plan, modes)


def test_perturb_without_noise_keeps_psi_expr():
    psi = _psi()
    plan = AugmentPlan(mode="perturb", noise_scale=0.0)
    out, _ = augment_expressions(psi, D_PSI, plan, None, np.random.default_rng(2))
    assert torch.allclose(out[:, :D_PSI], psi[:, :D_PSI])


def test_inject_uses_library_templates():
    library = _library()
    plan = AugmentPlan(mode="inject")
    out, modes = augment_expressions(_psi(), D_PSI, plan, library, np.random.default_rng(3))
    templates = [v[:D_PSI] for v in library.vectors]
    for row in out:
        assert any(torch.equal(row[:D_PSI], t) for t in templates)
    _check_jaw_and_eyelids(out, plan, modes)


def test_inject_without_library_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        augment_expressions(_psi(), D_PSI, AugmentPlan(mode="inject"), None, np.random.default_rng(0))


def test_single_sample_batch_never_permutes():
    with pytest.raises(ContractViolation):
        augment_expressions(_psi(batch=1), D_PSI, AugmentPlan(mode="permute"), None, np.random.default_rng(0))
    modes = draw_modes(AugmentPlan(), 1, np.random.default_rng(0))
    assert modes[0] != "permute"


def test_input_is_not_modified_and_dtype_is_kept():
    psi = _psi().double()
    original = psi.clone()
    out, _ = augment_expressions(psi, D_PSI, AugmentPlan(), _library(), np.random.default_rng(4))
    assert torch.equal(psi, original)
    assert out.dtype == torch.float64


def test_unknown_mode_is_rejected():
    with pytest.raises(ConfigurationError):
        AugmentPlan(mode="smile").validate()
    with pytest.raises(ConfigurationError):
        AugmentPlan(jaw_range=(0.0, 0.9)).validate()


def test_library_save_and_load(tmp_path):
    library = _library()
    loaded = TemplateLibrary.load(library.save(tmp_path / "templates.json"))
    assert loaded.names == library.names
    assert loaded.d_psi == D_PSI
    assert torch.equal(loaded.vectors, library.vectors)


def test_unknown_provenance_is_rejected():
    with pytest.raises(ConfigurationError):
        TemplateLibrary(names=[], vectors=torch.zeros(0, 11), provenance="scanned")


def test_mesh_fit_recovers_expression(tiny_model):
    params = tiny_model.zero_params()
    psi = torch.zeros(1, tiny_model.d_expression)
    psi[0, : tiny_model.d_psi] = torch.linspace(-0.5, 0.5, tiny_model.d_psi)
    psi[0, tiny_model.d_psi + 2] = 0.2
    with torch.no_grad():
        target = template_meshes(
            tiny_model,
            TemplateLibrary(names=["a"], vectors=psi, provenance="fitted", d_psi=tiny_model.d_psi),
        )[0]
    assert torch.equal(params.shape, torch.zeros(1, tiny_model.d_beta))

    beta = torch.zeros(tiny_model.d_beta)
    fit = fit_template([target], tiny_model, beta)
    history = fit.histories[0]
    assert all(b < a for a, b in zip(history, history[1:], strict=False))
    recovered = fitted_vertices(tiny_model, beta, fit)[0]
    assert float((recovered - target).abs().max()) < 1e-3


def test_rotated_neutral_is_absorbed_by_pose(tiny_model):
    axis_angle = torch.tensor([0.1, -0.2, 0.05])
    with torch.no_grad():
        neutral = decode(tiny_model, tiny_model.zero_params())[0]
    target = neutral @ rotation_matrix(axis_angle[None])[0].T
    fit = fit_template([target], tiny_model, torch.zeros(tiny_model.d_beta))
    assert torch.allclose(fit.pose[0], axis_angle, atol=1e-3)
    assert float(fit.psi[0].norm()) < 1e-3
    assert float(fit.translation[0].abs().max()) < 1e-3


def test_fit_needs_targets(tiny_model):
    with pytest.raises(ContractViolation):
        fit_template([], tiny_model, torch.zeros(tiny_model.d_beta))


@pytest.mark.slow
def test_authored_library_round_trips(tiny_model):
    library = build_extreme_library(tiny_model, LibrarySpec(verify=True), np.random.default_rng(0))
    assert len(library) == 12
    assert library.provenance == "authored"
    assert library.vectors.shape == (12, tiny_model.d_expression)


def test_augmentation_keeps_identity_pose_and_camera():
    gen = torch.Generator().manual_seed(3)
    params = FaceParams.zeros(4, D_PSI, batch=6)
    for name in ("shape", "expression", "eyelids", "jaw", "pose", "camera"):
        setattr(params, name, torch.randn(getattr(params, name).shape, generator=gen))
    kept = {name: getattr(params, name).clone() for name in ("shape", "pose", "camera")}
    rng = np.random.default_rng(0)
    for mode in MODES:
        psi_aug, _ = augment_expressions(params.expression_vector(), D_PSI, AugmentPlan(mode=mode), _library(), rng)
        augmented = params.with_expression_vector(psi_aug)
        for name, value in kept.items():
            assert torch.equal(getattr(augmented, name), value)
            assert torch.equal(getattr(params, name), value)


@pytest.mark.parametrize("modes", [MODES, ("permute", "perturb", "zero")])
def test_mode_frequencies_match_the_mixture(modes):
    rng = np.random.default_rng(0)
    plan = AugmentPlan(modes=modes)
    drawn = [m for _ in range(5000) for m in draw_modes(plan, 8, rng)]
    for mode in modes:
        assert drawn.count(mode) / len(drawn) == pytest.approx(1 / len(modes), abs=0.02)
    assert set(drawn) == set(modes)
