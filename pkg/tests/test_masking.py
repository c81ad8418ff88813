import numpy as np
import pytest
import torch

from facelab.errors import ConfigurationError, ContractViolation
from facelab.face.model import decode, landmarks2d, project
from facelab.masking.mask import (
    apply_mask,
    associate_vertices,
    face_mask_from_landmarks,
    retained_count,
    round_half_away,
    transfer_pixels,
)

SQUARE = [[4.0, 4.0], [12.0, 4.0], [12.0, 12.0], [4.0, 12.0]]


def test_hull_mask_includes_boundary_pixels():
    mask = face_mask_from_landmarks(SQUARE, 0, (16, 16))
    assert int(mask.sum()) == 81
    assert mask[4, 4] and mask[12, 12]
    assert not mask[3, 8]


def test_hull_mask_dilation_uses_a_disk():
    mask = face_mask_from_landmarks(SQUARE, 1, (16, 16))
    # 9x9 square grown by a plus-shaped disk: 11x11 minus the four corners
    assert int(mask.sum()) == 117
    assert mask[3, 8] and not mask[3, 3]


def test_degenerate_landmarks_are_rejected():
    with pytest.raises(ContractViolation):
        face_mask_from_landmarks([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 0, (8, 8))
    with pytest.raises(ContractViolation):
        face_mask_from_landmarks([[0.0, 0.0], [1.0, 1.0]], 0, (8, 8))
    with pytest.raises(ConfigurationError):
        face_mask_from_landmarks(SQUARE, -1, (16, 16))


def test_retained_count_is_exact_over_random_masks():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        size = int(rng.integers(4, 24))
        mask = torch.from_numpy(rng.uniform(size=(size, size)) < rng.uniform(0.05, 0.95))
        ratio = float((0.0, 0.01, 0.05, 1.0, rng.uniform())[trial % 5])
        image = torch.from_numpy(rng.uniform(size=(size, size, 3)).astype(np.float32))
        masked = apply_mask(image, mask, ratio, rng)

        area = int(mask.sum())
        assert masked.n_retained == int(np.floor(ratio * area + 0.5))
        xs, ys = masked.positions[:, 0], masked.positions[:, 1]
        assert mask[ys, xs].all()
        assert torch.equal(masked.image[~mask], image[~mask])
        keep = torch.zeros_like(mask)
        keep[ys, xs] = True
        assert (masked.image[mask & ~keep] == 0).all()
        assert torch.equal(masked.image[ys, xs], image[ys, xs])


def test_excluded_pixels_are_never_retained():
    rng = np.random.default_rng(1)
    mask = torch.ones(16, 16, dtype=torch.bool)
    exclude = torch.zeros(16, 16, dtype=torch.bool)
    exclude[:8] = True
    masked = apply_mask(torch.rand(16, 16, 3), mask, 0.5, rng, exclude)
    assert masked.n_retained == retained_count(0.5, 128)
    assert (masked.positions[:, 1] >= 8).all()


def test_mask_ratio_outside_unit_interval_is_rejected():
    with pytest.raises(ConfigurationError):
        apply_mask(torch.rand(4, 4, 3), torch.ones(4, 4, dtype=torch.bool), 1.5, np.random.default_rng(0))


def test_round_half_away_from_zero():
    values = torch.tensor([0.5, 1.5, -0.5, -1.5, 2.4, -2.6])
    assert round_half_away(values).tolist() == [1.0, 2.0, -1.0, -2.0, 2.0, -3.0]


def _masked_face(model, ratio=0.3, seed=0):
    params = model.zero_params(scale=12.0)
    params.camera[0, 1:] = 16.0
    landmarks = landmarks2d(model, params)[0]
    mask = face_mask_from_landmarks(landmarks, 1, (32, 32))
    image = torch.rand(32, 32, 3, generator=torch.Generator().manual_seed(seed))
    masked = apply_mask(image, mask, ratio, np.random.default_rng(seed))
    return params, associate_vertices(masked, model, params)


def test_association_finds_nearby_vertices(tiny_model):
    _, masked = _masked_face(tiny_model)
    assert (masked.vertex_ids >= 0).any()
    assert set(masked.vertex_ids[masked.vertex_ids >= 0].tolist()) <= set(tiny_model.face_region.tolist())


def test_transfer_with_unchanged_params_keeps_every_pixel(tiny_model):
    params, masked = _masked_face(tiny_model)
    moved = transfer_pixels(masked, tiny_model, params, params, 1)
    assert moved.dropped == 0
    assert torch.equal(moved.positions, masked.positions)
    assert torch.equal(moved.values, masked.values)


def test_transfer_follows_a_camera_shift(tiny_model):
    params, masked = _masked_face(tiny_model)
    shifted = params.map(lambda t: t.clone())
    shifted.camera[0, 1] += 3.0
    moved = transfer_pixels(masked, tiny_model, params, shifted, 1)

    expected = set()
    for (x, y), vid in zip(masked.positions.tolist(), masked.vertex_ids.tolist(), strict=True):
        expected.add((x + 3, y) if vid >= 0 else (x, y))
    assert {tuple(p) for p in moved.positions.tolist()} <= expected
    assert moved.dropped == masked.n_retained - moved.n_retained
    assert (moved.mask | ~masked.mask).all()


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_jaw_edit_moves_pixels_with_their_vertices(tiny_model, seed):
    params, masked = _masked_face(tiny_model, ratio=0.025, seed=seed)
    rng = np.random.default_rng(seed)
    ids = masked.vertex_ids.clone()
    ids[0] = -1
    masked = masked.with_vertex_ids(ids)
    opened = params.map(lambda t: t.clone())
    opened.jaw[0, 0] = float(rng.uniform(0.1, 0.4))

    moved = transfer_pixels(masked, tiny_model, params, opened, 1)

    with torch.no_grad():
        old = project(decode(tiny_model, params), params.camera)[0]
        new = project(decode(tiny_model, opened), opened.camera)[0]
    targets = {}
    for i, ((x, y), vid) in enumerate(zip(masked.positions.tolist(), ids.tolist(), strict=True)):
        d = (new[vid] - old[vid]) if vid >= 0 else torch.zeros(2, dtype=new.dtype)
        target = round_half_away(torch.tensor([x, y], dtype=new.dtype) + d).long().tolist()
        tx, ty = target
        if 0 <= tx < 32 and 0 <= ty < 32 and moved.mask[ty, tx]:
            targets.setdefault((tx, ty), []).append(i)

    kept = {tuple(p) for p in moved.positions.tolist()}
    assert kept == set(targets)
    assert moved.dropped == masked.n_retained - len(targets)
    for pixel, sources in targets.items():
        if len(sources) == 1:
            x, y = pixel
            assert torch.equal(moved.image[y, x], masked.values[sources[0]])

    x0, y0 = masked.positions[0].tolist()
    assert 0 in targets[(x0, y0)]
    assert (x0, y0) in kept
