from dataclasses import replace

import pytest
import torch

from facelab.errors import ConfigurationError, ContractViolation
from facelab.losses.terms import photometric
from facelab.networks import EncoderConfig, TranslatorConfig
from facelab.networks.checkpoint import load_checkpoint, save_checkpoint
from facelab.networks.encoder import EncoderSet, encode, encode_expression
from facelab.networks.freezing import checksum, frozen, is_frozen, parameter_count, set_frozen
from facelab.networks.translator import Translator, translate

ENCODER = EncoderConfig(image_size=(32, 32), width=4, d_beta=4, d_psi=6)
TRANSLATOR = TranslatorConfig(image_size=(32, 32), bottleneck_channels=16, residual_blocks=1)


def _images(batch=2, seed=0):
    return torch.rand(batch, 32, 32, 3, generator=torch.Generator().manual_seed(seed))


def test_encoder_output_shapes():
    params = encode(EncoderSet(ENCODER), _images())
    assert params.shape.shape == (2, 4)
    assert params.expression.shape == (2, 6)
    assert params.eyelids.shape == (2, 2)
    assert params.jaw.shape == (2, 3)
    assert params.pose.shape == (2, 3)
    assert (params.camera[:, 0] > 0).all()
    assert encode_expression(EncoderSet(ENCODER), _images()).shape == (2, 11)


def test_encoder_rejects_wrong_image_shape():
    with pytest.raises(ContractViolation):
        encode(EncoderSet(ENCODER), torch.rand(2, 16, 16, 3))


def test_encoder_weights_follow_the_seed():
    assert checksum(EncoderSet(ENCODER, seed=3)) == checksum(EncoderSet(ENCODER, seed=3))
    assert checksum(EncoderSet(ENCODER, seed=3)) != checksum(EncoderSet(ENCODER, seed=4))


def test_translator_output_is_an_image():
    translator = Translator(TRANSLATOR)
    output = translate(translator, torch.rand(2, 32, 32), _images())
    assert output.shape == (2, 32, 32, 3)
    assert output.min() > 0.0 and output.max() < 1.0


def test_translator_needs_size_divisible_by_8():
    with pytest.raises(ConfigurationError):
        Translator(TranslatorConfig(image_size=(30, 30), bottleneck_channels=16))


def test_translate_rejects_mismatched_inputs():
    with pytest.raises(ContractViolation):
        translate(Translator(TRANSLATOR), torch.rand(2, 16, 16), _images())


def test_removing_skips_keeps_parameter_count():
    plain = Translator(replace(TRANSLATOR, skip_connections=False))
    assert parameter_count(plain) == parameter_count(Translator(TRANSLATOR))


def test_frozen_branch_passes_gradients_to_its_input():
    encoders = EncoderSet(ENCODER)
    set_frozen(encoders.expression, True)
    image = _images().requires_grad_(True)
    encode_expression(encoders, image).sum().backward()
    assert image.grad is not None and image.grad.abs().sum() > 0
    assert all(p.grad is None for p in encoders.expression.parameters())


def test_frozen_context_restores_previous_state():
    encoders = EncoderSet(ENCODER)
    with frozen(encoders.expression):
        assert is_frozen(encoders.expression)
        assert not any(p.requires_grad for p in encoders.expression.parameters())
    assert not is_frozen(encoders.expression)
    assert all(p.requires_grad for p in encoders.expression.parameters())


def test_optimizer_step_leaves_frozen_branches_untouched():
    encoders = EncoderSet(ENCODER)
    set_frozen(encoders.shape, True)
    before = {name: checksum(branch) for name, branch in encoders.branches.items()}
    optimizer = torch.optim.Adam(encoders.parameters(), lr=1e-2)
    params = encode(encoders, _images())
    (params.shape.sum() + params.expression.sum()).backward()
    optimizer.step()
    assert checksum(encoders.shape) == before["shape"]
    assert checksum(encoders.expression) != before["expression"]


def test_checkpoint_restores_weights_flags_and_optimizer(tmp_path):
    encoders, translator = EncoderSet(ENCODER, seed=1), Translator(TRANSLATOR, seed=2)
    set_frozen(encoders.pose, True)
    optimizer = torch.optim.Adam([*encoders.expression.parameters(), *translator.parameters()], lr=1e-3)
    output = translate(translator, torch.rand(2, 32, 32), _images())
    (output.mean() + encode_expression(encoders, _images()).sum()).backward()
    optimizer.step()

    save_checkpoint(tmp_path / "ckpt", encoders, translator, optimizer, meta={"step": 7})
    loaded = load_checkpoint(tmp_path / "ckpt")
    assert checksum(loaded.encoders) == checksum(encoders)
    assert checksum(loaded.translator) == checksum(translator)
    assert is_frozen(loaded.encoders.pose) and not is_frozen(loaded.encoders.expression)
    assert loaded.meta["step"] == 7

    fresh = torch.optim.Adam(
        [*loaded.encoders.expression.parameters(), *loaded.translator.parameters()], lr=1e-3
    )
    fresh.load_state_dict(loaded.optimizer_state)
    first = next(iter(optimizer.state.values()))
    restored = next(iter(fresh.state.values()))
    assert torch.equal(first["exp_avg"], restored["exp_avg"])


@pytest.mark.parametrize("skip", [True, False])
def test_photometric_loss_reaches_the_geometry_image(skip):
    translator = Translator(replace(TRANSLATOR, skip_connections=skip), seed=0)
    geometry = torch.rand(2, 32, 32, generator=torch.Generator().manual_seed(5)).requires_grad_(True)
    photometric(translate(translator, geometry, _images(seed=1)), _images(seed=2)).backward()
    assert geometry.grad is not None
    assert float(geometry.grad.norm()) > 1e-8
