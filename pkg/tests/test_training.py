import json
from dataclasses import replace

import pytest
import torch

from facelab.errors import ConfigurationError
from facelab.losses.features import EMOTION_SEED_OFFSET, get_extractor
from facelab.networks.encoder import EncoderSet
from facelab.networks.freezing import checksum, is_frozen
from facelab.training import CYCLE, ENCODER_FROZEN, PRETRAIN_LOG, RECONSTRUCTION, TRAIN_LOG, TRANSLATOR_FROZEN
from facelab.training.pretrain import landmark_error, pretrain
from facelab.training.settings import PROFILES, TrainConfig, read_mapping
from facelab.training.steps import cycle_phase, effective_weights, learning_rate, pass_for_step
from facelab.training.trainer import Trainer


def _trainer(config, dataset, **kwargs):
    return Trainer(config, dataset, dataset.model, expression_stats=dataset.expression_stats, **kwargs)


def _checksums(trainer):
    return {
        "expression": checksum(trainer.encoders.expression),
        "shape": checksum(trainer.encoders.shape),
        "pose": checksum(trainer.encoders.pose),
        "translator": checksum(trainer.translator),
    }


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def test_passes_alternate_starting_with_reconstruction():
    assert [pass_for_step(s) for s in range(4)] == [RECONSTRUCTION, CYCLE, RECONSTRUCTION, CYCLE]
    assert {pass_for_step(s, cycle_enabled=False) for s in range(6)} == {RECONSTRUCTION}


def test_cycle_phase_flips_on_every_cycle_step():
    assert [cycle_phase(s) for s in (1, 3, 5, 7)] == [
        TRANSLATOR_FROZEN,
        ENCODER_FROZEN,
        TRANSLATOR_FROZEN,
        ENCODER_FROZEN,
    ]


def test_learning_rate_restarts_every_epoch():
    config = TrainConfig(lr=1e-3, lr_min=1e-5, epoch_length=10)
    assert learning_rate(config, 0) == pytest.approx(1e-3)
    assert learning_rate(config, 5) == pytest.approx((1e-3 + 1e-5) / 2)
    assert learning_rate(config, 10) == pytest.approx(1e-3)
    assert learning_rate(config, 9) < learning_rate(config, 8)


def test_landmark_weight_drops_at_the_stop_step():
    config = TrainConfig(landmark_stop_step=3)
    assert effective_weights(config, 2).lmk == config.w_lmk
    assert effective_weights(config, 3).lmk == 0.0
    assert effective_weights(TrainConfig(), 10**6).lmk == TrainConfig().w_lmk


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


def test_profiles_only_override_sizes():
    tiny = TrainConfig.from_profile("tiny")
    assert tiny.image_size == 32 and tiny.profile == "tiny"
    assert tiny.w_vgg == TrainConfig().w_vgg
    assert set(PROFILES) == {"tiny", "desk", "full"}
    with pytest.raises(ConfigurationError):
        TrainConfig.from_profile("huge")


def test_config_file_round_trip_and_overrides(tmp_path):
    config = replace(TrainConfig.from_profile("tiny"), seed=9, mask_ratio=0.05)
    assert TrainConfig.load(config.save(tmp_path / "run.json")) == config

    toml = tmp_path / "run.toml"
    toml.write_text('profile = "tiny"\nseed = 4\nappearance_ambient = 0.3\n', encoding="utf-8")
    loaded = TrainConfig.load(toml)
    assert loaded.seed == 4 and loaded.image_size == 32
    assert read_mapping(toml)["appearance_ambient"] == 0.3


def test_bad_config_files_are_configuration_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        TrainConfig.load(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        TrainConfig.load(broken)


@pytest.mark.parametrize(
    "overrides",
    [
        {"image_size": 30},
        {"mask_ratio": 1.5},
        {"w_photo": -1.0},
        {"dataset_mix": {"a": 0.5, "b": 0.2}},
        {"augment_modes": ["smile"]},
        {"lr": 1e-5, "lr_min": 1e-3},
    ],
)
def test_invalid_configs_are_rejected(overrides):
    with pytest.raises(ConfigurationError):
        replace(TrainConfig(), **overrides).validate()


def test_schema_annotates_paper_defaults():
    schema = TrainConfig.schema()
    assert schema["properties"]["mask_ratio"]["paper_default"] == 0.01
    assert schema["properties"]["seed"]["type"] == "integer"
    assert "paper_default" not in schema["properties"]["seed"]


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def test_reconstruction_step_updates_expression_and_translator_only(tiny_config, tiny_dataset):
    trainer = _trainer(tiny_config, tiny_dataset)
    before = _checksums(trainer)
    report = trainer.step()
    after = _checksums(trainer)
    assert report.pass_name == RECONSTRUCTION
    assert after["expression"] != before["expression"]
    assert after["translator"] != before["translator"]
    assert after["shape"] == before["shape"] and after["pose"] == before["pose"]


def test_cycle_step_phases_freeze_one_side(tiny_config, tiny_dataset):
    trainer = _trainer(tiny_config, tiny_dataset)
    trainer.state.step = 1
    before = _checksums(trainer)
    report = trainer.step()
    after = _checksums(trainer)
    assert report.pass_name == CYCLE
    assert after["translator"] == before["translator"]
    assert after["expression"] != before["expression"]

    trainer.state.step = 3
    before = after
    trainer.step()
    after = _checksums(trainer)
    assert after["expression"] == before["expression"]
    assert after["translator"] != before["translator"]
    assert after["shape"] == before["shape"] and after["pose"] == before["pose"]


def test_emotion_term_reaches_the_expression_encoder_only(tiny_config, tiny_dataset):
    config = replace(tiny_config, w_photo=0.0, w_vgg=0.0, w_lmk=0.0, w_reg=0.0, w_emo=1.0)
    trainer = _trainer(config, tiny_dataset)
    before = _checksums(trainer)
    trainer.step()
    after = _checksums(trainer)
    assert after["translator"] == before["translator"]
    assert after["expression"] != before["expression"]


def test_all_zero_weights_change_nothing(tiny_config, tiny_dataset):
    config = replace(tiny_config, w_photo=0.0, w_vgg=0.0, w_lmk=0.0, w_reg=0.0, w_emo=0.0)
    trainer = _trainer(config, tiny_dataset)
    before = _checksums(trainer)
    report = trainer.step()
    assert _checksums(trainer) == before
    assert report.photo > 0.0 and report.weighted_total == 0.0


def test_shared_batch_reuses_the_reconstruction_batch(tiny_config, tiny_dataset):
    trainer = _trainer(replace(tiny_config, shared_batch=True), tiny_dataset)
    assert trainer.batch_for(1).sample_ids == trainer.batch_for(0).sample_ids


def test_trainer_mixes_shards_by_the_configured_fractions(tiny_config, tiny_dataset):
    config = replace(tiny_config, dataset_mix={"ffhq": 0.75, "celeba": 0.25})
    trainer = Trainer(config, {"ffhq": tiny_dataset, "celeba": tiny_dataset}, tiny_dataset.model)
    assert trainer.mixer.mix == {"ffhq": 0.75, "celeba": 0.25}
    assert [(name, len(picks)) for name, picks in trainer.mixer.plan(0, config.batch_size)] == [("ffhq", 3), ("celeba", 1)]
    with pytest.raises(ConfigurationError):
        _trainer(config, tiny_dataset)


def test_emotion_extractor_seed_is_offset_once(tiny_config, tiny_dataset):
    trainer = _trainer(tiny_config, tiny_dataset)
    expected = get_extractor(tiny_config.emotion_extractor, tiny_config.extractor_seed)
    assert torch.equal(trainer.ctx.emotion.weight0, expected.weight0)
    shifted = get_extractor("random-pyramid", tiny_config.extractor_seed + EMOTION_SEED_OFFSET)
    assert torch.equal(trainer.ctx.emotion.weight0, shifted.weight0)


def test_cycle_disabled_runs_reconstruction_only(tmp_path, tiny_config, tiny_dataset):
    trainer = _trainer(replace(tiny_config, cycle_enabled=False, iterations=4), tiny_dataset, out_dir=tmp_path)
    reports = trainer.fit()
    assert [r.pass_name for r in reports] == [RECONSTRUCTION] * 4


def test_fit_writes_one_log_line_per_step(tmp_path, tiny_config, tiny_dataset):
    trainer = _trainer(tiny_config, tiny_dataset, out_dir=tmp_path)
    trainer.fit()
    lines = (tmp_path / TRAIN_LOG).read_text(encoding="utf-8").splitlines()
    assert len(lines) == tiny_config.iterations
    records = [json.loads(line) for line in lines]
    assert [r["pass_name"] for r in records[:2]] == [RECONSTRUCTION, CYCLE]
    assert all(r["step"] == i for i, r in enumerate(records))


def test_resume_continues_exactly(tmp_path, tiny_config, tiny_dataset):
    config = replace(tiny_config, iterations=4)
    straight = _trainer(config, tiny_dataset)
    straight.fit()

    first = _trainer(config, tiny_dataset)
    first.fit(iterations=2)
    first.save(tmp_path / "half")
    resumed = Trainer.resume(
        tmp_path / "half", config, tiny_dataset, tiny_dataset.model, expression_stats=tiny_dataset.expression_stats
    )
    assert resumed.state.step == 2
    resumed.fit()

    for a, b in zip(straight.encoders.expression.parameters(), resumed.encoders.expression.parameters(), strict=True):
        assert torch.allclose(a, b, atol=1e-6)
    for a, b in zip(straight.translator.parameters(), resumed.translator.parameters(), strict=True):
        assert torch.allclose(a, b, atol=1e-6)


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


def test_pretrain_freezes_identity_and_pose(tmp_path, tiny_config, tiny_dataset):
    encoders = EncoderSet(tiny_config.encoder_config(), seed=0)
    pretrain(encoders, tiny_dataset, tiny_config, tiny_dataset.model, tmp_path)
    assert is_frozen(encoders.shape) and is_frozen(encoders.pose)
    assert not is_frozen(encoders.expression)
    lines = (tmp_path / PRETRAIN_LOG).read_text(encoding="utf-8").splitlines()
    assert len(lines) == tiny_config.pretrain_iterations


def test_pretrain_can_restart_the_expression_branch(tiny_config, tiny_dataset):
    kept = pretrain(EncoderSet(tiny_config.encoder_config(), seed=0), tiny_dataset, tiny_config, tiny_dataset.model)
    restarted = pretrain(
        EncoderSet(tiny_config.encoder_config(), seed=0),
        tiny_dataset,
        replace(tiny_config, pretrain_expression=False),
        tiny_dataset.model,
    )
    assert checksum(kept.shape) == checksum(restarted.shape)
    assert checksum(kept.expression) != checksum(restarted.expression)


@pytest.mark.slow
def test_pretraining_lowers_validation_landmark_error(tiny_config, tiny_dataset):
    config = replace(tiny_config, pretrain_iterations=300)
    encoders = EncoderSet(config.encoder_config(), seed=0)
    before = landmark_error(encoders, tiny_dataset, "val")
    pretrain(encoders, tiny_dataset, config, tiny_dataset.model)
    assert landmark_error(encoders, tiny_dataset, "val") < before
