import json
import math

import pytest
import torch

from facelab.errors import ConfigurationError, ContractViolation, NumericalError
from facelab.evaluation import AblationTable, EvalConfig, EvalReport, protocols
from facelab.evaluation.ablation import ablation_variants, available_ablations, config_diff, run_ablation
from facelab.evaluation.protocols import (
    OraclePredictor,
    cycle_eval,
    cycle_metrics,
    dataset_vertex_error,
    frozen_encoder_protocol,
    parameter_error,
    vertex_error,
)
from facelab.evaluation.report import write_report
from facelab.face.model import decode
from facelab.networks.encoder import EncoderSet
from facelab.networks.translator import Translator
from facelab.training.settings import TrainConfig

SMALL_EVAL = EvalConfig(epochs=1, n_variants=2, batch_size=4)


def test_cycle_metrics_known_values():
    intended = torch.zeros(1, 2, 1, 3)
    recovered = torch.tensor([[[[1.0, 0.0, 0.0]], [[0.0, 2.0, 0.0]]]])
    vert_l1, vert_abs_std = cycle_metrics(intended, recovered)
    assert vert_l1 == pytest.approx(1.5)
    assert vert_abs_std == pytest.approx(0.5)
    assert cycle_metrics(recovered, recovered) == (0.0, 0.0)


def test_cycle_metrics_need_two_variants():
    with pytest.raises(ContractViolation):
        cycle_metrics(torch.zeros(1, 1, 4, 3), torch.zeros(1, 1, 4, 3))
    with pytest.raises(ContractViolation):
        cycle_metrics(torch.zeros(1, 2, 4, 3), torch.zeros(1, 2, 5, 3))


def test_vertex_error_of_identical_meshes_is_zero(tiny_model):
    with torch.no_grad():
        mesh = decode(tiny_model, tiny_model.zero_params())[0]
    stats = vertex_error([mesh, mesh], [mesh, mesh], tiny_model.triangles)
    assert stats.mean == pytest.approx(0.0, abs=1e-6)
    assert stats.max == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ContractViolation):
        vertex_error([mesh], [], tiny_model.triangles)


def test_oracle_predictor_has_zero_vertex_error(tiny_dataset):
    report = dataset_vertex_error(OraclePredictor(), tiny_dataset, batch_size=4)
    assert report.protocol == "vertex"
    assert report.vertex_stats["max"] == pytest.approx(0.0, abs=1e-5)
    assert parameter_error(OraclePredictor(), tiny_dataset, batch_size=4) == 0.0


def test_report_validation_rejects_bad_metrics():
    EvalReport(l1=0.1).validate()
    with pytest.raises(NumericalError):
        EvalReport(vgg=math.nan).validate()
    with pytest.raises(NumericalError):
        EvalReport(vert_l1=-1.0).validate()


def test_merge_fills_missing_metrics():
    merged = EvalReport(protocol="cycle", vert_l1=0.2).merge(EvalReport(protocol="frozen_encoder", l1=0.3, history=[1.0]))
    assert (merged.vert_l1, merged.l1) == (0.2, 0.3)
    assert merged.protocol == "cycle+frozen_encoder"
    assert merged.history == [1.0]


# ---------------------------------------------------------------------------
# Ablation registry
# ---------------------------------------------------------------------------


def test_registered_ablation_families():
    assert set(available_ablations()) == {
        "masking_ratio",
        "cycle",
        "skip_connections",
        "landmark_protocol",
        "emotion_weight",
        "expression_pretraining",
    }
    with pytest.raises(ConfigurationError):
        ablation_variants("dropout", TrainConfig())


def test_cycle_family_varies_one_thing_at_a_time(tiny_config):
    variants = dict(ablation_variants("cycle", tiny_config))
    assert len(variants) == 6
    assert config_diff(tiny_config, variants["without_cycle"]) == {"cycle_enabled": [True, False]}
    assert "inject" not in variants["no_injection"].augment_modes
    assert config_diff(tiny_config, variants["with_cycle"]) == {}


def test_landmark_protocol_stops_after_a_quarter(tiny_config):
    variants = dict(ablation_variants("landmark_protocol", tiny_config))
    assert variants["P1_no_landmarks"].w_lmk == 0.0
    assert variants["P2_early_stop"].landmark_stop_step == tiny_config.iterations // 4
    assert variants["P3_always"].landmark_stop_step == -1


def test_emotion_weight_labels(tiny_config):
    labels = [label for label, _ in ablation_variants("emotion_weight", tiny_config)]
    assert labels == ["w_emo_0", "w_emo_1", "w_emo_2", "w_emo_5", "w_emo_10"]
    assert [variant.w_emo for _, variant in ablation_variants("emotion_weight", tiny_config)] == [0.0, 1.0, 2.0, 5.0, 10.0]


# ---------------------------------------------------------------------------
# Protocols and reports
# ---------------------------------------------------------------------------


def test_frozen_encoder_protocol_with_ground_truth_geometry(tiny_config, tiny_dataset):
    report = frozen_encoder_protocol(OraclePredictor(), tiny_dataset, tiny_config, SMALL_EVAL)
    assert report.protocol == "frozen_encoder"
    assert len(report.history) == 1
    assert report.l1 > 0.0 and report.vgg > 0.0


def test_cycle_eval_reports_finite_metrics(tiny_config, tiny_dataset):
    encoders = EncoderSet(tiny_config.encoder_config(), seed=0)
    translator = Translator(tiny_config.translator_config(), seed=1)
    report = cycle_eval(encoders, translator, tiny_dataset, tiny_config, SMALL_EVAL)
    assert math.isfinite(report.vert_l1) and math.isfinite(report.vert_abs_std)
    assert report.fingerprint == cycle_eval(encoders, translator, tiny_dataset, tiny_config, SMALL_EVAL).fingerprint
    with pytest.raises(ContractViolation):
        cycle_eval(encoders, translator, tiny_dataset, tiny_config, EvalConfig(n_variants=1))



def test_cycle_eval_with_an_exact_reencoder_reports_zero(monkeypatch, tiny_config, tiny_dataset):
    encoders = EncoderSet(tiny_config.encoder_config(), seed=0)
    translator = Translator(tiny_config.translator_config(), seed=1)
    state = {}
    make_variants, synthesize, reencode = protocols.expression_variants, protocols.translate, protocols.encode

    def recorded_variants(*args, **kwargs):
        state["variants"] = make_variants(*args, **kwargs)
        state["index"] = -1
        return state["variants"]

    def counted_translate(*args, **kwargs):
        state["index"] += 1
        state["pending"] = True
        return synthesize(*args, **kwargs)

    def exact_encode(encoders, images):
        params = reencode(encoders, images)
        if state.pop("pending", False):
            return params.with_expression_vector(state["variants"][:, state["index"]])
        return params

    monkeypatch.setattr(protocols, "expression_variants", recorded_variants)
    monkeypatch.setattr(protocols, "translate", counted_translate)
    monkeypatch.setattr(protocols, "encode", exact_encode)
    report = cycle_eval(encoders, translator, tiny_dataset, tiny_config, SMALL_EVAL)
    assert state["index"] == SMALL_EVAL.n_variants - 1
    assert report.vert_l1 == pytest.approx(0.0, abs=1e-9)
    assert report.vert_abs_std == pytest.approx(0.0, abs=1e-9)


def test_constant_vertex_offset_has_no_spread():
    intended = torch.randn(3, 4, 10, 3, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    offset = torch.tensor([0.1, -0.2, 0.3], dtype=torch.float64)
    vert_l1, vert_abs_std = cycle_metrics(intended, intended + offset)
    assert vert_l1 == pytest.approx(0.6)
    assert vert_abs_std == pytest.approx(0.0, abs=1e-9)

def test_write_report_emits_json_and_markdown(tmp_path):
    report = EvalReport(label="run", protocol="vertex", vertex_stats={"mean": 0.1, "median": 0.05, "max": 0.4})
    path = write_report(report, tmp_path, "vertex")
    assert json.loads(path.read_text(encoding="utf-8"))["vertex_stats"]["max"] == 0.4
    markdown = (tmp_path / "vertex.md").read_text(encoding="utf-8")
    assert "Evaluation: vertex" in markdown and "0.40000" in markdown

    table = AblationTable(family="cycle", rows=[report], diffs={"run": {"cycle_enabled": [True, False]}})
    write_report(table, tmp_path, "ablation_cycle")
    assert "`cycle_enabled` True → False" in (tmp_path / "ablation_cycle.md").read_text(encoding="utf-8")


@pytest.mark.slow
def test_masking_ratio_ablation_trains_both_variants(tmp_path, tiny_config, tiny_dataset):
    table = run_ablation("masking_ratio", tiny_config, tiny_dataset, SMALL_EVAL, tmp_path)
    assert [row.label for row in table.rows] == ["ratio_1pct", "ratio_5pct"]
    assert table.diffs["ratio_5pct"] == {"mask_ratio": [0.01, 0.05]}
    assert (tmp_path / "ratio_1pct" / "final").is_dir()
    for row in table.rows:
        row.validate()
