"""Writing evaluation reports: JSON, a markdown table and optional image panels."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from facelab.data.images import save_panel
from facelab.data.loader import SyntheticDataset
from facelab.evaluation import AblationTable, EvalReport
from facelab.evaluation.protocols import Predictor, render_params, synthesize
from facelab.networks.translator import Translator
from facelab.training.settings import TrainConfig

logger = logging.getLogger(__name__)

_templates_dir = Path(__file__).parent / "templates"
_env = Environment(
    loader=FileSystemLoader(str(_templates_dir)),
    undefined=StrictUndefined,
    keep_trailing_newline=True,
    autoescape=False,
)


def render_markdown(rows: list[EvalReport], title: str, family: str = "", diffs: dict | None = None) -> str:
    template = _env.get_template("report.md.j2")
    return template.render(
        title=title,
        family=family,
        rows=[r.to_dict() for r in rows],
        diffs=diffs or {},
    )


def write_report(report: EvalReport | AblationTable, out_dir: str | Path, name: str = "report") -> Path:
    """Write ``{name}.json`` and ``{name}.md`` into ``out_dir``; returns the JSON path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(report, AblationTable):
        data = report.to_dict()
        markdown = render_markdown(report.rows, f"Ablation: {report.family}", report.family, report.diffs)
    else:
        data = report.to_dict()
        markdown = render_markdown([report], f"Evaluation: {report.protocol}")
    json_path = out_dir / f"{name}.json"
    json_path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / f"{name}.md").write_text(markdown, encoding="utf-8")
    logger.info("Wrote %s and %s.md", json_path, name)
    return json_path


@torch.no_grad()
def save_panels(
    out_dir: str | Path,
    predictor: Predictor,
    translator: Translator,
    dataset: SyntheticDataset,
    config: TrainConfig,
    split: str = "test",
    count: int = 4,
    seed: int = 0,
) -> list[Path]:
    """``input | S | I'`` strips for the first ``count`` samples of ``split``."""
    out_dir = Path(out_dir)
    count = min(count, dataset.split_size(split))
    if count == 0:
        return []
    batch = dataset.load_batch(split, range(count))
    params = predictor.predict(batch)
    geometry = render_params(dataset.model, params, config).image
    output = synthesize(translator, dataset.model, params, batch, config, np.random.default_rng(seed))
    paths = []
    for b in range(batch.size):
        path = out_dir / f"panel_{batch.sample_ids[b]:06d}.png"
        paths.append(save_panel(path, [batch.images[b], geometry[b], output[b]]))
    return paths
