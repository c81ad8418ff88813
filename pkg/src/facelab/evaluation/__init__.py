"""Evaluation protocols and ablations: data models."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from facelab.errors import DatasetIOError, NumericalError


@dataclass(frozen=True)
class EvalConfig:
    """Knobs of the evaluation protocols (rendering and masking follow the run config)."""

    epochs: int = 5
    n_variants: int = 8
    perturb_factor: float = 0.25  # multiple of the training Psi std
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    split: str = "test"
    train_split: str = "train"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    """Metrics of one protocol run; all values finite and non-negative."""

    label: str = ""
    protocol: str = ""
    l1: float = 0.0
    vgg: float = 0.0
    vert_l1: float = 0.0
    vert_abs_std: float = 0.0
    vertex_stats: dict[str, float] = field(default_factory=lambda: {"mean": 0.0, "median": 0.0, "max": 0.0})
    fingerprint: str = ""
    history: list[float] = field(default_factory=list)

    METRICS = ("l1", "vgg", "vert_l1", "vert_abs_std")

    def validate(self) -> None:
        values = {m: getattr(self, m) for m in self.METRICS}
        values |= {f"vertex_{k}": v for k, v in self.vertex_stats.items()}
        for name, value in values.items():
            if not math.isfinite(value) or value < 0:
                raise NumericalError(f"Metric {name} of {self.label or self.protocol!r} is {value}")

    def merge(self, other: EvalReport) -> EvalReport:
        """Fill metrics that are 0 here from ``other``; the fingerprint covers both."""
        merged = EvalReport(**asdict(self))
        for m in self.METRICS:
            if getattr(merged, m) == 0.0:
                setattr(merged, m, getattr(other, m))
        if not any(merged.vertex_stats.values()):
            merged.vertex_stats = dict(other.vertex_stats)
        merged.history = merged.history or list(other.history)
        merged.protocol = "+".join(p for p in (self.protocol, other.protocol) if p)
        merged.fingerprint = digest({"a": self.fingerprint, "b": other.fingerprint})
        return merged

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> EvalReport:
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> EvalReport:
        path = Path(path)
        if not path.exists():
            raise DatasetIOError(f"Report not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


@dataclass
class AblationTable:
    """Side-by-side reports of one ablation family."""

    family: str
    rows: list[EvalReport] = field(default_factory=list)
    diffs: dict[str, dict[str, list]] = field(default_factory=dict)

    def row(self, label: str) -> EvalReport:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {"family": self.family, "rows": [r.to_dict() for r in self.rows], "diffs": self.diffs}


def digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
