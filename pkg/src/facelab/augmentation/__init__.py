"""Expression augmentation for the cycle pass: data models.

Psi vectors are laid out as ``[psi_expr (d_psi), eyelids (2), jaw (3)]``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor

from facelab.errors import ConfigurationError, DatasetIOError

logger = logging.getLogger(__name__)

MODES = ("permute", "perturb", "inject", "zero")
PROVENANCES = ("fitted", "authored")


@dataclass(frozen=True)
class AugmentPlan:
    """How Psi is modified on the cycle pass.

    ``mode=None`` draws one mode per sample from ``modes`` uniformly.
    Jaw opening (the x-axis angle) and eyelids are redrawn in every mode;
    the two lateral jaw angles are drawn from ``[-jaw_lateral, jaw_lateral]``.
    """

    mode: str | None = None
    modes: tuple[str, ...] = MODES
    noise_scale: float = 0.5
    jaw_range: tuple[float, float] = (0.0, 0.35)
    zero_mode_jaw_range: tuple[float, float] = (0.0, 0.6)
    eyelid_range: tuple[float, float] = (0.0, 1.0)
    jaw_lateral: float = 0.05

    def validate(self) -> None:
        for m in (self.mode, *self.modes):
            if m is not None and m not in MODES:
                raise ConfigurationError(f"Unknown augmentation mode: {m!r}. Choose from: {', '.join(MODES)}")
        if not self.modes:
            raise ConfigurationError("At least one augmentation mode must be enabled")
        if self.noise_scale < 0:
            raise ConfigurationError(f"noise_scale must be >= 0, got {self.noise_scale}")
        for name in ("jaw_range", "zero_mode_jaw_range", "eyelid_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} is empty: [{lo}, {hi}]")
        lo, hi = self.jaw_range
        zlo, zhi = self.zero_mode_jaw_range
        if zlo > lo or zhi < hi:
            raise ConfigurationError(
                f"zero_mode_jaw_range {self.zero_mode_jaw_range} must contain jaw_range {self.jaw_range}"
            )
        if self.jaw_lateral < 0:
            raise ConfigurationError("jaw_lateral must be >= 0")


@dataclass
class TemplateLibrary:
    """Labeled extreme-expression Psi vectors."""

    names: list[str] = field(default_factory=list)
    vectors: Tensor = field(default_factory=lambda: torch.zeros(0, 0))
    provenance: str = "authored"
    d_psi: int = 0

    def __len__(self) -> int:
        return len(self.names)

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ConfigurationError(
                f"Unknown provenance: {self.provenance!r}. Choose from: {', '.join(PROVENANCES)}"
            )
        if len(self.names) != self.vectors.shape[0]:
            raise ConfigurationError(
                f"{len(self.names)} names for {self.vectors.shape[0]} template vectors"
            )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = {
            "provenance": self.provenance,
            "d_psi": self.d_psi,
            "templates": [
                {"name": n, "psi": [float(v) for v in vec.tolist()]}
                for n, vec in zip(self.names, self.vectors, strict=True)
            ],
        }
        path.write_text(json.dumps(data, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        logger.info("Saved %d templates to %s", len(self), path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> TemplateLibrary:
        path = Path(path)
        if not path.exists():
            raise DatasetIOError(f"Template library not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetIOError(f"Corrupt template library {path}: {exc}") from exc
        entries = data.get("templates", [])
        vectors = torch.tensor([e["psi"] for e in entries], dtype=torch.float32)
        if not entries:
            vectors = torch.zeros(0, int(data.get("d_psi", 0)) + 5)
        return cls(
            names=[e["name"] for e in entries],
            vectors=vectors,
            provenance=data.get("provenance", "authored"),
            d_psi=int(data.get("d_psi", vectors.shape[1] - 5)),
        )
