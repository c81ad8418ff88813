"""Training objectives: data models."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from facelab.errors import NumericalError


@dataclass(frozen=True)
class LossWeights:
    photo: float = 1.0
    vgg: float = 10.0
    lmk: float = 100.0
    reg: float = 1e-3
    emo: float = 1.0
    cycle_exp: float = 10.0
    cycle_shape: float = 10.0


@dataclass
class LossReport:
    """Unweighted loss values of one step plus their weighted sum.

    Terms that the pass does not compute stay 0.
    """

    photo: float = 0.0
    vgg: float = 0.0
    lmk: float = 0.0
    reg: float = 0.0
    emo: float = 0.0
    cycle_exp: float = 0.0
    cycle_shape: float = 0.0
    weighted_total: float = 0.0
    step: int = 0
    pass_name: str = ""
    lr: float = 0.0
    dropped_pixels: int = 0

    TERMS = ("photo", "vgg", "lmk", "reg", "emo", "cycle_exp", "cycle_shape")

    def total(self, weights: LossWeights) -> float:
        return sum(getattr(weights, t) * getattr(self, t) for t in self.TERMS)

    def check_finite(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not math.isfinite(value):
                raise NumericalError(
                    f"Loss term {f.name!r} is {value} at step {self.step} ({self.pass_name} pass)"
                )

    def to_dict(self) -> dict:
        return asdict(self)
