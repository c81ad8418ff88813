"""Pretraining and the alternating reconstruction/cycle optimization: data models."""

from __future__ import annotations

from dataclasses import asdict, dataclass

RECONSTRUCTION = "reconstruction"
CYCLE = "cycle"

# Cycle-pass sub-parity: which of {E_Psi, T} is held fixed
TRANSLATOR_FROZEN = "translator_frozen"
ENCODER_FROZEN = "encoder_frozen"

TRAIN_LOG = "train_log.jsonl"
PRETRAIN_LOG = "pretrain_log.jsonl"


@dataclass
class TrainState:
    """Everything besides weights and optimizer moments needed to resume a run.

    Per-step randomness is derived from ``(seed, step)``, so the step counter
    and the seed fully determine the RNG state.
    """

    step: int = 0
    seed: int = 0
    pretrained: bool = False
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainState:
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in data.items() if k in known})
