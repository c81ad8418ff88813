"""Checkpoints: architecture configs, train-state metadata, weights and optimizer moments as float32 blobs."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from facelab.blobs import fingerprint, read_blobs, write_blobs
from facelab.errors import DatasetIOError
from facelab.networks import EncoderConfig, TranslatorConfig
from facelab.networks.encoder import EncoderSet
from facelab.networks.freezing import set_frozen
from facelab.networks.translator import Translator

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    encoders: EncoderSet
    translator: Translator
    optimizer_state: dict[str, Any] | None = None
    meta: dict[str, Any] = field(default_factory=dict)
    fingerprint: str = ""


def _module_arrays(prefix: str, module: nn.Module) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def _optimizer_arrays(state: dict[str, Any]) -> dict[str, np.ndarray]:
    arrays = {}
    for idx, slots in state["state"].items():
        for slot, value in slots.items():
            arrays[f"optim/{idx}/{slot}"] = torch.as_tensor(value).detach().cpu().numpy()
    return arrays


def _config_from_meta(cls, data: dict):
    data = dict(data)
    data["image_size"] = tuple(data["image_size"])
    return cls(**data)


def save_checkpoint(
    directory: str | Path,
    encoders: EncoderSet,
    translator: Translator,
    optimizer: torch.optim.Optimizer | None = None,
    meta: dict[str, Any] | None = None,
) -> Path:
    """Write a checkpoint directory; ``meta`` carries the train state (step, parity, config)."""
    arrays = _module_arrays("encoder", encoders) | _module_arrays("translator", translator)
    body: dict[str, Any] = {
        "version": CHECKPOINT_VERSION,
        "kind": "checkpoint",
        "encoder_config": asdict(encoders.config),
        "translator_config": asdict(translator.config),
        "frozen": encoders.frozen_flags(),
        "state": meta or {},
    }
    if optimizer is not None:
        state = optimizer.state_dict()
        arrays |= _optimizer_arrays(state)
        body["optimizer"] = {
            "param_groups": state["param_groups"],
            "slots": {str(k): sorted(v) for k, v in state["state"].items()},
        }
    path = write_blobs(directory, arrays, body)
    logger.info("Saved checkpoint to %s (step %s)", path, body["state"].get("step"))
    return path


def load_checkpoint(directory: str | Path) -> Checkpoint:
    arrays, body = read_blobs(directory)
    if body.get("kind") != "checkpoint":
        raise DatasetIOError(f"{directory} is not a checkpoint")
    if body.get("version") != CHECKPOINT_VERSION:
        raise DatasetIOError(
            f"Checkpoint version {body.get('version')} is not supported (expected {CHECKPOINT_VERSION})"
        )

    encoders = EncoderSet(_config_from_meta(EncoderConfig, body["encoder_config"]))
    translator = Translator(_config_from_meta(TranslatorConfig, body["translator_config"]))
    for prefix, module in (("encoder", encoders), ("translator", translator)):
        state = {
            k[len(prefix) + 1 :]: torch.from_numpy(v)
            for k, v in arrays.items()
            if k.startswith(prefix + "/")
        }
        module.load_state_dict(state)
    for name, flag in body.get("frozen", {}).items():
        set_frozen(encoders.branches[name], flag)

    optimizer_state = None
    if "optimizer" in body:
        optimizer_state = {
            "param_groups": body["optimizer"]["param_groups"],
            "state": {
                int(idx): {slot: torch.from_numpy(arrays[f"optim/{idx}/{slot}"]) for slot in slots}
                for idx, slots in body["optimizer"]["slots"].items()
            },
        }
    return Checkpoint(
        encoders=encoders,
        translator=translator,
        optimizer_state=optimizer_state,
        meta=body.get("state", {}),
        fingerprint=fingerprint(directory),
    )
