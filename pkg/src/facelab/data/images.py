"""PNG read/write and side-by-side panels."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor

from facelab.errors import DatasetIOError


def to_uint8(image: Tensor | np.ndarray) -> np.ndarray:
    """Float image in [0, 1] (``(H, W)`` or ``(H, W, 3)``) to uint8."""
    if isinstance(image, Tensor):
        image = image.detach().cpu().numpy()
    return np.clip(np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_png(path: str | Path, image: Tensor | np.ndarray) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        arr = image if isinstance(image, np.ndarray) and image.dtype == np.uint8 else to_uint8(image)
        Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise DatasetIOError(f"Cannot write {path}: {exc}", sample_id=path.stem) from exc
    return path


def load_png(path: str | Path) -> Tensor:
    """``(H, W, 3)`` float32 in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DatasetIOError(f"Image not found: {path}", sample_id=path.stem)
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr)


def mask_overlay(image: Tensor, mask: Tensor, positions: Tensor | None = None) -> np.ndarray:
    """Tint the masked region red and mark retained pixels green."""
    out = to_uint8(image).copy()
    m = mask.cpu().numpy().astype(bool)
    out[m] = (0.5 * out[m] + 0.5 * np.array([255, 0, 0])).astype(np.uint8)
    if positions is not None and len(positions):
        pos = positions.cpu().numpy()
        out[pos[:, 1], pos[:, 0]] = (0, 255, 0)
    return out


def save_panel(path: str | Path, images: list[Tensor]) -> Path:
    """Concatenate images horizontally; grayscale entries are broadcast to RGB."""
    rows = []
    for img in images:
        arr = to_uint8(img)
        if arr.ndim == 2:
            arr = np.repeat(arr[..., None], 3, axis=2)
        rows.append(arr)
    return save_png(path, np.concatenate(rows, axis=1))
