"""Component freezing and weight checksums."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterator
from contextlib import contextmanager

from torch import nn

logger = logging.getLogger(__name__)

_FLAG = "_facelab_frozen"


def set_frozen(component: nn.Module, flag: bool) -> None:
    """Stop (or resume) weight updates of ``component``.

    Frozen parameters get ``requires_grad = False``, so they collect no
    gradient and the optimizer skips them; gradients still flow through the
    module to its inputs.
    """
    for param in component.parameters():
        param.requires_grad_(not flag)
    setattr(component, _FLAG, flag)


def is_frozen(component: nn.Module) -> bool:
    return bool(getattr(component, _FLAG, False))


@contextmanager
def frozen(component: nn.Module) -> Iterator[None]:
    """Freeze ``component`` for the duration of the block, restoring its previous state."""
    previous = is_frozen(component)
    set_frozen(component, True)
    try:
        yield
    finally:
        set_frozen(component, previous)


def checksum(component: nn.Module) -> str:
    """SHA-256 over every parameter's bytes, in registration order."""
    digest = hashlib.sha256()
    for name, param in component.named_parameters():
        digest.update(name.encode())
        digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def parameter_count(component: nn.Module) -> int:
    return sum(p.numel() for p in component.parameters())
