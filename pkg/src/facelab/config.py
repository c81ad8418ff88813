import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Dataset / run cache root (generated datasets, checkpoints)
FACELAB_CACHE: str = os.environ.get("FACELAB_CACHE", "")
FACELAB_LOG_LEVEL: str = os.environ.get("FACELAB_LOG_LEVEL", "INFO")

DEFAULT_DATA_DIR = Path("data")


def resolve_data_dir(explicit: str | Path | None = None) -> Path:
    """Resolve where datasets live.

    Priority:
    1. Explicit ``--data`` flag / argument
    2. FACELAB_CACHE env var
    3. ``data/`` under the working directory
    """
    if explicit:
        return Path(explicit)
    if FACELAB_CACHE:
        return Path(FACELAB_CACHE)
    return DEFAULT_DATA_DIR
