"""
Checkpoint loading and the API dependency that serves it.
"""

import logging
from pathlib import Path
from typing import Optional

from app.core.config import settings
from app.services.checkpoint import Checkpoint, load_checkpoint

logger = logging.getLogger(__name__)

_cache: dict = {"path": None, "checkpoint": None}


def load_serving_checkpoint(path: Optional[Path] = None) -> Optional[Checkpoint]:
    """
    Load the configured checkpoint once and keep it.

    Returns None when no checkpoint is configured or the file is missing.
    """
    path = path or settings.checkpoint_path
    if path is None:
        return None
    path = Path(path)
    if _cache["path"] == path and _cache["checkpoint"] is not None:
        return _cache["checkpoint"]
    if not path.is_file():
        logger.warning("Checkpoint %s not found; prediction endpoint disabled", path)
        return None
    checkpoint = load_checkpoint(path)
    _cache.update(path=path, checkpoint=checkpoint)
    logger.info("Serving checkpoint %s (epoch %d)", path, checkpoint.epoch)
    return checkpoint


def clear_cache() -> None:
    _cache.update(path=None, checkpoint=None)


async def get_checkpoint() -> Optional[Checkpoint]:
    """
    Dependency to get the served checkpoint.

    Returns:
        Checkpoint, or None when unavailable
    """
    return load_serving_checkpoint()
