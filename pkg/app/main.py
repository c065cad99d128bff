"""
PCLab serving application.
"""

import logging
from contextlib import asynccontextmanager
from typing import Optional

from fastapi import Depends, FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.core.config import settings
from app.core.logging import configure_logging
from app.core.model_store import get_checkpoint, load_serving_checkpoint
from app.services.checkpoint import Checkpoint

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Configure logging and preload the served checkpoint."""
    configure_logging()
    if load_serving_checkpoint() is None:
        logger.info("No checkpoint served; /predict answers 503")
    yield


app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    debug=settings.debug,
    lifespan=lifespan,
)

# Read-only API: only GET and POST are exposed
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)


@app.get("/")
async def root():
    """Service banner."""
    return {
        "message": f"Welcome to {settings.app_name}",
        "version": settings.app_version,
        "status": "running",
        "docs": "/docs",
    }


@app.get("/health")
async def health_check(checkpoint: Optional[Checkpoint] = Depends(get_checkpoint)):
    """Liveness plus the epoch and vocabulary size of the served checkpoint, if any."""
    status = {"status": "healthy", "checkpoint_loaded": checkpoint is not None}
    if checkpoint is not None:
        status.update(epoch=checkpoint.epoch, vocab_size=len(checkpoint.vocab))
    return status


from app.api.v1 import metrics, predict, textprep  # noqa: E402

app.include_router(textprep.router, prefix=f"{settings.api_v1_prefix}/textprep", tags=["textprep"])
app.include_router(metrics.router, prefix=f"{settings.api_v1_prefix}/metrics", tags=["metrics"])
app.include_router(predict.router, prefix=settings.api_v1_prefix, tags=["predict"])


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("app.main:app", host="0.0.0.0", port=8000, reload=settings.debug)
