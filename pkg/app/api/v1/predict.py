"""
Prediction API endpoints.
"""

from typing import Optional

from fastapi import APIRouter, Depends, HTTPException

from app.core.config import settings
from app.core.exceptions import DataError
from app.core.model_store import get_checkpoint
from app.schemas.corpus import ParagraphRecord
from app.schemas.prediction import PredictRequest, PredictResponse
from app.services.checkpoint import Checkpoint
from app.services.predictor import predict_file
from app.services.textprep import clean_text

router = APIRouter()


@router.post("/predict")
async def predict_paragraphs(
    request: PredictRequest,
    checkpoint: Optional[Checkpoint] = Depends(get_checkpoint),
) -> PredictResponse:
    """
    Predict PCL labels with the served checkpoint.

    Args:
        request: Paragraphs, cleaned first unless ``clean`` is false

    Returns:
        One corrected prediction per paragraph and the out-of-class rate
    """
    if checkpoint is None:
        raise HTTPException(status_code=503, detail="No checkpoint loaded")

    records = [
        ParagraphRecord(par_id=p.par_id, text=clean_text(p.text) if request.clean else p.text)
        for p in request.paragraphs
    ]
    try:
        result = predict_file(checkpoint, records, fallback=settings.fallback_class)
    except DataError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return PredictResponse(predictions=result.predictions, out_of_class_rate=result.out_of_class_rate)
