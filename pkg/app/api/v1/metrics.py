"""
Evaluation API endpoints.
"""

from typing import Any, Dict

from fastapi import APIRouter, HTTPException

from app.core.exceptions import DataError
from app.schemas.metrics import EvaluateRequest
from app.services.metrics import evaluate, report_dict

router = APIRouter()


@router.post("/evaluate")
async def evaluate_predictions(request: EvaluateRequest) -> Dict[str, Any]:
    """
    Score predictions against gold labels.

    Returns:
        Per-class and macro precision/recall/F1 rounded to 4 decimals, plus
        the confusion counts
    """
    try:
        report = evaluate(request.predictions, request.golds)
    except DataError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return report_dict(report)
