"""
Text cleaning API endpoints.
"""

from fastapi import APIRouter

from app.schemas.prediction import CleanedText, CleanRequest, CleanResponse
from app.services.textprep import clean

router = APIRouter()


@router.post("/clean")
async def clean_texts(request: CleanRequest) -> CleanResponse:
    """
    Clean raw paragraphs.

    Args:
        request: Texts to clean

    Returns:
        Cleaned texts with per-text removal reports, in request order
    """
    results = []
    for text in request.texts:
        cleaned, report = clean(text)
        results.append(CleanedText(text=cleaned, report=report))
    return CleanResponse(results=results)
