"""
Pydantic schemas for predictions and the prediction API.
"""

from typing import List
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.corpus import CleaningReport


class Prediction(BaseModel):
    """Decoded output for one paragraph after out-of-class correction."""

    model_config = ConfigDict(frozen=True)

    par_id: str
    raw_decoded: str
    label: int = Field(..., ge=0, le=1)
    in_class: bool

    @model_validator(mode="after")
    def check_flag(self):
        if self.in_class and self.raw_decoded.strip() != str(self.label):
            raise ValueError("in_class prediction must decode to its label")
        if not self.in_class and self.raw_decoded.strip() in ("0", "1"):
            raise ValueError("out-of-class prediction cannot decode to a legal label")
        return self


class ParagraphIn(BaseModel):
    par_id: str = Field(..., min_length=1)
    text: str


class PredictRequest(BaseModel):
    paragraphs: List[ParagraphIn] = Field(..., min_length=1)
    clean: bool = Field(default=True, description="Apply the text cleaner before encoding")


class PredictResponse(BaseModel):
    predictions: List[Prediction]
    out_of_class_rate: float


class CleanRequest(BaseModel):
    texts: List[str] = Field(..., min_length=1)


class CleanedText(BaseModel):
    text: str
    report: CleaningReport


class CleanResponse(BaseModel):
    results: List[CleanedText]
