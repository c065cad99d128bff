"""
Pydantic schemas for evaluation results.
"""

from typing import Dict, List, Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator


class ConfusionMatrix(BaseModel):
    """2x2 counts with class 1 as the positive class."""

    model_config = ConfigDict(frozen=True)

    tp: int = Field(default=0, ge=0)
    fp: int = Field(default=0, ge=0)
    fn: int = Field(default=0, ge=0)
    tn: int = Field(default=0, ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """Same matrix seen with class 0 as the positive class."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


class ClassMetrics(BaseModel):
    """Precision, recall and F1 for one class."""

    model_config = ConfigDict(frozen=True)

    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)


class MetricsReport(BaseModel):
    """Per-class and macro-averaged metrics."""

    per_class: Dict[int, ClassMetrics]
    macro_p: float = Field(..., ge=0, le=1)
    macro_r: float = Field(..., ge=0, le=1)
    macro_f1: float = Field(..., ge=0, le=1)
    recall_rates: Dict[int, float] = Field(
        default_factory=dict,
        description="Share of each gold class predicted correctly"
    )
    confusion: Optional[ConfusionMatrix] = None

    @model_validator(mode="after")
    def check_classes(self):
        if sorted(self.per_class) != [0, 1]:
            raise ValueError("per_class must cover classes 0 and 1")
        return self


class ErrorRow(BaseModel):
    """One row of the example-prediction table."""

    par_id: str
    predicted: int
    text: str
    gold: int
    keyword_hits: List[str] = Field(default_factory=list)

    @property
    def correct(self) -> bool:
        return self.predicted == self.gold


class ErrorTable(BaseModel):
    """Example predictions with an agreement summary."""

    rows: List[ErrorRow]
    n_scored: int
    n_correct: int

    @property
    def summary(self) -> str:
        return f"correctly predicts {self.n_correct} out of the {self.n_scored}"


class EvaluateRequest(BaseModel):
    """Request body for scoring predictions against gold labels."""

    predictions: List[int] = Field(..., min_length=1)
    golds: List[int] = Field(..., min_length=1)
