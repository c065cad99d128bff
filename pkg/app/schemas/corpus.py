"""
Pydantic schemas for corpus records and corpus statistics.
"""

from typing import Dict, List, Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator


class ColumnMap(BaseModel):
    """Zero-based column positions of each field in a corpus TSV line."""

    model_config = ConfigDict(frozen=True)

    par_id: int = Field(default=0, ge=0, description="Paragraph id column")
    art_id: int = Field(default=1, ge=0, description="Article id column")
    keyword: int = Field(default=2, ge=0, description="Keyword column")
    country: int = Field(default=3, ge=0, description="Country code column")
    text: int = Field(default=4, ge=0, description="Paragraph text column")
    label: int = Field(default=5, ge=0, description="Original 0-4 label column")

    @model_validator(mode="after")
    def check_distinct(self):
        positions = list(self.model_dump().values())
        if len(set(positions)) != len(positions):
            raise ValueError(f"Column positions must be distinct: {positions}")
        return self

    def n_columns(self, has_labels: bool) -> int:
        """Number of fields expected on each line."""
        fields = self.model_dump()
        if not has_labels:
            fields.pop("label")
        return max(fields.values()) + 1


class ParagraphRecord(BaseModel):
    """One corpus row."""

    model_config = ConfigDict(frozen=True)

    par_id: str = Field(..., min_length=1, description="Paragraph id")
    art_id: str = Field(default="", description="Article id (may be empty)")
    keyword: str = Field(default="", description="Annotation keyword")
    country: str = Field(default="", description="Country code")
    text: str = Field(default="", description="Paragraph text")
    orig_label: Optional[int] = Field(default=None, ge=0, le=4, description="Original 0-4 label")
    binary_label: Optional[int] = Field(default=None, ge=0, le=1, description="Binary PCL label")

    @model_validator(mode="after")
    def check_labels(self):
        if (self.orig_label is None) != (self.binary_label is None):
            raise ValueError("orig_label and binary_label must be both present or both absent")
        if self.orig_label is not None and self.binary_label != int(self.orig_label >= 2):
            raise ValueError(
                f"binary_label {self.binary_label} does not match orig_label {self.orig_label}"
            )
        return self

    @property
    def is_labeled(self) -> bool:
        return self.binary_label is not None


class CountSummary(BaseModel):
    """Per-class counts."""

    model_config = ConfigDict(frozen=True)

    total: int = Field(default=0, ge=0)
    neg: int = Field(default=0, ge=0)
    pos: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_total(self):
        if self.total != self.neg + self.pos:
            raise ValueError("total must equal neg + pos")
        return self

    def __add__(self, other: "CountSummary") -> "CountSummary":
        return CountSummary(
            total=self.total + other.total,
            neg=self.neg + other.neg,
            pos=self.pos + other.pos,
        )

    @property
    def pos_share(self) -> float:
        return self.pos / self.total if self.total else 0.0


class CorpusProfile(BaseModel):
    """Corpus statistics with keyword/country breakdowns."""

    summary: CountSummary
    pos_share: float = Field(..., description="Fraction of positive records")
    by_keyword: Dict[str, CountSummary] = Field(default_factory=dict)
    by_country: Dict[str, CountSummary] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list, description="Discrepancy flags")


class CleaningReport(BaseModel):
    """What the text cleaner removed from one paragraph."""

    emails_removed: int = Field(default=0, ge=0)
    urls_removed: int = Field(default=0, ge=0)
    ips_removed: int = Field(default=0, ge=0)
    chars_dropped: int = Field(default=0, ge=0)
