"""
Pydantic schemas for model, training, split and experiment configuration.
"""

import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.corpus import ColumnMap, CountSummary

OptimizerName = Literal["adam", "adamw"]

# Share of total optimizer steps spent in linear warmup when unset
DEFAULT_WARMUP_FRACTION = 0.1


class ModelConfig(BaseModel):
    """Shape hyperparameters of the miniature encoder-decoder."""

    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(..., ge=1, description="Vocabulary size")
    d_model: int = Field(default=64, ge=1, description="Residual width")
    n_heads: int = Field(default=4, ge=1, description="Attention heads")
    d_ff: int = Field(default=128, ge=1, description="Feed-forward width")
    n_layers_enc: int = Field(default=2, ge=1, description="Encoder blocks")
    n_layers_dec: int = Field(default=2, ge=1, description="Decoder blocks")
    max_rel_distance: int = Field(default=8, ge=1, description="Relative offset clip")
    max_seq_len: int = Field(default=64, ge=1, description="Longest accepted sequence")
    tie_embeddings: bool = Field(default=True, description="Share the embedding matrix with the output projection")
    seed: int = Field(default=42, description="Initialization seed")

    @model_validator(mode="after")
    def check_heads(self):
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


class TrainConfig(BaseModel):
    """Optimizer, schedule and loop settings."""

    model_config = ConfigDict(frozen=True)

    optimizer: OptimizerName = Field(default="adam")
    peak_lr: float = Field(default=2e-4, gt=0, description="Learning rate at the end of warmup")
    warmup_steps: Optional[int] = Field(default=None, ge=0, description="None: 10% of total steps")
    total_steps: Optional[int] = Field(default=None, ge=1, description="None: epochs x batches")
    batch_size: int = Field(default=16, ge=1)
    epochs: int = Field(default=3, ge=1)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.01, ge=0, description="AdamW only")
    seed: int = Field(default=42, description="Shuffle seed")
    track_out_of_class: bool = Field(
        default=True,
        description="Decode the dev set each epoch to log the out-of-class rate"
    )

    @model_validator(mode="after")
    def check_schedule(self):
        if (
            self.warmup_steps is not None
            and self.total_steps is not None
            and self.warmup_steps > self.total_steps
        ):
            raise ValueError("warmup_steps must not exceed total_steps")
        return self

    def resolve(self, n_train: int) -> "TrainConfig":
        """Fill total/warmup steps from the training-set size."""
        total = self.total_steps
        if total is None:
            total = self.epochs * math.ceil(n_train / self.batch_size)
        warmup = self.warmup_steps
        if warmup is None:
            warmup = int(DEFAULT_WARMUP_FRACTION * total)
        return self.model_copy(update={"total_steps": total, "warmup_steps": min(warmup, total)})


class SplitSpec(BaseModel):
    """How to carve a dev set out of the training corpus."""

    model_config = ConfigDict(frozen=True)

    dev_fraction: float = Field(default=0.10, ge=0, lt=1)
    seed: int = Field(default=42)
    holdout_ids: List[str] = Field(default_factory=list)
    stratify: bool = Field(default=False, description="Per-class quotas (off by default)")
    holdout_preset: Optional[str] = Field(default=None, description="Preset the holdout ids came from, if any")


class SplitManifest(BaseModel):
    """Record of one split."""

    algorithm: str
    seed: int
    dev_fraction: float
    stratified: bool
    stage: Literal["raw", "cleaned"]
    input_sha256: str
    input_size: int
    train_size: int
    dev_size: int
    dev_size_before_holdout: int
    holdout_ids: List[str]
    holdout_preset: Optional[str] = None


class EpochStats(BaseModel):
    """Per-epoch training record."""

    epoch: int
    train_loss: float
    dev_loss: float
    lr: float
    out_of_class_rate: Optional[float] = None


class ExperimentConfig(BaseModel):
    """Everything one pipeline run, ablation or comparison needs."""

    model_config = ConfigDict(extra="forbid")

    train_file: Path
    test_file: Optional[Path] = None
    test_has_labels: bool = False
    output_dir: Path = Path("runs/default")
    skip_lines: int = Field(default=0, ge=0)
    column_map: ColumnMap = Field(default_factory=ColumnMap)

    dev_fraction: float = Field(default=0.10, gt=0, lt=1)
    fractions: List[float] = Field(default_factory=lambda: [0.05, 0.10, 0.15, 0.20])
    holdout_ids: List[str] = Field(default_factory=list)
    holdout_preset: Optional[str] = Field(default=None, description="Named holdout preset merged into holdout_ids")
    stratify: bool = False
    eval_on: Literal["dev", "test"] = "dev"

    optimizers: List[OptimizerName] = Field(default_factory=lambda: ["adam"])
    train: Dict[str, Any] = Field(default_factory=dict, description="TrainConfig overrides")
    model: Dict[str, Any] = Field(default_factory=dict, description="ModelConfig overrides")

    vocab_max_size: int = Field(default=8000, ge=6)
    max_source_len: int = Field(default=64, ge=2)
    fallback_class: int = Field(default=0, ge=0, le=1)
    seed: int = 42

    @field_validator("fractions")
    @classmethod
    def validate_fractions(cls, v):
        if not v:
            raise ValueError("at least one fraction is required")
        for f in v:
            if not 0 < f < 1:
                raise ValueError(f"fraction {f} outside (0, 1)")
        return v

    @field_validator("optimizers")
    @classmethod
    def validate_optimizers(cls, v):
        if not v:
            raise ValueError("at least one optimizer is required")
        return list(dict.fromkeys(v))

    @model_validator(mode="after")
    def check_eval_source(self):
        if self.eval_on == "test" and (self.test_file is None or not self.test_has_labels):
            raise ValueError("eval_on=test needs a labeled test_file")
        return self

    def build_train_config(self, optimizer: Optional[str] = None) -> TrainConfig:
        overrides = dict(self.train)
        overrides.setdefault("seed", self.seed)
        if optimizer is not None:
            overrides["optimizer"] = optimizer
        elif "optimizer" not in overrides:
            overrides["optimizer"] = self.optimizers[0]
        return TrainConfig(**overrides)

    def build_model_config(self, vocab_size: int) -> ModelConfig:
        overrides = dict(self.model)
        overrides.setdefault("seed", self.seed)
        overrides.setdefault("max_seq_len", self.max_source_len)
        return ModelConfig(vocab_size=vocab_size, **overrides)


class RunManifest(BaseModel):
    """What a pipeline run produced and how to reproduce it."""

    app_version: str
    python_version: str
    numpy_version: str
    created_at: str
    config: Dict[str, Any]
    optimizer: OptimizerName
    dev_fraction: float
    seeds: Dict[str, int]
    train_summary: CountSummary
    split: SplitManifest
    vocab_hash: str
    best_epoch: int
    best_val_loss: float
    eval_on: str
    out_of_class_rate: float
    metrics: Dict[str, Any] = Field(default_factory=dict, description="Rounded evaluation report")
    artifacts: Dict[str, str] = Field(default_factory=dict, description="file name -> sha256")


class AblationRow(BaseModel):
    """One grid cell of an ablation or optimizer comparison."""

    optimizer: OptimizerName
    dev_fraction: float
    status: Literal["ok", "failed"] = "ok"
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    pos_precision: Optional[float] = None
    pos_recall: Optional[float] = None
    pos_f1: Optional[float] = None
    out_of_class_rate: Optional[float] = None
    reference_precision: Optional[float] = None
    reference_recall: Optional[float] = None
    reference_f1: Optional[float] = None
    run_dir: Optional[str] = None
    error: Optional[str] = None


class AblationReport(BaseModel):
    """Rows in grid order plus notes."""

    kind: Literal["ablation", "optimizer_comparison"]
    rows: List[AblationRow]
    constant_hyperparameters: Dict[str, Any]
    notes: List[str] = Field(default_factory=list)
