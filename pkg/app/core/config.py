"""
Configuration settings for PCLab.
"""

from pathlib import Path
from typing import Optional
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_LEVELS = ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG")
PROJECT_ROOT = Path(__file__).resolve().parents[2]


class Settings(BaseSettings):
    """Application settings."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="PCLAB_",
        case_sensitive=False,
        extra="ignore",  # Ignore extra environment variables
    )

    # Application
    app_name: str = "PCLab"
    app_version: str = "0.1.0"
    debug: bool = Field(default=False, description="Debug mode")

    # Filesystem
    runs_dir: Path = Field(default=Path("runs"), description="Root directory for per-run outputs")
    holdout_dir: Path = Field(
        default=PROJECT_ROOT / "configs" / "holdouts",
        description="Directory of named holdout presets, one <name>.txt of par_ids each"
    )
    checkpoint_path: Optional[Path] = Field(
        default=None,
        description="Checkpoint served by the prediction API"
    )

    # Pipeline defaults
    seed: int = Field(default=42, description="Global seed used when a config omits one")
    max_source_len: int = Field(default=64, description="Maximum encoder tokens, prefix and EOS included")
    fallback_class: int = Field(default=0, description="Label emitted for out-of-class decodes")
    corpus_skip_lines: int = Field(default=0, description="Preamble lines skipped when reading a corpus")

    # API
    api_v1_prefix: str = Field(default="/api/v1", description="API v1 prefix")

    # Logging
    log_level: str = Field(default="INFO", description="Logging level")

    @field_validator("max_source_len")
    @classmethod
    def validate_max_source_len(cls, v):
        # prefix + EOS must fit
        if v < 2:
            raise ValueError("max_source_len must be at least 2")
        return v

    @field_validator("fallback_class")
    @classmethod
    def validate_fallback_class(cls, v):
        if v not in (0, 1):
            raise ValueError("fallback_class must be 0 or 1")
        return v

    @field_validator("corpus_skip_lines")
    @classmethod
    def validate_corpus_skip_lines(cls, v):
        if v < 0:
            raise ValueError("corpus_skip_lines must be non-negative")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        level = v.upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"Unknown log level: {v}")
        return level


# Global settings instance
settings = Settings()
