"""Configuration management for the U-statistics laboratory."""

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """Application settings, overridable through ``UL_*`` environment variables."""

    model_config = SettingsConfigDict(env_prefix="UL_", extra="ignore")

    # Application Settings
    app_name: str = Field(default="ustat-lab")
    app_version: str = Field(default="0.1.0")
    log_level: str = Field(default="INFO")

    # Reproducibility
    seed: int = Field(default=0, ge=0, lt=2**64, description="Default run seed (UL_SEED)")

    # Dyadic arithmetic
    digit_cap: int = Field(default=2**24, gt=0, description="Maximum digits materialized per stream")
    doubling_precision: int = Field(default=64, gt=0, description="Digits used for real values of doubling paths")
    guard_digits: int = Field(default=128, gt=0, description="Digit window for orbit-coincidence tests")

    # Accumulation
    compensated_threshold: int = Field(default=10_000, gt=0, description="Above this n, rows are summed with fsum")

    # Rotation angle: fractional part of the golden ratio, ~80 bits of decimals
    rotation_alpha: str = Field(default="0.6180339887498948482045868")

    # Reports
    decimal_places: int = Field(default=12, gt=0)
    report_dir: str = Field(default="reports")

    # Workers
    threads: int = Field(default=1, ge=1)
    progress_every: int = Field(default=1000, ge=1)


# Global settings instance
settings = Settings()
