import logging
import os
from functools import lru_cache
from pathlib import Path
from typing import Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv(dotenv_path=".env")


def _env_int(name: str, default: Optional[int]) -> Optional[int]:
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


def setup_logging(level: Optional[str] = None):
    """Configure basic logging for the application."""
    logging.basicConfig(
        level=getattr(logging, (level or os.getenv("GHL_LOG_LEVEL") or "INFO").upper(), logging.INFO),
        format="%(asctime)s - %(levelname)s - %(message)s",
    )


class RunSettings(BaseModel):
    """Seed, worker count and log level, read from the environment."""

    seed: Optional[int] = Field(default_factory=lambda: _env_int("GHL_SEED", None))
    threads: int = Field(default_factory=lambda: _env_int("GHL_THREADS", 1))
    log_level: str = Field(default_factory=lambda: os.getenv("GHL_LOG_LEVEL", "INFO"))


class QmcSettings(BaseModel):
    """Defaults for the quasi-Monte Carlo rules."""

    kind: Literal["halton", "lattice"] = "halton"
    points: int = 1024
    shifts: int = 10
    batches: int = 10
    leap: int = 409
    budget: int = 1_000_000
    generating_vector: Optional[Path] = None


class SimulationSettings(BaseModel):
    """Settings for the routing simulator."""

    runs: int = 10_000
    dkw_level: float = 0.05


class OutputSettings(BaseModel):
    directory: Path = Path("results")
    format: Literal["csv", "json"] = "csv"
    float_format: str = "%.12g"


class Settings(BaseModel):
    """Main settings class combining all sub-settings."""

    run: RunSettings = Field(default_factory=RunSettings)
    qmc: QmcSettings = Field(default_factory=QmcSettings)
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)


@lru_cache()
def get_settings() -> Settings:
    """Create and return a cached instance of the Settings."""
    settings = Settings()
    setup_logging(settings.run.log_level)
    return settings
