"""Configuration defaults, run configuration and logging setup for burrscan."""

import logging
import os
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from rich.logging import RichHandler

LOG_ENV = "BURRSCAN_LOG"
OUT_ENV = "BURRSCAN_OUT"
WORKERS_ENV = "BURRSCAN_WORKERS"

SUPPORTED_ALPHAS = (0.10, 0.05, 0.01)
DEFAULT_WINDOW_DAYS = 30.0
DEFAULT_ALPHA = 0.05
DEFAULT_NOISE_Z = 4.0

_LOG_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "WARN": logging.WARNING,
    "ERROR": logging.ERROR,
}


class BurrscanError(Exception):
    """Base class for every burrscan domain error."""
    pass


class ConfigError(BurrscanError):
    """Custom exception for invalid run configuration."""
    pass


def get_default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "burrscan_out"))


def get_default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def get_log_level() -> int:
    """Resolve the log level from BURRSCAN_LOG, defaulting to WARNING."""
    raw = os.environ.get(LOG_ENV, "WARNING").strip().upper()
    return _LOG_LEVELS.get(raw, logging.WARNING)


def configure_logging(level: Optional[int] = None) -> None:
    """
    Routes the burrscan loggers through a rich handler on stderr.

    Safe to call more than once; the handler is installed only the first time.

    Args:
        level: Explicit level. When omitted, BURRSCAN_LOG decides.
    """
    logger = logging.getLogger("burrscan")
    if level is None:
        level = get_log_level()
        raw = os.environ.get(LOG_ENV)
        if raw and raw.strip().upper() not in _LOG_LEVELS:
            logger.warning("Unknown %s value %r, using WARNING", LOG_ENV, raw)
    logger.setLevel(level)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(show_path=False, rich_tracebacks=False)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
        logger.propagate = False


class RunConfig(BaseModel):
    """Everything one `analyze` run needs; validated before any output is written."""

    inputs: List[Path]
    window_days: float = DEFAULT_WINDOW_DAYS
    stride_days: Optional[float] = None
    alpha: float = DEFAULT_ALPHA
    mode: Literal["upper", "two_sided"] = "upper"
    noise_z: float = DEFAULT_NOISE_Z
    whitelist: Optional[Path] = None
    thresholds: Optional[Path] = None
    out_dir: Path = Field(default_factory=get_default_out_dir)
    workers: int = Field(default_factory=get_default_workers)
    seed: Optional[int] = None

    @field_validator("inputs")
    @classmethod
    def _inputs_exist(cls, value: List[Path]) -> List[Path]:
        if not value:
            raise ValueError("at least one input path is required")
        for path in value:
            if not path.is_file():
                raise ValueError(f"input file not found: {path}")
        return value

    @field_validator("window_days")
    @classmethod
    def _positive_window(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("window duration must be positive")
        return value

    @field_validator("stride_days")
    @classmethod
    def _positive_stride(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value <= 0:
            raise ValueError("stride must be positive")
        return value

    @field_validator("alpha")
    @classmethod
    def _known_alpha(cls, value: float) -> float:
        for known in SUPPORTED_ALPHAS:
            if abs(value - known) < 1e-12:
                return known
        raise ValueError(f"alpha must be one of {SUPPORTED_ALPHAS}, got {value}")

    @field_validator("noise_z")
    @classmethod
    def _nonnegative_gate(cls, value: float) -> float:
        if value < 0:
            raise ValueError("noise_z must be >= 0")
        return value

    @field_validator("workers")
    @classmethod
    def _at_least_one_worker(cls, value: int) -> int:
        return max(1, value)

    @model_validator(mode="after")
    def _side_files_exist(self) -> "RunConfig":
        if self.whitelist is not None and not self.whitelist.is_file():
            raise ValueError(f"whitelist file not found: {self.whitelist}")
        if self.thresholds is not None and not self.thresholds.is_file():
            raise ValueError(f"thresholds file not found: {self.thresholds}")
        return self

    def echo(self) -> dict:
        """JSON-safe copy of the configuration for the run report."""
        return self.model_dump(mode="json")


def build_run_config(**kwargs) -> RunConfig:
    """
    Validates keyword arguments into a RunConfig.

    Raises:
        ConfigError: With the first validation message, which names the offending path or field.
    """
    try:
        return RunConfig(**kwargs)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first.get("loc", ())) or "config"
        message = first.get("msg", str(e)).removeprefix("Value error, ")
        raise ConfigError(f"{field}: {message}") from e
