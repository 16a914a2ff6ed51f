from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

DEFAULT_DATA_DIR = ".mobility"
LOG_LEVELS: frozenset[str] = frozenset({"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"})
_DATA_DIR_RELATIVE_DEFAULTS: tuple[tuple[str, Path], ...] = (
    ("results_dir", Path("results")),
    ("log_dir", Path("logs")),
)
_PATH_FIELDS: tuple[str, ...] = (
    "data_dir",
    *(field_name for field_name, _ in _DATA_DIR_RELATIVE_DEFAULTS),
)
_BOOLEAN_COERCION_FIELDS: tuple[str, ...] = (
    "log_file_enabled",
    "telemetry_enabled",
)


def _default_in_data_dir(relative_path: Path) -> Path:
    return Path(DEFAULT_DATA_DIR) / relative_path


def _data_dir_default_note(relative_path: Path) -> str:
    return f"Defaults to `${{MOBILITY_DATA_DIR}}/{relative_path}` when not explicitly set."


def _resolve_path(value: str | Path) -> Path:
    return Path(value).expanduser().resolve()


def _parse_bool_with_default(value: Any, *, default: bool) -> bool:
    if value is None:
        return default
    if isinstance(value, bool):
        return value
    if isinstance(value, int):
        if value == 1:
            return True
        if value == 0:
            return False
        return default
    if not isinstance(value, str):
        return default

    normalized = value.strip().lower()
    if normalized in {"1", "true", "yes", "on"}:
        return True
    if normalized in {"0", "false", "no", "off"}:
        return False
    return default


class AppSettings(BaseSettings):
    """
    Canonical runtime configuration.

    Every option is read from a `MOBILITY_*` environment variable (or `.env`).
    Scenario-level planner weights live in the scenario file and are overridden
    per run by CLI flags, not here.
    """

    model_config = SettingsConfigDict(
        env_prefix="MOBILITY_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        frozen=True,
    )

    # Paths.
    data_dir: Path = Field(
        default=Path(DEFAULT_DATA_DIR),
        description="Root runtime directory for results and logs.",
    )
    results_dir: Path = Field(
        default=_default_in_data_dir(Path("results")),
        description=f"Directory for results files. {_data_dir_default_note(Path('results'))}",
    )
    log_dir: Path = Field(
        default=_default_in_data_dir(Path("logs")),
        description=f"Directory for JSON log files. {_data_dir_default_note(Path('logs'))}",
    )

    # Logging and telemetry.
    log_level: str = Field(
        default="WARNING",
        validation_alias="MOBILITY_LOG",
        description="Console verbosity on stderr (DEBUG, INFO, WARNING, ERROR).",
    )
    log_file_enabled: bool = Field(
        default=False,
        description="Also write JSON-lines logs under `log_dir`.",
    )
    telemetry_enabled: bool = Field(
        default=False,
        description="Enable lightweight internal telemetry events.",
    )
    telemetry_sink: Literal["none", "log"] = Field(
        default="none",
        description="Telemetry sink backend. `log` emits structured telemetry records.",
    )

    # Computation.
    workers: int = Field(
        default=1,
        description="Thread-pool width for subclass solves, verifier cells and episodes.",
    )
    default_seed: int = Field(
        default=0,
        description="Master seed used when `--seed` is not given.",
    )
    brute_force_limit: int = Field(
        default=1_000_000,
        description="Largest number of candidate assignments an exhaustive search may visit.",
    )
    planning_profile_limit: int = Field(
        default=65_536,
        description="Largest number of prescription profiles enumerated at a single stage.",
    )
    ic_extra_samples: int = Field(
        default=25,
        description="Seeded per-service value-of-time misreports added to the fixed grid.",
    )

    @field_validator("log_level", mode="before")
    @classmethod
    def _normalize_log_level(cls, value: Any) -> str:
        if isinstance(value, str):
            normalized = value.strip().upper()
            if normalized in LOG_LEVELS:
                return normalized
        return "WARNING"

    @field_validator("telemetry_sink", mode="before")
    @classmethod
    def _normalize_telemetry_sink(cls, value: Any) -> str:
        if value is None:
            return "none"
        if isinstance(value, str):
            normalized = value.strip().lower()
            if normalized in {"none", "log"}:
                return normalized
        raise ValueError("MOBILITY_TELEMETRY_SINK must be one of: none, log")

    @field_validator(*_BOOLEAN_COERCION_FIELDS, mode="before")
    @classmethod
    def _coerce_booleans(cls, value: Any) -> bool:
        return _parse_bool_with_default(value, default=False)

    @field_validator("workers", mode="after")
    @classmethod
    def _validate_workers(cls, value: int) -> int:
        if value < 1:
            raise ValueError("MOBILITY_WORKERS must be at least 1")
        return value

    @field_validator("brute_force_limit", "planning_profile_limit", mode="after")
    @classmethod
    def _validate_limits(cls, value: int) -> int:
        if value < 1:
            raise ValueError("enumeration limits must be positive")
        return value

    @field_validator("ic_extra_samples", mode="after")
    @classmethod
    def _validate_extra_samples(cls, value: int) -> int:
        if value < 0:
            raise ValueError("MOBILITY_IC_EXTRA_SAMPLES must be non-negative")
        return value


def _apply_path_defaults(settings: AppSettings) -> AppSettings:
    updates: dict[str, Path] = {}
    for field_name, relative_path in _DATA_DIR_RELATIVE_DEFAULTS:
        if field_name in settings.model_fields_set:
            continue
        updates[field_name] = settings.data_dir / relative_path
    if not updates:
        return settings
    return settings.model_copy(update=updates)


def _resolve_path_fields(settings: AppSettings) -> AppSettings:
    updates = {
        field_name: _resolve_path(getattr(settings, field_name)) for field_name in _PATH_FIELDS
    }
    return settings.model_copy(update=updates)


def load_settings() -> AppSettings:
    settings = AppSettings()
    settings = _apply_path_defaults(settings)
    return _resolve_path_fields(settings)
