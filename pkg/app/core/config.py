import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.errors import ConfigError


class TrackerSettings(BaseSettings):
    PROJECT_NAME: str = "Graded Color-Names Tracker"
    VERSION: str = "1.0.0"

    # Background model
    k_sigma: float = Field(2.0, gt=0)
    sigma_floor: float = Field(0.01, ge=0)
    alpha_bg: float = Field(0.05, ge=0, le=1)
    alpha_fg: float = Field(0.005, ge=0, le=1)
    init_frames: int = Field(10, ge=2)
    hist_bins: int = Field(32, ge=2, le=256)

    # Block analysis
    block_size: int = Field(16, ge=4)
    theta: float = Field(0.10, gt=0, lt=1)
    search_radius: int = Field(8, ge=0)
    motion_tol: float = Field(2.0, ge=0)
    min_group_blocks: int = Field(2, ge=1)

    # Color names
    k_labels: int = Field(6, ge=1, le=11)
    entropy_c: float = Field(1.0, gt=0)
    fisher_reg: float = Field(1e-6, ge=0)
    palette_file: Optional[str] = None
    context_scale: float = Field(1.0, ge=0)

    # MeanShift
    kernel: Literal["epanechnikov", "gaussian"] = "epanechnikov"
    bandwidth_scale: float = Field(1.0, gt=0)
    ms_eps: float = Field(0.5, gt=0)
    ms_max_iters: int = Field(20, ge=0)
    ms_start: Literal["group", "previous"] = "group"

    # Graded matching
    lambda_min: float = Field(0.5, gt=0)
    lambda_max: float = Field(2.0, gt=0)
    min_search_radius: int = Field(3, ge=1)
    conf_threshold: float = Field(0.5, ge=0, le=1)
    component_floor: float = Field(0.3, ge=0, le=1)
    step0: int = Field(2, ge=1)
    max_evals: int = Field(200, ge=1)

    # Tracker
    max_misses: int = Field(10, ge=0)
    template_update_conf: float = Field(0.8, ge=0, le=1)
    iou_assoc_threshold: float = Field(0.3, ge=0, le=1)
    warmup_frames: int = Field(3, ge=1)
    velocity_smoothing: float = Field(0.5, ge=0, le=1)

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="TRACKER_",
        case_sensitive=False,
        extra="ignore",
    )

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.alpha_fg > self.alpha_bg:
            raise ValueError("alpha_fg must not exceed alpha_bg")
        if self.lambda_min >= self.lambda_max:
            raise ValueError("lambda_min must be smaller than lambda_max")
        return self


# Keys a JSON config file or --set flag may carry
CONFIG_KEYS = frozenset(
    name for name in TrackerSettings.model_fields if name not in ("PROJECT_NAME", "VERSION")
)


@lru_cache()
def get_settings() -> TrackerSettings:
    return TrackerSettings()


def read_config_file(path: str) -> Dict[str, Any]:
    """Read a flat JSON config file and reject keys no module understands."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(config_path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")

    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return data


def load_settings(
    config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> TrackerSettings:
    """
    Build the effective settings.

    Precedence: overrides (CLI flags) > config file > environment > defaults.
    """
    values: Dict[str, Any] = {}
    if config_path:
        values.update(read_config_file(config_path))

    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = sorted(set(overrides) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values.update(overrides)

    try:
        return TrackerSettings(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")
