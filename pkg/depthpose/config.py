"""
Run configuration.

Precedence, lowest first: field defaults, the JSON config file, DEPTHPOSE_*
environment variables (a .env file is loaded with python-dotenv), and
finally explicit command-line flags.
"""
import json
import logging
import os
from pathlib import Path

from dotenv import find_dotenv, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .geometry import CameraIntrinsics, linemod_intrinsics

logger = logging.getLogger("depthpose.config")

ENV_PREFIX = "DEPTHPOSE_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    object_id: str = "lbracket"
    mesh: str = "lbracket"
    mesh_size: float = Field(0.1, gt=0)
    mesh_scale: float = Field(1.0, gt=0)

    n_keypoints: int = Field(8, ge=1)
    add_center: bool = True
    bandwidth_rel: float = Field(0.05, gt=0)
    n_points: int = Field(12288, ge=1)
    symmetric: bool = False
    symmetric_objects: list[str] = Field(default_factory=lambda: ["eggbox", "glue"])
    seed: int = Field(0, ge=0)

    camera_scale: float = Field(0.25, gt=0)
    intrinsics_path: str | None = None
    z_range: tuple[float, float] = (0.45, 0.6)
    background_z: float | None = None

    offset_noise_sigma_rel: float = Field(0.0, ge=0)
    label_flip_rate: float = Field(0.0, ge=0, le=1)
    occlusion_fraction: float = Field(0.0, ge=0, lt=1)

    adds_accelerate: bool = False
    workers: int = Field(1, ge=1)
    input_path: str | None = None
    output_dir: str = "out"
    log_level: str = "INFO"
    log_file: str | None = None

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        value = value.upper()
        if value not in LOG_LEVELS:
            raise ValueError(f"log_level must be one of {LOG_LEVELS}")
        return value

    @property
    def is_symmetric(self) -> bool:
        return self.symmetric or self.object_id in self.symmetric_objects

    def intrinsics(self) -> CameraIntrinsics:
        if self.intrinsics_path:
            from .formats import read_intrinsics
            return read_intrinsics(self.intrinsics_path)
        return linemod_intrinsics(self.camera_scale)


def _env_values() -> dict:
    values = {}
    for name in RunConfig.model_fields:
        raw = os.getenv(ENV_PREFIX + name.upper())
        if raw is None:
            continue
        if raw.startswith("[") or raw.startswith("{"):
            try:
                raw = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{ENV_PREFIX}{name.upper()} is not valid JSON: {e}") from e
        values[name] = raw
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    load_dotenv(find_dotenv(usecwd=True))
    data: dict = {}
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    data.update(_env_values())
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    logger.debug(f"config: {cfg.model_dump_json()}")
    return cfg


def save_config(path: str | Path, cfg: RunConfig):
    from .formats import atomic_write
    atomic_write(path, cfg.model_dump_json(indent=2) + "\n")
