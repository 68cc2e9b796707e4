"""Experiment configuration (JSON, unknown keys rejected) and the run manifest."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .copula_core import TransformationMatrix, ValidationError, matrix_from_rows, read_transformation_matrix
from .rkhs import Kernel, make_kernel

ARTIFACT_VERSION = "0.1.0"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class KernelConfig(_Strict):
    name: Literal["gaussian", "polynomial", "constant"] = "gaussian"
    params: dict[str, float] = Field(default_factory=lambda: {"width": 0.5})

    def build(self) -> Kernel:
        params = dict(self.params)
        if self.name == "polynomial" and "degree" in params:
            params["degree"] = int(params["degree"])
        return make_kernel(self.name, **params)

    @model_validator(mode="after")
    def _buildable(self):
        # surface bad kernel parameters at load time, not when learning starts
        try:
            self.build()
        except ValidationError as exc:
            raise ValueError(str(exc)) from exc
        return self


class MixingConfig(_Strict):
    cells_per_axis: int = Field(2, ge=1)
    epsilon: float = Field(0.25, gt=0, le=1)
    n_starts: int = Field(8, ge=1)
    n_reps: int = Field(20_000, ge=100)
    horizon: int = Field(6, ge=1)


class ExperimentConfig(_Strict):
    """Every knob of a run.  ``seed`` has no default: a config file must state it."""

    seed: int = Field(ge=0, lt=2**64)
    matrix: list[list[float]] | None = None
    matrix_file: str | None = None
    matrix_orientation: Literal["bottom_to_top", "top_to_bottom"] = "bottom_to_top"
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    theta: float = Field(0.75, gt=0.5, le=1)
    lam: float = Field(0.1, gt=0, alias="lambda")
    beta: float = Field(0.5, gt=0, le=1)
    M: float = Field(1.0, gt=0)
    noise_level: float = Field(0.1, ge=0)
    T: int = Field(5000, ge=2)
    replicates: int = Field(50, ge=1)
    delta: float = Field(0.2, gt=0, lt=1)
    copula_grid: int = Field(64, ge=8)
    spectral_grid: int = Field(16, ge=8)
    copula_checkpoints: list[int] = Field(default_factory=lambda: [100, 1_000, 10_000, 100_000])
    copula_seeds: int = Field(10, ge=1)
    target_index: int = Field(2, ge=1)
    t_star: int | None = Field(None, ge=1)
    check_recursion: bool = True
    mixing: MixingConfig = Field(default_factory=MixingConfig)
    workers: int = Field(1, ge=1)
    out: str = "results"

    @field_validator("copula_checkpoints")
    @classmethod
    def _sorted_checkpoints(cls, v):
        if not v or any(n < 1 for n in v) or sorted(set(v)) != v:
            raise ValueError("copula_checkpoints must be strictly increasing positive integers")
        return v

    @model_validator(mode="after")
    def _one_matrix_source(self):
        if self.matrix is not None and self.matrix_file is not None:
            raise ValueError("give either 'matrix' or 'matrix_file', not both")
        return self

    def transformation_matrix(self, base_dir: Path | None = None) -> TransformationMatrix:
        if self.matrix_file is not None:
            p = Path(self.matrix_file)
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            return read_transformation_matrix(p)
        rows = self.matrix if self.matrix is not None else [[0.25, 0.25], [0.25, 0.25]]
        return matrix_from_rows(rows, self.matrix_orientation)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form; key order in the source file does not matter."""
        doc = self.model_dump(mode="json", by_alias=True, exclude={"out", "workers"})
        return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        data = self.model_dump(by_alias=True)
        data.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.model_validate(data)


def default_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig.model_validate({"seed": 42, **overrides})


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        cfg = ExperimentConfig.model_validate(doc)
        if cfg.matrix_file is not None and not Path(cfg.matrix_file).is_absolute():
            cfg = cfg.with_overrides(matrix_file=str(path.parent / cfg.matrix_file))
        return cfg
    except ValueError as exc:  # pydantic.ValidationError subclasses ValueError
        raise ConfigError(f"{path}: {exc}") from exc


class ConfigError(ValidationError):
    pass


class RunManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    artifact_version: str = ARTIFACT_VERSION
    command: str
    config_hash: str
    seed: int
    replicate_seeds: list[int] = Field(default_factory=list)
    started_at: str
    finished_at: str | None = None
    files: dict[str, str] = Field(default_factory=dict)  # relative path -> sha256
    passed: bool | None = None

    def register(self, out_dir: Path, path: Path) -> None:
        rel = path.relative_to(out_dir).as_posix()
        self.files[rel] = hashlib.sha256(path.read_bytes()).hexdigest()

    def write(self, out_dir: Path) -> Path:
        p = out_dir / "manifest.json"
        p.write_text(json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n")
        return p
