"""JSON experiment configuration."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .perception import (DEFAULT_TAU, IMPLANT_28, STANDARD_PATIENTS, ImplantGrid,
                         PatientParams, PerceptGrid)
from .solver import SolverOptions

METHODS = ("nearest", "lanczos", "pinv", "ours")
MNIST_ENV = "STIMENC_MNIST"
DEFAULT_MNIST = Path("/root/data/mnist/t10k-images-idx3-ubyte")


class ConfigError(ValueError):
    pass


def default_mnist_path() -> Path:
    return Path(os.environ.get(MNIST_ENV, DEFAULT_MNIST))


@dataclass
class DatasetSpec:
    format: str = "idx"          # idx | pgm | synthetic
    path: str | None = None
    count: int = 100             # synthetic only
    size: int = 28               # synthetic only

    def validate(self):
        if self.format not in ("idx", "pgm", "synthetic"):
            raise ConfigError(f"unknown dataset format {self.format!r}")
        if self.format != "synthetic":
            if not self.path:
                raise ConfigError("dataset.path is required")
            if not Path(self.path).exists():
                raise ConfigError(f"dataset file not found: {self.path}")


@dataclass
class ExperimentConfig:
    patients: list[PatientParams] = field(default_factory=lambda: list(STANDARD_PATIENTS))
    implants: list[ImplantGrid] = field(default_factory=lambda: [IMPLANT_28])
    grid_px: int = 28
    margin_um: float = 0.0
    tau: float = DEFAULT_TAU
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    solver: SolverOptions = field(default_factory=SolverOptions)
    subset: int | None = 100
    seed: int = 0
    pinv_cap: int = 10_000_000
    save_percepts: bool = True
    anytime: dict = field(default_factory=dict)
    truncation: dict = field(default_factory=dict)
    mismatch: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)

    def grid_for(self, implant: ImplantGrid) -> PerceptGrid:
        return PerceptGrid.for_implant(implant, self.grid_px, self.margin_um)

    def validate(self, need_dataset: bool = True) -> "ExperimentConfig":
        if not self.patients:
            raise ConfigError("at least one patient is required")
        if not self.implants:
            raise ConfigError("at least one implant is required")
        if not self.methods:
            raise ConfigError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.grid_px < 1:
            raise ConfigError("grid_px must be positive")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1]")
        if self.subset is not None and self.subset < 1:
            raise ConfigError("subset must be positive")
        labels = [p.label for p in self.patients]
        if len(set(labels)) != len(labels):
            raise ConfigError("patient names must be unique")
        if need_dataset:
            self.dataset.validate()
        return self


def _patient(d: dict) -> PatientParams:
    try:
        return PatientParams(float(d["rho_um"]), float(d["lambda_um"]),
                             tuple(d.get("optic_disc_um", (4000.0, 0.0))),
                             int(d.get("axon_segments", 300)), str(d.get("name", "")))
    except KeyError as exc:
        raise ConfigError(f"patient is missing {exc.args[0]!r}") from None


def _implant(d: dict) -> ImplantGrid:
    try:
        return ImplantGrid(int(d["rows"]), int(d["cols"]), float(d["pitch_h_um"]),
                           float(d["pitch_v_um"]), tuple(d.get("center_um", (0.0, 0.0))),
                           str(d.get("name", "")))
    except KeyError as exc:
        raise ConfigError(f"implant is missing {exc.args[0]!r}") from None


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a config; flat single-patient/implant keys are accepted too."""
    cfg = ExperimentConfig()
    try:
        if "patients" in d:
            cfg.patients = [_patient(p) for p in d["patients"]]
        elif "rho_um" in d:
            cfg.patients = [_patient(d)]
        if "implants" in d:
            cfg.implants = [_implant(i) for i in d["implants"]]
        elif "rows" in d:
            cfg.implants = [_implant(d)]
        for key in ("grid_px", "subset", "seed", "pinv_cap"):
            if key in d:
                setattr(cfg, key, None if d[key] is None else int(d[key]))
        for key in ("margin_um", "tau"):
            if key in d:
                setattr(cfg, key, float(d[key]))
        for key in ("anytime", "truncation", "mismatch", "bench"):
            if key in d:
                setattr(cfg, key, dict(d[key]))
        if "save_percepts" in d:
            cfg.save_percepts = bool(d["save_percepts"])
        if "methods" in d:
            cfg.methods = list(d["methods"])
        if "solver" in d:
            cfg.solver = SolverOptions(**d["solver"])
        ds = d.get("dataset")
        if isinstance(ds, str):
            cfg.dataset = DatasetSpec(path=ds)
        elif isinstance(ds, dict):
            cfg.dataset = DatasetSpec(**ds)
        else:
            cfg.dataset = DatasetSpec(path=str(default_mnist_path()))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(d)
