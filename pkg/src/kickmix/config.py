"""Experiment configuration files (JSON, versioned schema, unknown keys rejected)."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from kickmix.errors import ConfigurationError

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "verify-operators",
    "verify-estimates",
    "run-deterministic",
    "run-kicked",
    "verify-conditions",
    "mixing",
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TruncationSpec(_Strict):
    n_max: int = Field(8, ge=2, le=512)


class SolverSpec(_Strict):
    nu: float = Field(0.5, gt=0, allow_inf_nan=False)
    omega: float = Field(1.0, ge=0, allow_inf_nan=False)
    dt: float = Field(0.05, gt=0, le=0.05)
    integrator: Literal["etdrk2", "ifrk2"] = "etdrk2"


class ConstantG(_Strict):
    type: Literal["constant"] = "constant"
    value: float = 1.0


class SineG(_Strict):
    type: Literal["sine"] = "sine"
    amplitude: float = 1.0
    frequency: float = 1.0
    offset: float = 0.0


GSpec = Union[ConstantG, SineG]


class ZeroForce(_Strict):
    kind: Literal["zero"] = "zero"


class ZonalForce(_Strict):
    kind: Literal["zonal_from_g"] = "zonal_from_g"
    g: GSpec = Field(default_factory=ConstantG, discriminator="type")


class AlmostZonalForce(_Strict):
    kind: Literal["almost_zonal"] = "almost_zonal"
    g: GSpec = Field(default_factory=ConstantG, discriminator="type")
    delta: Optional[float] = Field(None, ge=0)
    pattern_seed: int = Field(0, ge=0)


class TableForce(_Strict):
    kind: Literal["general_bounded"] = "general_bounded"
    amplitude: Optional[float] = Field(None, ge=0)
    small_force_fraction: float = Field(0.5, gt=0, lt=1)
    period: float = Field(5.0, gt=0)
    n_table: int = Field(50, ge=1)
    horizon: float = Field(40.0, gt=0)
    pattern_seed: int = Field(0, ge=0)


ForceSpec = Union[ZeroForce, ZonalForce, AlmostZonalForce, TableForce]


class KickSpec(_Strict):
    density: Literal["uniform", "triangular", "truncated-quadratic"] = "uniform"
    b: Optional[list[float]] = None
    amplitude: float = Field(0.1, ge=0)
    n_kick: int = Field(8, ge=0)
    big_kick: Optional[dict] = None
    b_min: float = Field(0.05, gt=0)

    @field_validator("b")
    @classmethod
    def _non_negative(cls, v):
        if v is not None and any((not math.isfinite(x)) or x < 0 for x in v):
            raise ValueError("amplitudes must be finite and >= 0")
        return v

    @field_validator("big_kick")
    @classmethod
    def _big_kick_keys(cls, v):
        if v is not None:
            extra = set(v) - {"M", "N"}
            if extra or not {"M", "N"} <= set(v):
                raise ValueError("big_kick needs exactly the keys M and N")
        return v


class CouplingSpec(_Strict):
    kind: Literal["independent", "synchronized", "maximal_low_mode"] = "synchronized"
    n_couple: int = Field(8, ge=1)
    d0: float = Field(0.05, gt=0)
    l_d0: Optional[int] = Field(None, ge=0)
    waiting: Literal["independent", "synchronized"] = "independent"


class Params(_Strict):
    radius: float = Field(1.0, gt=0)
    trials: int = Field(200, ge=1)
    t_end: float = Field(5.0, ge=0)
    sample_every: float = Field(0.1, gt=0)
    snapshot_stride: int = Field(0, ge=0)
    n_low: int = Field(8, ge=1)
    n_chains: int = Field(100, ge=1)
    k_max: int = Field(15, ge=1)
    n_pairs: int = Field(200, ge=1)
    n_initial_pairs: int = Field(3, ge=1)
    d: float = Field(0.1, gt=0)
    l_grid: list[int] = Field(default_factory=lambda: [1, 2, 4, 8])
    d_grid: Optional[list[float]] = None
    n_grid: list[int] = Field(default_factory=lambda: [4, 8, 16, 30])
    condition_trials: int = Field(2000, ge=100)
    c1_trials: int = Field(100, ge=100)
    squeezing_trials: int = Field(100, ge=1)
    contraction_k: int = Field(3, ge=1)
    c_spread: float = Field(0.3, gt=0)
    r2_min: float = Field(0.9, ge=0, le=1)
    tolerance: float = Field(1e-10, gt=0)

    @field_validator("l_grid", "n_grid")
    @classmethod
    def _ascending(cls, v):
        if not v or sorted(v) != v or v[0] < 0:
            raise ValueError("must be a non-empty ascending list of non-negative integers")
        return v

    @field_validator("d_grid")
    @classmethod
    def _positive(cls, v):
        if v is not None and (not v or any(x <= 0 for x in v)):
            raise ValueError("must be a non-empty list of positive numbers")
        return v


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = 1
    experiment: Literal[
        "verify-operators",
        "verify-estimates",
        "run-deterministic",
        "run-kicked",
        "verify-conditions",
        "mixing",
    ]
    seed: int = Field(0, ge=0)
    truncation: TruncationSpec = Field(default_factory=TruncationSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    force: ForceSpec = Field(default_factory=ZonalForce, discriminator="kind")
    kicks: KickSpec = Field(default_factory=KickSpec)
    coupling: CouplingSpec = Field(default_factory=CouplingSpec)
    params: Params = Field(default_factory=Params)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _sizes(self):
        dim = self.truncation.n_max * (self.truncation.n_max + 2)
        n_kick = len(self.kicks.b) if self.kicks.b is not None else self.kicks.n_kick
        if n_kick > dim:
            raise ValueError(f"kicks: {n_kick} amplitudes exceed basis dimension {dim}")
        return self

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        got = e.get("input")
        try:
            got_s = json.dumps(got)
        except TypeError:
            got_s = repr(got)
        if len(got_s) > 80:
            got_s = got_s[:77] + "..."
        lines.append(f"{loc}: expected {e['msg']}; got {got_s}")
    return "\n".join(lines)


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as err:
        raise ConfigurationError("invalid configuration:\n" + _format_errors(err)) from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigurationError(f"cannot read {path}: {err.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"{path}: invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: the top level must be a JSON object")
    return parse_config(doc)


def g_functions(spec: GSpec):
    """``(g, g')`` callables for a g specification."""
    if isinstance(spec, ConstantG):
        v = spec.value
        return (lambda t: v), (lambda t: 0.0)
    a, w, c = spec.amplitude, spec.frequency, spec.offset
    return (lambda t: c + a * np.sin(w * t)), (lambda t: a * w * np.cos(w * t))
