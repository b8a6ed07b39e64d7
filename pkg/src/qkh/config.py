"""Run configuration: TOML key trees validated into typed models.

Everything is validated before any computation starts; validation failures
are raised as :class:`~qkh.errors.ConfigError` with the dotted path of the
offending key.
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PotentialCfg(_Model):
    kind: Literal["harmonic", "gaussian_well", "soft_core"] = "harmonic"
    omega: Optional[float] = 1.0
    depth: Optional[float] = None
    width: Optional[float] = None
    softening: Optional[float] = None


class EnvelopeCfg(_Model):
    kind: Literal["sin_squared", "flat_top_cosine_ramps", "gaussian"] = "sin_squared"
    t_i: float = 0.0
    t_f: float = 2 * math.pi
    ramp: Optional[float] = None
    sigma: Optional[float] = None


class DriveCfg(_Model):
    ell: float = Field(0.0, ge=0)
    omega: float = Field(1.0, gt=0)
    slow_envelope: bool = False
    envelope: Optional[EnvelopeCfg] = EnvelopeCfg()
    continuous_wave: bool = False


class PacketCfg(_Model):
    center: float
    width: float = Field(gt=0)
    amplitude: float
    t_center: float = 0.0


class BathCfg(_Model):
    density: Literal["flat", "gaussian", "table"] = "flat"
    amplitude: float = 0.0
    center: float = 1.0
    width: float = 0.1
    table: Optional[str] = None
    omega_min: float = Field(0.5, gt=0)
    omega_max: float = Field(1.5, gt=0)
    modes: int = Field(64, ge=1)
    n_cut: int = Field(4, ge=2)
    packet: Optional[PacketCfg] = None
    window: Optional[tuple[float, float]] = None

    @model_validator(mode="after")
    def _range(self):
        if self.omega_max <= self.omega_min:
            raise ValueError("omega_max must exceed omega_min")
        if self.density == "table" and not self.table:
            raise ValueError("table density needs a 'table' CSV path")
        return self


class OptomechCfg(_Model):
    m: float = Field(gt=0)
    Omega: float = Field(gt=0)
    omega: float = Field(gt=0)
    kappa: float = Field(gt=0)
    n0: float = Field(ge=0)
    omega0: float = Field(gt=0)
    g0: Optional[float] = None
    G: Optional[float] = None
    severity: Literal["error", "warn"] = "warn"
    duration: float = Field(1e-3, gt=0)

    @model_validator(mode="after")
    def _one_coupling(self):
        if (self.g0 is None) == (self.G is None):
            raise ValueError("give exactly one of g0 or G")
        return self


class PhysicsCfg(_Model):
    potential: PotentialCfg = PotentialCfg()
    drive: Optional[DriveCfg] = DriveCfg()
    bath: Optional[BathCfg] = None
    optomech: Optional[OptomechCfg] = None


class AbsorberCfg(_Model):
    strength: float = Field(1.0, ge=0)
    onset: float = Field(0.8, gt=0, lt=1)


class NumericsCfg(_Model):
    n_points: int = Field(256, ge=8)
    x_min: float = -12.0
    x_max: float = 12.0
    n_cut: int = Field(16, ge=2, le=64)
    dt: float = Field(0.01, gt=0)
    scheme: Literal["split_step_spectral", "crank_nicolson"] = "split_step_spectral"
    record_every: int = Field(10, ge=1)
    max_steps: int = Field(1_000_000, ge=1)
    absorber: Optional[AbsorberCfg] = None
    potential_mode: Literal["auto", "taylor", "functional"] = "auto"
    taylor_order: int = Field(2, ge=1)
    taylor_max_order: int = Field(4, ge=1)
    taylor_tol: float = Field(1e-8, gt=0)
    trap_region: Optional[tuple[float, float]] = None
    leakage_check: bool = True

    @model_validator(mode="after")
    def _grid(self):
        if self.x_max <= self.x_min:
            raise ValueError("x_max must exceed x_min")
        return self


class ParticleCfg(_Model):
    kind: Literal["ground", "gaussian"] = "ground"
    method: Literal["imaginary_time", "analytic"] = "imaginary_time"
    x0: float = 0.0
    p0: float = 0.0
    sigma: float = Field(1.0, gt=0)


class OscillatorCfg(_Model):
    kind: Literal["vacuum", "coherent", "squeezed"] = "vacuum"
    beta_re: float = 0.0
    beta_im: float = 0.0
    r: float = 0.0
    phi: float = 0.0


class ExperimentCfg(_Model):
    frame: Literal["lab", "final", "both", "continuum"] = "lab"
    order: int = Field(1, ge=0, le=2)
    t0: Optional[float] = None
    t1: Optional[float] = None
    particle: ParticleCfg = ParticleCfg()
    oscillator: OscillatorCfg = OscillatorCfg()
    integrand: Literal["R", "i"] = "R"
    kernel_points: int = Field(41, ge=2)
    series_points: int = Field(41, ge=2)
    check_convergence: bool = False


class OutputCfg(_Model):
    dir: str = "qkh_run"
    snapshots: bool = False


class SweepCfg(_Model):
    path: str
    values: Optional[list[float]] = None
    logspace: Optional[tuple[float, float, int]] = None
    command: Literal["simulate", "compare-gauges", "effective-field"] = "simulate"
    parallel: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _axis(self):
        if (self.values is None) == (self.logspace is None):
            raise ValueError("give exactly one of values or logspace")
        return self

    def axis(self) -> list[float]:
        if self.values is not None:
            return [float(v) for v in self.values]
        lo, hi, n = self.logspace
        return [float(lo * (hi / lo) ** (i / (n - 1))) if n > 1 else float(lo) for i in range(int(n))]


class RunConfig(_Model):
    physics: PhysicsCfg = PhysicsCfg()
    numerics: NumericsCfg = NumericsCfg()
    experiment: ExperimentCfg = ExperimentCfg()
    output: OutputCfg = OutputCfg()
    sweep: Optional[SweepCfg] = None

    def resolved(self) -> dict:
        return self.model_dump(mode="json")

    def content_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def set_path(tree: dict, dotted: str, value):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError("cannot descend into a non-table value", dotted)
        node = nxt
    node[keys[-1]] = value


def apply_overrides(tree: dict, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", item)
        key, text = item.split("=", 1)
        set_path(tree, key.strip(), _parse_value(text.strip()))
    return tree


def validate(tree: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = ".".join(str(p) for p in err["loc"])
        raise ConfigError(err["msg"], path) from None


def load_config(path=None, overrides=None) -> RunConfig:
    tree = {}
    if path is not None:
        try:
            tree = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML parse error: {exc}", str(path)) from None
        except OSError as exc:
            raise ConfigError(str(exc), str(path)) from None
    apply_overrides(tree, overrides)
    return validate(tree)
