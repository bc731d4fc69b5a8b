"""Run configuration and request models shared by the service and the CLI.

Config files are flat `key = value` text; `#` starts a comment. Keys are
the RunConfig field names.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .params import ConfigError, SchedulerConfig, level_params


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = 0.1
    b: float = 1.25
    lambda0: float = 8.0
    M: float = 2.0
    C0: float = 1.0
    eta: float = 1e-3
    demo_mode: bool = True
    T: Optional[float] = None                 # overrides T_over_tau when given
    T_over_tau: int = Field(4, ge=1)
    n: int = 16
    dt_divisor: int = Field(16, ge=4)
    q_max: int = Field(1, ge=0)
    seed: Literal["zero", "shear"] = "zero"
    lambda_bar: int = 4
    shear_C: float = 1.0
    bifurcation: Optional[tuple[float, float]] = None   # in units of tau_q
    out: str = "out"
    threads: int = Field(1, ge=1)
    C_round: float = 8.0
    N0_phi: float = 3.0

    @field_validator("n")
    @classmethod
    def _pow2(cls, v):
        if v < 16 or v & (v - 1):
            raise ValueError("n must be a power of two >= 16")
        return v

    @field_validator("bifurcation", mode="before")
    @classmethod
    def _pair(cls, v):
        if isinstance(v, str):
            parts = [x for x in v.replace(",", " ").split() if x]
            if len(parts) != 2:
                raise ValueError("bifurcation takes two numbers")
            return tuple(float(x) for x in parts)
        return v

    def scheduler(self) -> SchedulerConfig:
        base = SchedulerConfig(alpha=self.alpha, b=self.b, lambda0=self.lambda0, M=self.M, C0=self.C0,
                               T=1.0, eta=self.eta, demo_mode=self.demo_mode)
        T = self.T if self.T is not None else self.T_over_tau * level_params(base, 0).tau_q
        return base.replace(T=T)


def parse_config(text: str, overrides: dict = None) -> RunConfig:
    kv = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        kv[k] = v
    kv.update(overrides or {})
    try:
        cfg = RunConfig(**kv)
        cfg.scheduler()
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    return cfg


def load_config(path, overrides: dict = None) -> RunConfig:
    try:
        text = Path(path).read_text() if path else ""
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, overrides)


class ParamsRequest(BaseModel):
    config: RunConfig = RunConfig()
    q: int = Field(0, ge=0)


class SeedRequest(BaseModel):
    config: RunConfig = RunConfig()


class StepRequest(BaseModel):
    config: RunConfig = RunConfig()
    tuple_path: Optional[str] = None


class BifurcateRequest(BaseModel):
    config: RunConfig = RunConfig()
    tuple_path: Optional[str] = None
    interval: Optional[tuple[float, float]] = None


class VerifyRequest(BaseModel):
    tuple_path: str
    config: RunConfig = RunConfig()
    out: Optional[str] = None


class ExportRequest(BaseModel):
    tuple_path: str
    out: str = "out/csv"
    field: Literal["v", "p", "R", "kappa", "phi"] = "v"
    t: float = 0.0
    axis: int = Field(2, ge=0, le=2)
    index: int = 0


class ErrorBody(BaseModel):
    kind: str
    exit_code: int
    detail: str
