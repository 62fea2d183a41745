"""Declarative run configuration (a single JSON document)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .backward import SchemeParams
from .convex import ConvexObstacle, obstacle_from_dict
from .errors import ConfigError, MFBSVIError
from .forward import TimeGrid
from .presets import BENCHMARKS, driver_from_spec, model_from_spec, terminal
from .pvi import SpaceGrid


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Strict):
    """Linear coefficients ``b = d0*x' + d1*x + d2`` and likewise for sigma."""

    preset: Literal["linear"] = "linear"
    drift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    diffusion: tuple[float, float, float] = (0.0, 0.0, 1.0)


class DriverSpec(_Strict):
    preset: Literal["linear"] = "linear"
    yprime: float = 0.0
    y: float = 0.0
    z: float = 0.0
    const: float = 0.0
    terminal: dict = Field(default_factory=lambda: {"kind": "constant", "c": 1.0})

    @field_validator("terminal")
    @classmethod
    def _known_terminal(cls, v: dict) -> dict:
        try:
            terminal(**v)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"invalid terminal preset: {exc}") from None
        return v


class Grids(_Strict):
    T: float = Field(1.0, gt=0)
    M: int = Field(100, ge=1)
    N: int = Field(10_000, ge=2)
    K: int = Field(5_000, ge=1)
    J: int = Field(200, ge=8)
    x_box: tuple[float, float] = (-3.0, 3.0)

    @field_validator("x_box")
    @classmethod
    def _ordered(cls, v):
        if not v[0] < v[1]:
            raise ValueError("x_box must satisfy lo < hi")
        return v


class Scheme(_Strict):
    eps: list[float] = Field(default_factory=lambda: [0.1, 0.03, 0.01, 0.003], min_length=1)
    form: Literal["penalized", "prox"] = "prox"
    basis: Literal["bins", "poly"] = "bins"
    degree: int = Field(3, ge=0)
    ridge: float = Field(1e-8, ge=0)
    theta: float = Field(1.0, ge=0, le=1)
    n_bins: int = Field(50, ge=1)

    @field_validator("eps")
    @classmethod
    def _decreasing(cls, v):
        if any(e <= 0 for e in v):
            raise ValueError("epsilon values must be positive")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("epsilon list not strictly decreasing")
        return v


class Probes(_Strict):
    t: list[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75], min_length=1)
    x: list[float] | None = None


class RunConfig(_Strict):
    benchmark: str | None = None
    model: ModelSpec | None = None
    driver: DriverSpec | None = None
    obstacle: dict | None = None
    x0: float = 0.0
    grids: Grids = Field(default_factory=Grids)
    scheme: Scheme = Field(default_factory=Scheme)
    probes: Probes = Field(default_factory=Probes)
    # compare tolerance; null means 5*(h + dx**2) + 3*max probe stderr
    tolerance: float | None = Field(0.05, gt=0)
    # accepted band for the fitted epsilon slope
    slope_band: tuple[float, float] = (0.35, 0.75)
    seed: int = Field(..., ge=0, lt=2**63)
    output_dir: str = "runs"

    @field_validator("obstacle")
    @classmethod
    def _known_obstacle(cls, v):
        if v is not None:
            try:
                obstacle_from_dict(v)
            except (MFBSVIError, ValueError) as exc:
                raise ValueError(str(exc)) from None
        return v

    @model_validator(mode="before")
    @classmethod
    def _fill_from_benchmark(cls, data):
        if not isinstance(data, dict) or data.get("benchmark") is None:
            return data
        name = data["benchmark"]
        if name not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {name!r}; known: {sorted(BENCHMARKS)}")
        bm = BENCHMARKS[name]
        out = dict(data)
        out.setdefault("model", bm.model_spec)
        out.setdefault("driver", bm.driver_spec)
        out.setdefault("obstacle", bm.obstacle)
        out.setdefault("x0", bm.x0)
        grids = dict(out.get("grids") or {})
        grids.setdefault("T", bm.T)
        grids.setdefault("x_box", list(bm.box))
        out["grids"] = grids
        probes = dict(out.get("probes") or {})
        if bm.probes_x is not None:
            probes.setdefault("x", list(bm.probes_x))
        out["probes"] = probes
        return out

    @model_validator(mode="after")
    def _cross_checks(self):
        problems = []
        if self.model is None:
            problems.append("model: required when no benchmark is given")
        if self.driver is None:
            problems.append("driver: required when no benchmark is given")
        if self.obstacle is None:
            problems.append("obstacle: required when no benchmark is given")
        T = self.grids.T
        if any(not 0 <= t <= T for t in self.probes.t):
            problems.append(f"probes.t: every probe time must lie in [0, {T}]")
        if self.probes.x is not None:
            lo, hi = self.space_grid().probe_region
            if any(not lo - 1e-12 <= x <= hi + 1e-12 for x in self.probes.x):
                problems.append(f"probes.x: probe points must lie in [{lo}, {hi}] (20% margins of x_box)")
        if not self.slope_band[0] < self.slope_band[1]:
            problems.append("slope_band: need lo < hi")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    # -- builders --------------------------------------------------------
    def coefficient_model(self):
        return model_from_spec(self.model.model_dump())

    def driver_model(self):
        return driver_from_spec(self.driver.model_dump())

    def phi(self) -> ConvexObstacle:
        return obstacle_from_dict(self.obstacle)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.grids.T, self.grids.M)

    def space_grid(self) -> SpaceGrid:
        return SpaceGrid(self.grids.x_box[0], self.grids.x_box[1], self.grids.J)

    def probe_x(self) -> np.ndarray:
        if self.probes.x is not None:
            return np.asarray(self.probes.x, dtype=float)
        lo, hi = self.space_grid().probe_region
        return np.linspace(lo, hi, 11)[1:-1]

    def scheme_params(self, eps: float | None = None, form: str | None = None) -> SchemeParams:
        form = form or self.scheme.form
        return SchemeParams(
            eps=self.scheme.eps[-1] if eps is None else eps,
            scheme="proximal" if form == "prox" else "penalized",
            basis_degree=self.scheme.degree,
            ridge=self.scheme.ridge,
            basis=self.scheme.basis,
            n_bins=self.scheme.n_bins,
        )

    def config_hash(self) -> str:
        """Hash of the resolved configuration, excluding seed and output location."""
        body = self.model_dump(mode="json", exclude={"seed", "output_dir"})
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _format_errors(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"].removeprefix("Value error, ")
        out.append(f"{loc}: {msg}")
    return out


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> RunConfig:
    """Read and validate a JSON run config; every violation is reported at once."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if 0 < exc.lineno <= len(text.splitlines()) else ""
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: JSON parse error: {exc.msg}: {line.strip()!r}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(data)
