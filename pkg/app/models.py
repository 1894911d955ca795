"""Validated input models: profile files and run configurations."""

import math
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Self

from app.core.config import settings


class CoefficientSpec(BaseModel):
    """One monomial c * w^p * conj(w)^q of log rho^2 on a chart."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    w_powers: tuple[int, ...]
    wbar_powers: tuple[int, ...]
    re: float
    im: float = 0.0
    chart: int | None = None

    @model_validator(mode="before")
    @classmethod
    def _from_row(cls, data: Any) -> Any:
        # rows like [[1], [0], 0.1, 0.0] or [1, 0, 0.1, 0.0] for n = 2
        if isinstance(data, list | tuple):
            if len(data) not in (3, 4, 5):
                raise ValueError(
                    "coefficient rows are [w_powers, wbar_powers, re, im(, chart)]"
                )
            keys = ["w_powers", "wbar_powers", "re", "im", "chart"]
            data = dict(zip(keys, data, strict=False))
        if isinstance(data, dict):
            data = dict(data)
            for key in ("w_powers", "wbar_powers"):
                if isinstance(data.get(key), int):
                    data[key] = (data[key],)
        return data

    @field_validator("w_powers", "wbar_powers")
    @classmethod
    def _nonnegative(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(p < 0 for p in v):
            raise ValueError("powers must be nonnegative")
        return v

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)


class ProfileSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = 2
    preset: Literal["ball", "perturbed"] | None = None
    epsilon: float = 0.0
    coefficients: list[CoefficientSpec] = Field(default_factory=list)
    # every chart polynomial is divided by (1 + |w|^2)^denominator_power
    denominator_power: int = Field(default=0, ge=0, le=4)

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.preset is None and not self.coefficients:
            raise ValueError("give either a preset or a coefficients list")
        if self.preset == "perturbed":
            if self.n != 2:
                raise ValueError("the perturbed preset is defined for n = 2")
            if abs(self.epsilon) > 0.2:
                raise ValueError("perturbed preset requires |epsilon| <= 0.2")
        for c in self.coefficients:
            if len(c.w_powers) != self.n - 1 or len(c.wbar_powers) != self.n - 1:
                raise ValueError(f"coefficient powers must have length n-1 = {self.n - 1}")
            if c.chart is not None and not 1 <= c.chart <= self.n:
                raise ValueError(f"chart {c.chart} outside 1..{self.n}")
        return self


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_w: int = Field(default_factory=lambda: settings.N_W)
    n_r: int = Field(default_factory=lambda: settings.N_R)
    n_theta: int = Field(default_factory=lambda: settings.N_THETA)
    w_box: float = Field(default_factory=lambda: settings.W_BOX)
    r_min: float = Field(default_factory=lambda: settings.R_MIN)

    @model_validator(mode="after")
    def _minima(self) -> Self:
        if self.n_w < 17 or self.n_r < 9 or self.n_theta < 16:
            raise ValueError("grid sizes below minima (n_w >= 17, n_r >= 9, n_theta >= 16)")
        if self.n_theta % 2:
            raise ValueError("n_theta must be even")
        if self.w_box <= 0:
            raise ValueError("w_box must be positive")
        if not 0 < self.r_min < 1:
            raise ValueError("r_min must lie in (0, 1)")
        return self


class ToleranceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    eps_deg: float = Field(default_factory=lambda: settings.EPS_DEG, gt=0)
    ode_tol: float = Field(default_factory=lambda: settings.ODE_TOL, gt=0)
    t_bisect: float = Field(default_factory=lambda: settings.T_BISECT_TOL, gt=0)
    s_bisect: float = Field(default_factory=lambda: settings.S_BISECT_TOL, gt=0)
    c_cfl: float = Field(default_factory=lambda: settings.C_CFL, gt=0)
    growth_factor: float = Field(default=2.0, gt=1)
    growth_floor: float = Field(default=1e-8, gt=0)


class InitialDataSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["zero", "bump"] = "zero"
    amplitude: float = 0.0
    width: float = Field(default=1.0, gt=0)


class FlowSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: GridSpec = Field(default_factory=GridSpec)
    tolerances: ToleranceSpec = Field(default_factory=ToleranceSpec)
    initial: InitialDataSpec = Field(default_factory=InitialDataSpec)
    checkpoint_dt: float = Field(default_factory=lambda: settings.CHECKPOINT_DT, gt=0)
    dt: float | None = Field(default=None, gt=0)
    method: Literal["DOP853", "RK45"] = "DOP853"


class GreenGridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_points: int = Field(default=1000, ge=1)
    radius_max: float = Field(default=0.95, gt=0, le=1)
    pole_exclusion: float = Field(default=1e-3, gt=0)
    points: list[list[float]] | None = None
    pull_back: bool = False


class FrontierSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directions: list[list[float]] | None = None
    fan: int | None = Field(default=None, ge=1)
    fan_radius: float = Field(default=0.5, gt=0, lt=1)


class VerifySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    identity_points: int = Field(default=200, ge=1)
    ma_points: int = Field(default=100, ge=1)
    hessian_step: float = Field(default=1e-2, gt=0)
    lie_dt: float = Field(default=1e-2, gt=0)
    lie_points: int = Field(default=20, ge=1)
    lie_time: float = Field(default=0.5, gt=0, lt=1)
    ma_threshold: float = Field(default=1e-2, gt=0)
    lie_threshold: float = Field(default=1e-3, gt=0)
    checkpoint: Path | None = None
    # outputs of earlier subcommands that must share this run's config hash
    artifacts: list[Path] = Field(default_factory=list)


class RunConfig(BaseModel):
    """A whole run: everything needed to reproduce a subcommand's output."""

    model_config = ConfigDict(extra="forbid")

    profile: Path | ProfileSpec
    direction: list[float]
    s: float = Field(default=1.0, ge=0, le=1)
    mode: Literal["segment", "frontier"] = "segment"
    flow: FlowSpec = Field(default_factory=FlowSpec)
    green: GreenGridSpec = Field(default_factory=GreenGridSpec)
    frontier: FrontierSpec = Field(default_factory=FrontierSpec)
    verify: VerifySpec = Field(default_factory=VerifySpec)
    seed: int = 0
    output_dir: Path | None = None
    threads: int | None = Field(default=None, ge=1)

    @field_validator("direction")
    @classmethod
    def _direction(cls, v: list[float]) -> list[float]:
        if len(v) < 4 or len(v) % 2:
            raise ValueError("direction holds 2n reals: real parts then imaginary parts")
        norm = math.sqrt(sum(x * x for x in v))
        if norm >= 1:
            raise ValueError(f"direction norm {norm:.6g} must be < 1")
        return v

    @property
    def n(self) -> int:
        return len(self.direction) // 2

    def direction_vector(self) -> list[complex]:
        n = self.n
        return [complex(self.direction[i], self.direction[n + i]) for i in range(n)]
