"""Transport of points along the special fields, and the exhaustions it produces.

A query x in the ball model is flowed by y' = X_t(y) for t in [0, 1]; the
exhaustion centered at s * direction is tau(x) = |y(1)|^2 and its Green
function is log tau.
"""

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.integrate import solve_ivp
from scipy.interpolate import RegularGridInterpolator

from app.core.errors import (
    ChartSingular,
    ExhaustionError,
    InvalidInput,
    NoConvergence,
    PoleCollision,
)
from app.core.monitoring import RunMonitor
from app.deformation.checkpoint import Checkpoint
from app.deformation.flow import DegeneracyReport, determinant
from app.deformation.lattice import Atlas, frame_factor, swap_chart
from app.geometry.polar import PolarPoint, as_point, select_chart, to_polar
from app.geometry.profile import ProfileRho, unstraighten
from app.models import GreenGridSpec, ToleranceSpec
from app.special_fields import (
    SpecialFieldParams,
    guiding_velocity,
    special_field_ambient,
    ytilde_from_phi,
)

logger = logging.getLogger(__name__)

ComplexArray = npt.NDArray[np.complex128]
FloatArray = npt.NDArray[np.float64]

POLE_RADIUS = 1e-10
KOBAYASHI_STEPS = (1e-2, 5e-3, 2.5e-3)


# --- the deformation along the run --------------------------------------------------


class PhiPath:
    """Checkpointed phi_t on an atlas, cubic in t and linear in space.

    Charts are mixed with the partition weights of the atlas. Inside the core
    |zeta| < r_min, phi is continued by the power series in zeta of degree
    n_theta // 3 fitted by least squares to the lattice rings of every w.
    """

    def __init__(
        self,
        atlas: Atlas | None,
        times: FloatArray,
        values: ComplexArray,
        eps_deg: float = 1e-3,
    ) -> None:
        self.atlas = atlas
        self.times = np.asarray(times, dtype=np.float64)
        self.values = np.asarray(values, dtype=np.complex128)
        if atlas is not None and self.values.shape[1:] != atlas.shape:
            raise InvalidInput(
                "phi path values do not match the atlas",
                {"values": list(self.values.shape), "atlas": list(atlas.shape)},
            )
        if self.values.size and np.min(determinant(self.values)) <= eps_deg:
            raise InvalidInput("phi path breaches the nondegeneracy margin at a checkpoint")

    @classmethod
    def trivial(cls) -> "PhiPath":
        return cls(None, np.zeros(0), np.zeros(0, dtype=np.complex128))

    @classmethod
    def from_report(cls, report: DegeneracyReport, eps_deg: float = 1e-3) -> "PhiPath":
        if report.state is None or report.terminating != "reached_one":
            raise InvalidInput("a transport path needs a flow that reached t = 1")
        history = report.state.history
        return cls(
            report.state.phi.atlas,
            np.array([t for t, _ in history]),
            np.stack([v for _, v in history]),
            eps_deg,
        )

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, eps_deg: float = 1e-3) -> "PhiPath":
        return cls(checkpoint.atlas, checkpoint.times, checkpoint.values, eps_deg)

    @property
    def is_trivial(self) -> bool:
        return self.atlas is None or not np.any(self.values)

    @property
    def degree(self) -> int:
        assert self.atlas is not None
        return self.atlas.lattice.n_theta // 3

    def core_series(self, chart_values: ComplexArray) -> ComplexArray:
        """Least-squares coefficients of sum_k c_k zeta^k per w, shape (n_w, n_w, degree + 1)."""
        assert self.atlas is not None
        lat = self.atlas.lattice
        design = lat.zeta.reshape(-1)[:, None] ** np.arange(self.degree + 1)
        samples = chart_values.reshape(lat.n_w * lat.n_w, -1).T
        coeffs, *_ = np.linalg.lstsq(design, samples, rcond=None)
        return np.asarray(coeffs.T.reshape(lat.n_w, lat.n_w, -1), dtype=np.complex128)

    @cached_property
    def _interpolators(
        self,
    ) -> list[list[tuple[RegularGridInterpolator, RegularGridInterpolator]]]:
        assert self.atlas is not None
        lat = self.atlas.lattice
        theta = np.append(lat.theta, 2 * np.pi)
        grid = (lat.x, lat.x, lat.r, theta)
        out = []
        for snapshot in self.values:
            charts = []
            for chart_values in snapshot:
                padded = np.concatenate([chart_values, chart_values[..., :1]], axis=-1)
                charts.append(
                    (
                        RegularGridInterpolator(grid, padded),
                        RegularGridInterpolator((lat.x, lat.x), self.core_series(chart_values)),
                    )
                )
            out.append(charts)
        return out

    def _time_weights(self, t: float) -> tuple[list[int], list[float]]:
        k = len(self.times)
        if k == 1:
            return [0], [1.0]
        nearest = np.argsort(np.abs(self.times - t), kind="stable")[: min(4, k)]
        idx = sorted(int(i) for i in nearest)
        weights = []
        for i in idx:
            wgt = 1.0
            for j in idx:
                if j != i:
                    wgt *= (t - self.times[j]) / (self.times[i] - self.times[j])
            weights.append(wgt)
        return idx, weights

    def _chart_value(self, index: int, t: float, q: PolarPoint) -> complex:
        assert self.atlas is not None
        lat = self.atlas.lattice
        x = float(np.clip(q.w[0].real, -lat.w_box, lat.w_box))
        y = float(np.clip(q.w[0].imag, -lat.w_box, lat.w_box))
        r = min(abs(q.zeta), 1.0)
        theta = float(np.angle(q.zeta)) % (2 * np.pi)
        idx, weights = self._time_weights(t)
        total = 0j
        for i, wgt in zip(idx, weights, strict=True):
            inner, core = self._interpolators[i][index]
            if r >= lat.r_min:
                val = complex(inner([[x, y, r, theta]])[0])
            else:
                coeffs = core([[x, y]])[0]
                val = complex(np.sum(coeffs * q.zeta ** np.arange(len(coeffs))))
            total += wgt * val
        return total

    def value(self, t: float, p: PolarPoint) -> complex:
        """phi_t at p in the adapted frame of p.chart."""
        if self.is_trivial:
            return 0j
        assert self.atlas is not None
        total = 0j
        weight_sum = 0.0
        for index, lat in enumerate(self.atlas.lattices):
            if lat.chart != p.chart and p.w[0] == 0:
                continue
            q = p if lat.chart == p.chart else swap_chart(p)
            weight = float(self.atlas.point_weight(q.w[0]))
            if weight == 0:
                continue
            local = self._chart_value(index, t, q)
            if q.chart != p.chart:
                local *= complex(frame_factor(q.w[0]))
            total += weight * local
            weight_sum += weight
        if weight_sum == 0:
            raise ChartSingular(
                "point lies outside the lattice atlas",
                {"chart": p.chart, "w": [str(c) for c in p.w]},
            )
        return total / weight_sum


# --- samples --------------------------------------------------------------------------


@dataclass
class ExhaustionSample:
    query: ComplexArray
    center_param: float
    tau: float
    green: float
    endpoint: ComplexArray
    ode_stats: dict[str, Any] = field(default_factory=dict)
    flag: str = "ok"

    @property
    def kobayashi_distance(self) -> float:
        return kobayashi_distance(self)

    def row(self) -> list[Any]:
        return [
            *self.query.real,
            *self.query.imag,
            self.tau,
            self.green,
            *self.endpoint.real,
            *self.endpoint.imag,
            self.kobayashi_distance,
            self.flag,
        ]


def sample_header(n: int) -> list[str]:
    return [
        *[f"x_re{i + 1}" for i in range(n)],
        *[f"x_im{i + 1}" for i in range(n)],
        "tau",
        "green",
        *[f"y_re{i + 1}" for i in range(n)],
        *[f"y_im{i + 1}" for i in range(n)],
        "kobayashi_distance",
        "flag",
    ]


def kobayashi_distance(sample: ExhaustionSample) -> float:
    """artanh(sqrt(tau)): Kobayashi distance to the pole when tau is the squared tanh of it."""
    if math.isnan(sample.tau):
        return math.nan
    if sample.tau >= 1:
        return math.inf
    return math.atanh(math.sqrt(max(sample.tau, 0.0)))


# --- transport --------------------------------------------------------------------------


class Transport:
    """Flow of the special fields X_t guided by the segment s * direction."""

    def __init__(
        self,
        rho: ProfileRho,
        path: PhiPath,
        direction: Sequence[complex] | ComplexArray,
        s: float,
        tolerances: ToleranceSpec | None = None,
        method: str = "DOP853",
        monitor: RunMonitor | None = None,
    ) -> None:
        self.rho = rho
        self.path = path
        self.direction = as_point(direction)
        if len(self.direction) != rho.n:
            raise InvalidInput("direction dimension does not match the profile")
        self.s = s
        self.tol = tolerances or ToleranceSpec()
        self.method = method
        self.monitor = monitor or RunMonitor()
        self.pole = s * self.direction

    def local_phi(self, t: float, p: PolarPoint) -> complex:
        """phi_t at p, in the adapted frame of p.chart."""
        return self.path.value(t, p)

    @cached_property
    def center_path(self) -> Callable[[float], ComplexArray]:
        """Dense trajectory x_t of the pole; it reaches the origin at t = 1."""
        if self.s == 0:
            pole = self.pole.copy()
            return lambda t: pole
        with self.monitor.timer("transport.center_path"):
            sol = solve_ivp(
                self.field,
                (0.0, 1.0),
                self.pole,
                method=self.method,
                rtol=self.tol.ode_tol,
                atol=self.tol.ode_tol,
                dense_output=True,
            )
        if sol.status < 0:
            raise NoConvergence(f"transport of the pole failed: {sol.message}")
        return lambda t: np.asarray(sol.sol(t), dtype=np.complex128)

    def field(self, t: float, y: ComplexArray) -> ComplexArray:
        u = guiding_velocity(self.direction, self.s, t)
        if self.s == 0:
            return u
        if float(np.linalg.norm(y)) < 1e-14:
            return u
        chart = select_chart(y, self.rho.charts)
        ytilde = None
        if not self.path.is_trivial:
            p = to_polar(y, chart)
            ytilde = ytilde_from_phi(self.local_phi(t, p), u, p, self.rho)
        params = SpecialFieldParams(v=u, sigma=0.0, ytilde=ytilde)
        return special_field_ambient(params, y, self.rho, chart)

    def flow_point(
        self, x: Sequence[complex] | ComplexArray
    ) -> tuple[ComplexArray, dict[str, Any]]:
        x = as_point(x)
        if self.s == 0:
            return x.copy(), {"nfev": 0, "status": 0}

        def near_pole(t: float, y: ComplexArray) -> float:
            return float(np.linalg.norm(y - self.center_path(t))) - POLE_RADIUS

        near_pole.terminal = False  # type: ignore[attr-defined]
        with self.monitor.timer("transport.flow_point"):
            sol = solve_ivp(
                self.field,
                (0.0, 1.0),
                x,
                method=self.method,
                rtol=self.tol.ode_tol,
                atol=self.tol.ode_tol,
                events=near_pole,
            )
        if sol.status < 0:
            raise NoConvergence(f"transport ODE failed: {sol.message}", {"x": [str(c) for c in x]})
        hits = [float(t) for t in sol.t_events[0] if t < 1.0 - 1e-6]
        if hits:
            raise PoleCollision(
                "trajectory reached the moving center before t = 1",
                {"x": [str(c) for c in x], "t": hits[0]},
            )
        endpoint = np.asarray(sol.y[:, -1], dtype=np.complex128)
        return endpoint, {"nfev": int(sol.nfev), "status": int(sol.status)}

    def exhaustion(self, x: Sequence[complex] | ComplexArray) -> ExhaustionSample:
        x = as_point(x)
        if float(np.linalg.norm(x - self.pole)) < 1e-12:
            return ExhaustionSample(
                query=x,
                center_param=self.s,
                tau=0.0,
                green=-math.inf,
                endpoint=np.zeros_like(x),
                flag="pole",
            )
        endpoint, stats = self.flow_point(x)
        tau = float(np.vdot(endpoint, endpoint).real)
        self.monitor.observe("tau", tau)
        return ExhaustionSample(
            query=x,
            center_param=self.s,
            tau=tau,
            green=math.log(tau) if tau > 0 else -math.inf,
            endpoint=endpoint,
            ode_stats=stats,
        )

    def safe_exhaustion(self, x: ComplexArray) -> ExhaustionSample:
        x = as_point(x)
        try:
            return self.exhaustion(x)
        except ExhaustionError as exc:
            logger.warning(f"sample {x} failed: {type(exc).__name__}: {exc.message}")
            nan = complex(math.nan, math.nan)
            return ExhaustionSample(
                query=x,
                center_param=self.s,
                tau=math.nan,
                green=math.nan,
                endpoint=np.full_like(x, nan),
                flag=type(exc).__name__,
            )


def sample_points(
    n: int, spec: GreenGridSpec, pole: ComplexArray, seed: int
) -> list[ComplexArray]:
    """Query points of a Green grid: explicit, or uniform in the ball of radius_max."""
    if spec.points is not None:
        points = []
        for row in spec.points:
            if len(row) != 2 * n:
                raise InvalidInput(f"grid points hold 2n = {2 * n} reals")
            points.append(np.array([complex(row[i], row[n + i]) for i in range(n)]))
        return points
    rng = np.random.default_rng(seed)
    points = []
    while len(points) < spec.n_points:
        g = rng.normal(size=n) + 1j * rng.normal(size=n)
        radius = spec.radius_max * rng.random() ** (1.0 / (2 * n))
        x = radius * g / np.linalg.norm(g)
        if np.linalg.norm(x - pole) > spec.pole_exclusion:
            points.append(x)
    return points


def green_grid(
    transport: Transport,
    spec: GreenGridSpec,
    seed: int = 0,
    threads: int = 1,
) -> list[ExhaustionSample]:
    """Exhaustion samples in a fixed order; failures are flagged, never raised."""
    points = sample_points(transport.rho.n, spec, transport.pole, seed)
    logger.info(f"evaluating {len(points)} samples on {threads} thread(s)")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(transport.safe_exhaustion, points))
    else:
        samples = [transport.safe_exhaustion(x) for x in points]
    if spec.pull_back:
        for sample in samples:
            if sample.flag in ("ok", "pole"):
                sample.query = unstraighten(transport.rho, sample.query)
    failed = sum(1 for x in samples if x.flag not in ("ok", "pole"))
    if failed:
        logger.warning(f"{failed} of {len(samples)} samples failed")
    return samples


def kobayashi_at_center(
    transport: Transport,
    u: Sequence[complex] | ComplexArray,
    steps: Sequence[float] = KOBAYASHI_STEPS,
) -> float:
    """Derivative of sqrt(tau) along pole + h u, Richardson-extrapolated in h."""
    u = as_point(u)
    if not np.any(u):
        raise InvalidInput("Kobayashi metric needs a nonzero direction")
    h1, h2, h3 = steps

    def quotient(h: float) -> float:
        sample = transport.exhaustion(transport.pole + h * u)
        return math.sqrt(sample.tau) / h

    q1, q2, q3 = quotient(h1), quotient(h2), quotient(h3)
    first = 2 * q2 - q1
    second = 2 * q3 - q2
    value = (4 * second - first) / 3
    if abs(value - second) > 1e-3 * abs(value):
        raise NoConvergence(
            "Kobayashi extrapolation did not settle",
            {"quotients": [q1, q2, q3], "extrapolated": value},
        )
    return value


def pole_slope(
    transport: Transport,
    u: Sequence[complex] | ComplexArray,
    steps: Sequence[float] | None = None,
) -> float:
    """Least-squares slope of log tau against log h along pole + h u."""
    u = as_point(u)
    hs = np.geomspace(1e-3, 1e-1, 7) if steps is None else np.asarray(steps)
    u = u / np.linalg.norm(u)
    logs = [math.log(transport.exhaustion(transport.pole + h * u).tau) for h in hs]
    slope, _ = np.polyfit(np.log(hs), logs, 1)
    return float(slope)
