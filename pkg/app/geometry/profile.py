"""The domain profile rho and the metric data of the adapted polar frames.

A circular domain D is encoded by log rho^2 through its Minkowski functional
mu(z) = |zeta| rho(w). On each chart log rho^2 is a real polynomial in
(w, conj w) divided by (1 + |w|^2)^k, with k shared by all charts.
Everything here is evaluated from exact derivatives.
"""

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from pydantic import ValidationError

from app.core.errors import CoreSingular, InvalidInput, NotPseudoconvex
from app.geometry.polar import PolarPoint, as_point, select_chart, to_polar
from app.geometry.symbolic import frame_algebra
from app.models import CoefficientSpec, ProfileSpec
from app.utils import read_json, validation_errors

logger = logging.getLogger(__name__)

ComplexArray = npt.NDArray[np.complex128]
FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class Monomial:
    p: tuple[int, ...]
    q: tuple[int, ...]
    c: complex


@dataclass(frozen=True)
class ProfileRho:
    """log rho^2 as truncated polynomials over (1 + |w|^2)^denominator_power.

    One polynomial per chart that carries data. A bounded indicatrix needs
    data on every chart.
    """

    n: int
    preset: str | None
    epsilon: float
    terms: tuple[tuple[int, tuple[Monomial, ...]], ...]
    # the ball is the same (empty) polynomial on every chart
    every_chart: bool = False
    denominator_power: int = 0

    @property
    def charts(self) -> tuple[int, ...]:
        if self.every_chart:
            return tuple(range(1, self.n + 1))
        return tuple(chart for chart, _ in self.terms)

    def chart_terms(self, chart: int) -> tuple[Monomial, ...]:
        if self.every_chart:
            return ()
        for key, monomials in self.terms:
            if key == chart:
                return monomials
        raise InvalidInput(f"profile carries no data on chart {chart}", {"charts": self.charts})

    @property
    def is_ball(self) -> bool:
        return all(not monomials for _, monomials in self.terms)

    def key(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "every_chart": self.every_chart,
                "denominator_power": self.denominator_power,
                "terms": [
                    [chart, [[list(m.p), list(m.q), m.c.real, m.c.imag] for m in monomials]]
                    for chart, monomials in self.terms
                ],
            },
            sort_keys=True,
        )


@dataclass
class RhoDerivatives:
    """log rho^2 and its derivatives at an array of points w (shape (..., m))."""

    value: FloatArray
    dw: ComplexArray
    dwb: ComplexArray
    hess_wwb: ComplexArray
    hess_ww: ComplexArray


@dataclass
class FrameData:
    """Pointwise metric package of the adapted frame at a chart point w.

    ``frame`` rows are the e_alpha in the polar coordinate basis
    ``[zeta d_zeta, d_w^1..d_w^m, conj(zeta) d_conj(zeta), d_conj(w)^1..]``.
    """

    g: ComplexArray
    g_inv: ComplexArray
    h: ComplexArray
    dlogrho2: ComplexArray
    dpotential: ComplexArray
    frame: ComplexArray
    logrho2: float = 0.0
    min_eigenvalue: float = field(default=1.0)


@dataclass
class ProfileReport:
    min_eigenvalue: float
    worst_point: complex | list[complex]
    worst_chart: int
    consistency_error: float
    points_checked: int
    # largest |u| over the sampled indicatrix boundary mu(u) = 1
    indicatrix_radius: float = 1.0


# --- construction -----------------------------------------------------------


def preset(name: str, n: int = 2, epsilon: float = 0.0) -> ProfileRho:
    if name == "ball":
        return ProfileRho(n=n, preset="ball", epsilon=0.0, terms=(), every_chart=True)
    if name == "perturbed":
        if n != 2:
            raise InvalidInput("the perturbed preset is defined for n = 2")
        if epsilon == 0.0:
            return ProfileRho(n=2, preset="perturbed", epsilon=0.0, terms=(), every_chart=True)
        # eps Re(w) / (1 + |w|^2) = eps Re(z1 conj(z2)) / |z|^2 reads the same on both charts
        half = complex(0.5 * epsilon)
        monomials = (Monomial((1,), (0,), half), Monomial((0,), (1,), half))
        return ProfileRho(
            n=2,
            preset="perturbed",
            epsilon=epsilon,
            terms=((1, monomials), (2, monomials)),
            denominator_power=1,
        )
    raise InvalidInput(f"unknown preset {name!r}")


def from_spec(spec: ProfileSpec) -> ProfileRho:
    if spec.preset is not None and not spec.coefficients:
        return preset(spec.preset, spec.n, spec.epsilon)
    by_chart: dict[int, list[Monomial]] = {}
    power = spec.denominator_power
    base = preset(spec.preset, spec.n, spec.epsilon) if spec.preset else None
    if base is not None and not base.every_chart:
        if base.denominator_power != power:
            raise InvalidInput(
                "coefficients must share the denominator power of the preset",
                {"preset": base.denominator_power, "given": power},
            )
        for chart, monomials in base.terms:
            by_chart.setdefault(chart, []).extend(monomials)
    for c in spec.coefficients:
        chart = c.chart if c.chart is not None else spec.n
        by_chart.setdefault(chart, []).append(_monomial(c))
    terms = tuple((chart, tuple(by_chart[chart])) for chart in sorted(by_chart))
    return ProfileRho(
        n=spec.n,
        preset=spec.preset,
        epsilon=spec.epsilon,
        terms=terms,
        denominator_power=power,
    )


def _monomial(c: CoefficientSpec) -> Monomial:
    return Monomial(tuple(c.w_powers), tuple(c.wbar_powers), c.value)


def load_profile(
    source: Path | str | ProfileSpec | Mapping[str, Any],
    validate: bool = True,
    w_box: float = 4.0,
    n_grid: int = 17,
) -> ProfileRho:
    """Read a profile from a JSON file, a mapping or a ready ProfileSpec."""
    if isinstance(source, ProfileSpec):
        spec = source
    else:
        if isinstance(source, Path | str):
            data = read_json(Path(source), "profile")
        else:
            data = dict(source)
        try:
            spec = ProfileSpec.model_validate(data)
        except ValidationError as exc:
            raise InvalidInput("invalid profile", {"errors": validation_errors(exc)}) from exc
    rho = from_spec(spec)
    if validate:
        report = validate_profile(rho, w_box=w_box, n_grid=n_grid)
        logger.info(
            f"profile loaded: n={rho.n} charts={rho.charts} "
            f"min eig g={report.min_eigenvalue:.4g} consistency={report.consistency_error:.2e} "
            f"indicatrix radius={report.indicatrix_radius:.4g}"
        )
    return rho


# --- polynomial evaluation ----------------------------------------------------


def _falling(k: int, d: int) -> int:
    out = 1
    for j in range(d):
        out *= k - j
    return out


def _poly(
    monomials: Sequence[Monomial],
    w: ComplexArray,
    dp: Sequence[int],
    dq: Sequence[int],
) -> ComplexArray:
    """Derivative d^dp/dw d^dq/dwbar of the polynomial at points w[..., m]."""
    wb = w.conj()
    out = np.zeros(w.shape[:-1], dtype=np.complex128)
    for mono in monomials:
        coeff = mono.c
        for power, d in zip(mono.p + mono.q, tuple(dp) + tuple(dq), strict=True):
            coeff *= _falling(power, d)
        if coeff == 0:
            continue
        term = np.full(w.shape[:-1], coeff, dtype=np.complex128)
        for a in range(w.shape[-1]):
            term = term * w[..., a] ** (mono.p[a] - dp[a]) * wb[..., a] ** (mono.q[a] - dq[a])
        out = out + term
    return out


def _unit(m: int, *idx: int) -> list[int]:
    d = [0] * m
    for i in idx:
        d[i] += 1
    return d


def rho_eval(
    rho: ProfileRho,
    w: Sequence[complex] | ComplexArray,
    order: int = 2,
    chart: int | None = None,
) -> RhoDerivatives:
    """log rho^2 at w with exact derivatives up to ``order`` (0, 1 or 2).

    ``w`` may be a single point (shape (m,)) or an array of points (..., m).
    Derivatives not requested are returned as zeros.
    """
    chart = rho.n if chart is None else chart
    monomials = rho.chart_terms(chart)
    w = np.asarray(w, dtype=np.complex128)
    m = rho.n - 1
    if w.shape[-1:] != (m,):
        raise InvalidInput(f"w must have trailing dimension n-1 = {m}")
    zero = [0] * m
    lead = w.shape[:-1]
    value = _poly(monomials, w, zero, zero).real
    dw = np.zeros((*lead, m), dtype=np.complex128)
    dwb = np.zeros_like(dw)
    hess_wwb = np.zeros((*lead, m, m), dtype=np.complex128)
    hess_ww = np.zeros_like(hess_wwb)
    if order >= 1 and monomials:
        for a in range(m):
            dw[..., a] = _poly(monomials, w, _unit(m, a), zero)
            dwb[..., a] = _poly(monomials, w, zero, _unit(m, a))
    if order >= 2 and monomials:
        for a in range(m):
            for b in range(m):
                hess_wwb[..., a, b] = _poly(monomials, w, _unit(m, a), _unit(m, b))
                hess_ww[..., a, b] = _poly(monomials, w, _unit(m, a, b), zero)
    numerator = RhoDerivatives(value=value, dw=dw, dwb=dwb, hess_wwb=hess_wwb, hess_ww=hess_ww)
    if rho.denominator_power and monomials:
        return _over_power(numerator, w, rho.denominator_power, order)
    return numerator


def _over_power(num: RhoDerivatives, w: ComplexArray, k: int, order: int) -> RhoDerivatives:
    """Derivatives of num / (1 + |w|^2)^k by the product rule."""
    wb = w.conj()
    s = 1.0 + np.sum(np.abs(w) ** 2, axis=-1)
    t = s**-k
    value = num.value * t
    dw = np.zeros_like(num.dw)
    dwb = np.zeros_like(num.dwb)
    hess_wwb = np.zeros_like(num.hess_wwb)
    hess_ww = np.zeros_like(num.hess_ww)
    n = num.value[..., None]
    t_w = -k * (s**(-k - 1))[..., None] * wb
    t_wb = t_w.conj()
    if order >= 1:
        dw = num.dw * t[..., None] + n * t_w
        dwb = num.dwb * t[..., None] + n * t_wb
    if order >= 2:
        eye = np.eye(w.shape[-1])
        s2 = s[..., None, None]
        t_wwb = k * (k + 1) * s2 ** (-k - 2) * wb[..., :, None] * w[..., None, :]
        t_wwb = t_wwb - k * s2 ** (-k - 1) * eye
        t_ww = k * (k + 1) * s2 ** (-k - 2) * wb[..., :, None] * wb[..., None, :]
        hess_wwb = (
            num.hess_wwb * t[..., None, None]
            + num.dw[..., :, None] * t_wb[..., None, :]
            + t_w[..., :, None] * num.dwb[..., None, :]
            + n[..., None] * t_wwb
        )
        hess_ww = (
            num.hess_ww * t[..., None, None]
            + num.dw[..., :, None] * t_w[..., None, :]
            + t_w[..., :, None] * num.dw[..., None, :]
            + n[..., None] * t_ww
        )
    return RhoDerivatives(value=value, dw=dw, dwb=dwb, hess_wwb=hess_wwb, hess_ww=hess_ww)


# --- metric data ------------------------------------------------------------------


def fubini_study_terms(
    w: ComplexArray,
) -> tuple[ComplexArray, ComplexArray, ComplexArray]:
    """First and second w-derivatives of K = log(1 + |w|^2)."""
    w = np.asarray(w, dtype=np.complex128)
    s = 1.0 + np.sum(np.abs(w) ** 2, axis=-1)
    wb = w.conj()
    dk = wb / s[..., None]
    m = w.shape[-1]
    eye = np.eye(m)
    k_wwb = eye / s[..., None, None] - wb[..., :, None] * w[..., None, :] / (s**2)[..., None, None]
    k_ww = -wb[..., :, None] * wb[..., None, :] / (s**2)[..., None, None]
    return dk, k_wwb, k_ww


def metric_coeffs(
    rho: ProfileRho,
    w: Sequence[complex] | ComplexArray,
    chart: int | None = None,
) -> FrameData:
    """g, its inverse, h and the potential derivatives at a single chart point."""
    w = np.asarray(w, dtype=np.complex128)
    d = rho_eval(rho, w, order=2, chart=chart)
    dk, k_wwb, k_ww = fubini_study_terms(w)
    g = d.hess_wwb + k_wwb
    g = 0.5 * (g + g.conj().T)
    h = d.hess_ww + k_ww
    eigenvalues = np.linalg.eigvalsh(g)
    min_eig = float(eigenvalues.min())
    if min_eig <= 0:
        raise NotPseudoconvex(
            "metric g is not positive definite",
            {"w": [str(x) for x in w], "chart": chart or rho.n, "min_eigenvalue": min_eig},
        )
    m = len(w)
    frame = np.zeros((m, 2 * m + 2), dtype=np.complex128)
    for a in range(m):
        frame[a, 0] = -(d.dw[a] + 0.5 * dk[a])
        frame[a, 1 + a] = 1.0
        frame[a, m + 1] = 0.5 * dk[a]
    return FrameData(
        g=g,
        g_inv=np.linalg.inv(g),
        h=h,
        dlogrho2=d.dw,
        dpotential=d.dw + dk,
        frame=frame,
        logrho2=float(d.value),
        min_eigenvalue=min_eig,
    )


def frame_vectors(rho: ProfileRho, p: PolarPoint) -> ComplexArray:
    """e_alpha = d_w^alpha - d_alpha log rho^2 Z + 1/2 d_alpha log(1+|w|^2) (conj Z - Z)."""
    if p.zeta == 0:
        raise CoreSingular("adapted frame is singular at zeta = 0")
    return metric_coeffs(rho, p.w, p.chart).frame


def levi_form(rho: ProfileRho, p: PolarPoint) -> ComplexArray:
    if p.zeta == 0:
        raise CoreSingular("Levi form evaluated on the exceptional divisor")
    data = metric_coeffs(rho, p.w, p.chart)
    tau = abs(p.zeta) ** 2 * math.exp(data.logrho2)
    return 2j * tau * data.g


def potential_hessian_fd(
    rho: ProfileRho,
    w: Sequence[complex] | ComplexArray,
    step: float = 1e-4,
    chart: int | None = None,
) -> ComplexArray:
    """Complex Hessian of log rho^2 + log(1+|w|^2) by central differences."""
    w = np.asarray(w, dtype=np.complex128)
    m = len(w)

    def potential(x: ComplexArray) -> float:
        return float(rho_eval(rho, x, order=0, chart=chart).value) + math.log1p(
            float(np.sum(np.abs(x) ** 2))
        )

    def second(u: ComplexArray, v: ComplexArray) -> float:
        return (
            potential(w + step * (u + v))
            - potential(w + step * (u - v))
            - potential(w - step * (u - v))
            + potential(w - step * (u + v))
        ) / (4 * step * step)

    eye = np.eye(m, dtype=np.complex128)
    out = np.zeros((m, m), dtype=np.complex128)
    for a in range(m):
        for b in range(m):
            xx = second(eye[a], eye[b])
            yy = second(1j * eye[a], 1j * eye[b])
            xy = second(eye[a], 1j * eye[b])
            yx = second(1j * eye[a], eye[b])
            out[a, b] = 0.25 * (xx + yy + 1j * (xy - yx))
    return out


# --- Minkowski functional and straightening ------------------------------------


def minkowski(rho: ProfileRho, z: Sequence[complex] | ComplexArray) -> float:
    z = as_point(z)
    if not np.any(z):
        return 0.0
    p = to_polar(z, select_chart(z, rho.charts))
    logrho2 = float(rho_eval(rho, p.w, order=0, chart=p.chart).value)
    return abs(p.zeta) * math.exp(0.5 * logrho2)


def indicatrix_metric(rho: ProfileRho, u: Sequence[complex] | ComplexArray) -> float:
    """Kobayashi metric at the center of the circular domain: its Minkowski functional."""
    return minkowski(rho, u)


def indicatrix_contains(rho: ProfileRho, u: Sequence[complex] | ComplexArray) -> bool:
    return indicatrix_metric(rho, u) <= 1.0


def straighten(rho: ProfileRho, z: Sequence[complex] | ComplexArray) -> ComplexArray:
    """Map the circular domain onto the unit ball along each complex line through 0."""
    z = as_point(z)
    norm = float(np.linalg.norm(z))
    if norm == 0:
        return z.copy()
    return z * (minkowski(rho, z) / norm)


def unstraighten(rho: ProfileRho, y: Sequence[complex] | ComplexArray) -> ComplexArray:
    y = as_point(y)
    norm = float(np.linalg.norm(y))
    if norm == 0:
        return y.copy()
    return y * (norm / minkowski(rho, y))


# --- validation ------------------------------------------------------------------


def chart_grid(m: int, w_box: float, n_grid: int) -> ComplexArray:
    """Tensor grid of chart points with |Re w|, |Im w| <= w_box in every slot."""
    axis = np.linspace(-w_box, w_box, n_grid)
    x, y = np.meshgrid(axis, axis, indexing="ij")
    slot = (x + 1j * y).ravel()
    if m == 1:
        return slot[:, None]
    mesh = np.meshgrid(*([slot] * m), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def validate_profile(rho: ProfileRho, w_box: float = 4.0, n_grid: int = 17) -> ProfileReport:
    """Reality, strong pseudoconvexity on the chart grids, coverage, chart consistency."""
    for chart, monomials in rho.terms:
        table = {(m.p, m.q): m.c for m in monomials}
        for (p, q), c in table.items():
            partner = table.get((q, p), 0)
            if abs(c - np.conj(partner)) > 1e-12:
                raise InvalidInput(
                    "coefficients do not define a real log rho^2",
                    {"chart": chart, "w_powers": list(p), "wbar_powers": list(q)},
                )

    m = rho.n - 1
    grid_n = n_grid if m == 1 else min(n_grid, 5)
    points = chart_grid(m, w_box, grid_n)
    worst = (math.inf, points[0], rho.n)
    for chart in rho.charts:
        d = rho_eval(rho, points, order=2, chart=chart)
        _, k_wwb, _ = fubini_study_terms(points)
        g = d.hess_wwb + k_wwb
        g = 0.5 * (g + np.conj(np.swapaxes(g, -1, -2)))
        eig = np.linalg.eigvalsh(g)[..., 0]
        idx = int(np.argmin(eig))
        if eig[idx] < worst[0]:
            worst = (float(eig[idx]), points[idx], chart)
    if worst[0] <= 0:
        raise NotPseudoconvex(
            "profile is not strongly pseudoconvex",
            {
                "worst_w": [str(x) for x in worst[1]],
                "chart": worst[2],
                "min_eigenvalue": worst[0],
            },
        )

    # mu is only defined on the lines through 0 that some chart with data sees
    missing = [c for c in range(1, rho.n + 1) if c not in rho.charts]
    if missing:
        raise InvalidInput(
            "indicatrix is unbounded: the profile carries no data on some charts",
            {"charts": list(rho.charts), "missing": missing},
        )

    rng = np.random.default_rng(0)
    sphere = rng.normal(size=(64, rho.n)) + 1j * rng.normal(size=(64, rho.n))
    consistency = 0.0
    if len(rho.charts) > 1 and not rho.every_chart:
        for z in sphere:
            values = [
                float(rho_eval(rho, to_polar(z, c).w, order=0, chart=c).value) for c in rho.charts
            ]
            consistency = max(consistency, max(values) - min(values))
        if consistency > 1e-8:
            raise InvalidInput(
                "chart polynomials disagree on the overlap",
                {"max_difference": consistency},
            )

    lowest = min(minkowski(rho, z / np.linalg.norm(z)) for z in sphere)
    radius = 1.0 / lowest if lowest > 0 else math.inf
    if not math.isfinite(radius):
        raise InvalidInput("indicatrix is unbounded", {"min_mu_on_sphere": lowest})

    worst_point: complex | list[complex] = (
        complex(worst[1][0]) if m == 1 else [complex(x) for x in worst[1]]
    )
    return ProfileReport(
        min_eigenvalue=worst[0],
        worst_point=worst_point,
        worst_chart=worst[2],
        consistency_error=consistency,
        points_checked=len(points) * len(rho.charts),
        indicatrix_radius=radius,
    )


def bracket_residual(rho: ProfileRho, p: PolarPoint, g_shift: float = 0.0) -> float:
    """Max deviation of the frame bracket relations at p, from exact derivatives.

    ``g_shift`` perturbs the expected [e, conj e] coefficient and is only used
    as a sensitivity check.
    """
    if p.zeta == 0:
        raise CoreSingular("bracket relations evaluated on the exceptional divisor")
    return frame_algebra(rho, p.chart).bracket_residual(p, g_shift)
