"""Independent checks: complex Hessians, the ball oracle and the identity suite.

The Hessian-based checks only sample scalar functions, so they do not share
any machinery with the frame computations they verify.
"""

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
import numpy.typing as npt

from app.core.errors import ExhaustionError
from app.deformation.flow import transform_to_chart
from app.deformation.lattice import frame_factor
from app.geometry.polar import PolarPoint, as_point, coordinate_fields, select_chart, to_polar
from app.geometry.profile import (
    ProfileRho,
    bracket_residual,
    metric_coeffs,
    potential_hessian_fd,
)
from app.geometry.symbolic import frame_algebra
from app.special_fields import (
    FrameVector,
    ambient_components,
    ball_automorphism,
    reconstruct_structure,
)
from app.transport import ExhaustionSample, Transport

logger = logging.getLogger(__name__)

ComplexArray = npt.NDArray[np.complex128]
Sampler = Callable[[ComplexArray], float]
Vector = Sequence[complex] | ComplexArray


@dataclass
class HessianEstimate:
    center: ComplexArray
    step: float
    table: npt.NDArray[np.float64]
    hessian: ComplexArray


@dataclass
class CheckResult:
    name: str
    residual: float
    threshold: float
    passed: bool
    details: dict[str, Any] | None = None

    @classmethod
    def below(cls, name: str, residual: float, threshold: float, **details: Any) -> "CheckResult":
        passed = math.isfinite(residual) and residual <= threshold
        return cls(name, residual, threshold, passed, details or None)

    @classmethod
    def above(cls, name: str, value: float, threshold: float, **details: Any) -> "CheckResult":
        passed = math.isfinite(value) and value > threshold
        return cls(name, value, threshold, passed, details or None)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# --- Hessians ----------------------------------------------------------------------


def _second_differences(u: Sampler, x: ComplexArray, h: float) -> npt.NDArray[np.float64]:
    n = len(x)
    basis = [np.eye(n, dtype=np.complex128)[k] for k in range(n)]
    basis += [1j * b for b in basis]
    table = np.zeros((2 * n, 2 * n))
    for a in range(2 * n):
        for b in range(a, 2 * n):
            ea, eb = h * basis[a], h * basis[b]
            val = (u(x + ea + eb) - u(x + ea - eb) - u(x - ea + eb) + u(x - ea - eb)) / (
                4 * h * h
            )
            table[a, b] = table[b, a] = val
    return table


def complex_hessian(u: Sampler, x: Sequence[complex] | ComplexArray, h: float = 1e-2,
                    richardson: bool = False) -> HessianEstimate:
    """d^2 u / dz^i d conj(z)^j from real second differences, Hermitian-symmetrized."""
    x = as_point(x)
    n = len(x)
    table = _second_differences(u, x, h)
    if richardson:
        table = (4 * _second_differences(u, x, h / 2) - table) / 3
    xx = table[:n, :n]
    yy = table[n:, n:]
    xy = table[:n, n:]
    yx = table[n:, :n]
    hess = 0.25 * (xx + yy + 1j * (xy - yx))
    hess = 0.5 * (hess + hess.conj().T)
    return HessianEstimate(center=x, step=h, table=table, hessian=hess)


def ma_residual(
    u: Sampler, x: Sequence[complex] | ComplexArray, h: float = 1e-2, richardson: bool = False
) -> float:
    """|det| of the complex Hessian of u; zero for solutions of the homogeneous equation."""
    return float(abs(np.linalg.det(complex_hessian(u, x, h, richardson).hessian)))


def psh_margin(tau: Sampler, x: Sequence[complex] | ComplexArray, h: float = 1e-2) -> float:
    return float(np.linalg.eigvalsh(complex_hessian(tau, x, h).hessian)[0])


def green_sampler(transport: Transport) -> Sampler:
    return lambda x: transport.exhaustion(x).green


def tau_sampler(transport: Transport) -> Sampler:
    return lambda x: transport.exhaustion(x).tau


# --- ball oracle ---------------------------------------------------------------------


def ball_oracle_green(a: Vector, z: Vector) -> float:
    a = as_point(a)
    z = as_point(z)
    if np.allclose(a, z, rtol=0, atol=1e-15):
        return -math.inf
    image = ball_automorphism(a, z)
    return math.log(float(np.vdot(image, image).real))


def ball_oracle_kobayashi(a: Vector, u: Vector) -> float:
    a = as_point(a)
    u = as_point(u)
    aa = float(np.vdot(a, a).real)
    uu = float(np.vdot(u, u).real)
    ua = abs(np.vdot(a, u)) ** 2
    return math.sqrt((1 - aa) * uu + ua) / (1 - aa)


# --- structure checks ------------------------------------------------------------------


def reality_residual(phi: ComplexArray | complex) -> float:
    """max |J^2 + I| of the structures reconstructed from phi."""
    J = reconstruct_structure(phi)
    eye = np.eye(J.shape[-1])
    return float(np.max(np.abs(J @ J + eye)))


def boundary_drift(samples: Iterable[ExhaustionSample], tol: float = 1e-9) -> float:
    drift = 0.0
    for sample in samples:
        if sample.flag != "ok" or abs(np.linalg.norm(sample.query) - 1.0) > tol:
            continue
        drift = max(drift, abs(float(np.linalg.norm(sample.endpoint)) - 1.0))
    return drift


def _unit_field(m: int, a: int, barred: bool = False) -> FrameVector:
    unit = np.eye(m, dtype=np.complex128)[a]
    zero = np.zeros(m, dtype=np.complex128)
    return FrameVector(0j, zero, 0j, unit) if barred else FrameVector(0j, unit, 0j, zero)


def _frame_columns(rho: ProfileRho, p: PolarPoint) -> ComplexArray:
    """Ambient (d_z, d_conj z) components of Z, e_alpha, conj Z, conj e_alpha as columns."""
    n = p.n
    m = n - 1
    coords = coordinate_fields(p)
    cols = [coords[:, 0]]
    cols += [ambient_components(_unit_field(m, a), p, rho) for a in range(m)]
    cols.append(coords[:, n])
    cols += [ambient_components(_unit_field(m, a, barred=True), p, rho) for a in range(m)]
    return np.stack(cols, axis=1)


def _frame_structure(phi: ComplexArray | complex, m: int) -> ComplexArray:
    n = m + 1
    J = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    J[0, 0] = 1j
    J[n, n] = -1j
    JH = reconstruct_structure(phi).reshape(2 * m, 2 * m)
    idx = [*range(1, n), *range(n + 1, 2 * n)]
    J[np.ix_(idx, idx)] = JH
    return J


def ambient_structure(transport: Transport, t: float, y: ComplexArray) -> ComplexArray:
    """J_t at y as a matrix on (d_z, d_conj z) components."""
    n = len(y)
    standard = np.diag(np.concatenate([np.full(n, 1j), np.full(n, -1j)]))
    if transport.path.is_trivial or not np.any(y):
        return standard
    rho = transport.rho
    p = to_polar(y, select_chart(y, rho.charts))
    phi = transport.local_phi(t, p)
    B = _frame_columns(rho, p)
    return np.asarray(B @ _frame_structure(phi, n - 1) @ np.linalg.inv(B), dtype=np.complex128)


def pairing_residual(rho: ProfileRho, p: PolarPoint, phi: ComplexArray | complex) -> float:
    """max |d^c_J tau - d^c_st tau| on Z, conj Z and the horizontal frame, over tau."""
    m = p.n - 1
    data = metric_coeffs(rho, p.w, p.chart)
    tau = abs(p.zeta) ** 2 * math.exp(data.logrho2)
    L = data.dlogrho2
    grad = np.concatenate([[tau], tau * L, [tau], tau * L.conj()])
    frame = data.frame
    d_e = np.array([frame[a] @ grad for a in range(m)])
    d_eb = np.array(
        [_unit_field(m, a, barred=True).polar_components(frame) @ grad for a in range(m)]
    )
    dtau_h = np.concatenate([d_e, d_eb])
    JH = reconstruct_structure(phi).reshape(2 * m, 2 * m)
    JH_st = np.diag(np.concatenate([np.full(m, 1j), np.full(m, -1j)]))
    dc_J = -(dtau_h @ JH)
    dc_st = -(dtau_h @ JH_st)
    # Z and conj Z: J agrees with J_st there
    return float(np.max(np.abs(dc_J - dc_st))) / tau


def frame_annihilation_residual(rho: ProfileRho, p: PolarPoint) -> float:
    """|e_alpha(mu^2)| / mu^2: the frame is tangent to the level sets."""
    data = metric_coeffs(rho, p.w, p.chart)
    L = data.dlogrho2
    mu2 = abs(p.zeta) ** 2 * math.exp(data.logrho2)
    grad = np.concatenate([[mu2], mu2 * L, [mu2], mu2 * L.conj()])
    return float(np.max(np.abs(data.frame @ grad))) / mu2


# --- suites -----------------------------------------------------------------------------


def _random_points(
    rho: ProfileRho, rng: np.random.Generator, count: int, w_box: float
) -> list[PolarPoint]:
    m = rho.n - 1
    points = []
    charts = rho.charts
    for k in range(count):
        w = rng.uniform(-w_box, w_box, m) + 1j * rng.uniform(-w_box, w_box, m)
        zeta = rng.uniform(0.2, 1.0) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        points.append(PolarPoint(chart=charts[k % len(charts)], w=w, zeta=complex(zeta)))
    return points


def identity_suite(
    rho: ProfileRho,
    seed: int = 0,
    points: int = 200,
    threshold: float = 1e-8,
    w_box: float = 2.0,
) -> list[CheckResult]:
    """Random-point residuals of the exact frame identities."""
    rng = np.random.default_rng(seed)
    sample = _random_points(rho, rng, points, w_box)
    brackets = identity = pairing = annihilation = hessian = chart_swap = 0.0
    for p in sample:
        v = rng.normal(size=rho.n) + 1j * rng.normal(size=rho.n)
        phi = 0.8 * rng.random() * np.exp(1j * rng.uniform(0, 2 * np.pi))
        phi_matrix = np.eye(rho.n - 1) * phi
        brackets = max(brackets, bracket_residual(rho, p))
        identity = max(identity, frame_algebra(rho, p.chart).identity_residual(p, v))
        pairing = max(pairing, pairing_residual(rho, p, phi_matrix))
        annihilation = max(annihilation, frame_annihilation_residual(rho, p))
        other = 3 - p.chart
        if rho.n == 2 and other in rho.charts and p.w[0] != 0:
            # ambient frames against the closed-form factor (conj(w) / w)^2
            swapped = transform_to_chart(phi, p, other, rho)
            expected = complex(frame_factor(p.w[0])) * phi
            chart_swap = max(chart_swap, abs(swapped - expected))
    corrupted = 0.0
    for p in sample[: min(20, len(sample))]:
        corrupted = max(corrupted, bracket_residual(rho, p, g_shift=0.1))
        g = metric_coeffs(rho, p.w, p.chart).g
        fd = potential_hessian_fd(rho, p.w, chart=p.chart)
        hessian = max(hessian, float(np.max(np.abs(g - fd))))
    results = [
        CheckResult.below("bracket_relations", brackets, threshold),
        CheckResult.below("radial_identity", identity, threshold),
        CheckResult.below("structure_pairing", pairing, threshold),
        CheckResult.below("frame_annihilates_mu2", annihilation, threshold),
        CheckResult.below("metric_vs_fd_hessian", hessian, 1e-6),
        CheckResult.below("phi_chart_transform", chart_swap, threshold),
        CheckResult.above("bracket_sensitivity", corrupted, 1e-2),
    ]
    for r in results:
        logger.info(f"{r.name}: residual {r.residual:.3e} (threshold {r.threshold:g})")
    return results


def lie_derivative_check(
    transport: Transport,
    t: float,
    dt: float,
    points: Sequence[ComplexArray],
    step: float = 1e-4,
) -> float:
    """sup over points of |dJ_t/dt + L_{X_t} J_t| with everything by central differences."""
    def J(time: float, y: ComplexArray) -> ComplexArray:
        return ambient_structure(transport, time, y)

    def V(y: ComplexArray) -> ComplexArray:
        x = transport.field(t, y)
        return np.concatenate([x, x.conj()])

    worst = 0.0
    failed = 0
    for y in points:
        y = as_point(y)
        n = len(y)
        try:
            dJ = (J(t + dt, y) - J(t - dt, y)) / (2 * dt)
            X = transport.field(t, y)
            XJ = (J(t, y + step * X) - J(t, y - step * X)) / (2 * step)
            DV = np.zeros((2 * n, 2 * n), dtype=np.complex128)
            for k in range(n):
                ek = np.zeros(n, dtype=np.complex128)
                ek[k] = step
                dx = (V(y + ek) - V(y - ek)) / (2 * step)
                dy = (V(y + 1j * ek) - V(y - 1j * ek)) / (2 * step)
                DV[:, k] = 0.5 * (dx - 1j * dy)
                DV[:, n + k] = 0.5 * (dx + 1j * dy)
            Jt = J(t, y)
            lie = XJ - DV @ Jt + Jt @ DV
        except ExhaustionError as exc:
            failed += 1
            logger.warning(f"lie derivative at {y} failed: {exc.message}")
            continue
        worst = max(worst, float(np.max(np.abs(dJ + lie))))
    if failed:
        logger.warning(f"lie derivative check: {failed} of {len(points)} points failed")
        return math.inf
    return worst
