"""Closed-form ingredients of special vector fields on the blown-up ball.

All frame components refer to the adapted frame (Z, e_alpha) of
``app.geometry.profile``; chart points carry the velocity in chart order
(axis component last).
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from app.core.errors import CoreSingular, Degenerate, InvalidInput, NoConvergence
from app.geometry.polar import PolarPoint, as_point, chart_order, coordinate_fields, to_polar
from app.geometry.profile import FrameData, ProfileRho, metric_coeffs

logger = logging.getLogger(__name__)

ComplexArray = npt.NDArray[np.complex128]
Vector = Sequence[complex] | ComplexArray


@dataclass
class FrameVector:
    """X = a0 Z + a^alpha e_alpha + a0_bar conj(Z) + a_bar^alpha conj(e_alpha)."""

    a0: complex
    a: ComplexArray
    a0_bar: complex
    a_bar: ComplexArray

    @classmethod
    def real(cls, a0: complex, a: ComplexArray) -> "FrameVector":
        a = np.asarray(a, dtype=np.complex128)
        return cls(a0=a0, a=a, a0_bar=complex(np.conj(a0)), a_bar=a.conj())

    def polar_components(self, frame: ComplexArray) -> ComplexArray:
        """Components in ``[zeta d_zeta, d_w, conj(zeta) d_conj(zeta), d_conj(w)]``."""
        m = len(self.a)
        conj_frame = np.concatenate([frame[:, m + 1 :], frame[:, : m + 1]], axis=1).conj()
        out = self.a @ frame + self.a_bar @ conj_frame
        out[0] += self.a0
        out[m + 1] += self.a0_bar
        return np.asarray(out, dtype=np.complex128)


@dataclass
class SpecialFieldParams:
    v: ComplexArray
    sigma: Callable[[ComplexArray], float] | float = 0.0
    ytilde: ComplexArray | None = None

    def sigma_at(self, w: ComplexArray) -> float:
        return float(self.sigma(w)) if callable(self.sigma) else float(self.sigma)


@dataclass
class StructureBlocks:
    """(J - J_st) in the frame (e, conj e); ``x_y`` is the x-component of (J - J_st)(y)."""

    e_e: ComplexArray
    e_eb: ComplexArray
    eb_e: ComplexArray
    eb_eb: ComplexArray


def chart_velocity(v: Vector, chart: int) -> ComplexArray:
    v = as_point(v)
    return v[chart_order(len(v), chart)]


def radial_components(
    v: Vector, w: Vector, rho: ProfileRho, chart: int | None = None
) -> tuple[complex, ComplexArray]:
    """Y^0 and Y^alpha of the radial special field with center velocity v."""
    chart = rho.n if chart is None else chart
    return _radial(chart_velocity(v, chart), as_point(w), metric_coeffs(rho, w, chart))


def _radial(vc: ComplexArray, w: ComplexArray, data: FrameData) -> tuple[complex, ComplexArray]:
    s = np.sqrt(1.0 + np.vdot(w, w).real)
    Y = (vc[:-1] - vc[-1] * w) * s
    Y0 = complex(vc[-1] * s + Y @ data.dpotential)
    return Y0, Y


def h_terms(
    v: Vector, w: Vector, rho: ProfileRho, chart: int | None = None
) -> tuple[ComplexArray, ComplexArray]:
    """(H_beta, H_conj(beta)) of the radial special field."""
    chart = rho.n if chart is None else chart
    data = metric_coeffs(rho, w, chart)
    _, Y = _radial(chart_velocity(v, chart), as_point(w), data)
    return _h(Y, data)


def _h(Y: ComplexArray, data: FrameData) -> tuple[ComplexArray, ComplexArray]:
    dp = data.dpotential
    H = Y @ (data.h + np.outer(dp, dp))
    Hb = Y @ data.g
    return H, Hb


def assemble_special(params: SpecialFieldParams, p: PolarPoint, rho: ProfileRho) -> FrameVector:
    if p.zeta == 0:
        raise CoreSingular("special field is singular at zeta = 0; its limit there is v")
    data = metric_coeffs(rho, p.w, p.chart)
    Y0, Y = _radial(chart_velocity(params.v, p.chart), p.w, data)
    zeta = p.zeta
    x0 = Y0 / zeta + 1j * params.sigma_at(p.w) - np.conj(Y0) * zeta
    xa = Y / zeta
    if params.ytilde is not None:
        xa = xa + params.ytilde
    return FrameVector.real(complex(x0), xa)


def ambient_components(fv: FrameVector, p: PolarPoint, rho: ProfileRho) -> ComplexArray:
    """(d_z, d_conj(z)) components of a frame vector, in ambient index order."""
    frame = metric_coeffs(rho, p.w, p.chart).frame
    return coordinate_fields(p) @ fv.polar_components(frame)


def special_field_ambient(
    params: SpecialFieldParams,
    z: Vector,
    rho: ProfileRho,
    chart: int,
) -> ComplexArray:
    """Holomorphic components X^i of the real special field at an ambient point."""
    z = as_point(z)
    if not np.any(z):
        return as_point(params.v)
    p = to_polar(z, chart)
    comps = ambient_components(assemble_special(params, p, rho), p, rho)
    return comps[: len(z)]


# --- deformed structures ----------------------------------------------------------


def _as_matrix(phi: ComplexArray | complex) -> ComplexArray:
    phi = np.asarray(phi, dtype=np.complex128)
    if phi.ndim < 2:
        phi = phi[..., None, None]
    return phi


def nondegeneracy(phi: ComplexArray | complex) -> ComplexArray:
    """det(I - conj(phi) phi) pointwise."""
    phi = _as_matrix(phi)
    eye = np.eye(phi.shape[-1])
    return np.asarray(np.linalg.det(eye - phi.conj() @ phi), dtype=np.complex128)


def structure_blocks(phi: ComplexArray | complex) -> StructureBlocks:
    phi = _as_matrix(phi)
    eye = np.eye(phi.shape[-1])
    pp = phi @ phi.conj()
    qq = phi.conj() @ phi
    if np.any(np.abs(np.linalg.det(eye - qq)) == 0):
        raise Degenerate("det(I - conj(phi) phi) vanishes")
    left = np.linalg.inv(eye - pp)
    right = np.linalg.inv(eye - qq)
    return StructureBlocks(
        e_e=2j * left @ pp,
        e_eb=-2j * left @ phi,
        eb_e=2j * right @ phi.conj(),
        eb_eb=-2j * right @ qq,
    )


def reconstruct_structure(phi: ComplexArray | complex) -> ComplexArray:
    """J on H in the basis (e, conj e) with H^{1,0} spanned by e + conj(phi) conj(e)."""
    phi = _as_matrix(phi)
    m = phi.shape[-1]
    eye = np.broadcast_to(np.eye(m), phi.shape)
    basis = np.concatenate(
        [np.concatenate([eye, phi], axis=-1), np.concatenate([phi.conj(), eye], axis=-1)],
        axis=-2,
    )
    if np.any(np.abs(np.linalg.det(basis)) == 0):
        raise Degenerate("eigenspaces of the deformed structure are not complementary")
    diag = np.diag(np.concatenate([np.full(m, 1j), np.full(m, -1j)]))
    return np.asarray(basis @ diag @ np.linalg.inv(basis), dtype=np.complex128)


def ytilde_from_phi(
    phi: ComplexArray | complex,
    v: Vector,
    p: PolarPoint,
    rho: ProfileRho,
) -> ComplexArray:
    """Horizontal correction Y~^alpha forced by the deformed structure (sigma = 0)."""
    phi = _as_matrix(phi)
    if phi.ndim != 2:
        raise InvalidInput("ytilde_from_phi takes the deformation tensor at a single point")
    m = rho.n - 1
    if not np.any(phi):
        return np.zeros(m, dtype=np.complex128)
    if p.zeta == 0:
        raise CoreSingular("Y~ evaluated on the exceptional divisor")
    blocks = structure_blocks(phi)
    data = metric_coeffs(rho, p.w, p.chart)
    Y0, Y = _radial(chart_velocity(v, p.chart), p.w, data)
    H, Hb = _h(Y, data)
    zeta, zb = p.zeta, np.conj(p.zeta)
    L = data.dlogrho2
    Lb = L.conj()
    gi = data.g_inv
    first = gi @ (H / zeta + Hb.conj() / zb)
    second = gi.T @ (Hb / zeta + H.conj() / zb)
    third = gi @ (np.conj(Hb - Y0 * Lb) * zeta + (H - Y0 * L) * zb)
    fourth = gi.T @ (np.conj(H - Y0 * L) * zeta + (Hb - Y0 * Lb) * zb)
    out = 0.5j * (
        -blocks.e_eb @ first - blocks.e_e @ second + blocks.e_eb @ third + blocks.e_e @ fourth
    )
    return np.asarray(out, dtype=np.complex128)


def xprime(v: Vector, p: PolarPoint, rho: ProfileRho) -> FrameVector:
    """The phi-independent complex advection field X' (frame components)."""
    if p.zeta == 0:
        raise CoreSingular("X' is singular at zeta = 0")
    data = metric_coeffs(rho, p.w, p.chart)
    Y0, Y = _radial(chart_velocity(v, p.chart), p.w, data)
    H, Hb = _h(Y, data)
    zeta, zb = p.zeta, np.conj(p.zeta)
    L = data.dlogrho2
    yprime = -data.g_inv @ (
        H / zeta + Hb.conj() / zb - np.conj(Hb - Y0 * L.conj()) * zeta - (H - Y0 * L) * zb
    )
    return FrameVector(
        a0=complex(Y0 / zeta - np.conj(Y0) * zeta),
        a=Y / zeta,
        a0_bar=complex(np.conj(Y0) / zb - Y0 * zb),
        a_bar=Y.conj() / zb + yprime,
    )


# --- ball automorphisms ----------------------------------------------------------


def ball_automorphism(a: Vector, z: Vector) -> ComplexArray:
    """The involution of the unit ball exchanging a and 0 (minus the identity for a = 0)."""
    a = as_point(a)
    z = as_point(z)
    aa = float(np.vdot(a, a).real)
    if aa >= 1:
        raise InvalidInput("automorphism center must lie inside the unit ball")
    za = np.vdot(a, z)
    if aa == 0:
        return -z
    proj = (za / aa) * a
    s = np.sqrt(1.0 - aa)
    return np.asarray((a - proj - s * (z - proj)) / (1.0 - za), dtype=np.complex128)


def mobius_center_velocity(v: Vector, t: float, step: float = 1e-6) -> ComplexArray:
    """d/ds F_{(t+s)v}(tv) at s = 0, by central differences with a Richardson check."""
    v = as_point(v)
    if t * np.linalg.norm(v) >= 1:
        raise InvalidInput("t |v| must be < 1")
    x = t * v

    def quotient(h: float) -> ComplexArray:
        return (ball_automorphism((t + h) * v, x) - ball_automorphism((t - h) * v, x)) / (2 * h)

    coarse = quotient(step)
    fine = quotient(step / 2)
    extrapolated = (4 * fine - coarse) / 3
    scale = max(float(np.linalg.norm(extrapolated)), 1e-300)
    if np.linalg.norm(extrapolated - fine) > 1e-5 * scale:
        raise NoConvergence(
            "center velocity difference quotients disagree",
            {"t": t, "difference": float(np.linalg.norm(extrapolated - fine))},
        )
    return np.asarray(extrapolated, dtype=np.complex128)


def guiding_velocity(direction: Vector, s: float, t: float) -> ComplexArray:
    """Velocity u_t of the special fields whose flow brings s * direction to the origin."""
    if s == 0:
        return np.zeros(len(as_point(direction)), dtype=np.complex128)
    return -mobius_center_velocity(s * as_point(direction), t)
