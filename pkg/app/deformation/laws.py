"""Evolution laws for the deformation tensor: d(phi)/dt = law.rate(phi, t, ...)."""

import logging
from abc import ABC, abstractmethod

import numpy as np
import numpy.typing as npt

from app.core.errors import InvalidInput
from app.deformation.lattice import Atlas, Lattice
from app.geometry.profile import ProfileRho, fubini_study_terms, rho_eval
from app.geometry.symbolic import FrameAlgebra, frame_algebra

logger = logging.getLogger(__name__)

ComplexArray = npt.NDArray[np.complex128]

_COEFFICIENTS = ("a", "b", "c", "d", "e_b", "e_d", "ebar_d")


class DeformationLaw(ABC):
    """Right-hand side of the method-of-lines system on a lattice."""

    @abstractmethod
    def rate(self, phi: ComplexArray, t: float, velocity: ComplexArray, s: float) -> ComplexArray:
        """d(phi)/dt at time t for the center velocity ``velocity`` of segment parameter s."""

    def stable_dt(self, velocity: ComplexArray, c_cfl: float) -> float | None:
        """Largest explicit step allowed by the law, or None when it imposes none."""
        return None


class FrameTransportLaw(DeformationLaw):
    """The Riccati-type transport of phi along the complex field X' (n = 2).

        dphi/dt = -phi conj(e)(d) + phi e(b) - phi^2 e(d)
                  - (a Z + b e + c conj(Z) + d conj(e)) phi

    with X' = a Z + b e + c conj(Z) + d conj(e). The conj(e)(b) term of the
    bracket vanishes identically and is left out.
    """

    def __init__(self, lattice: Lattice, rho: ProfileRho) -> None:
        if rho.n != 2:
            raise InvalidInput("the deformation flow is implemented for n = 2")
        self.lattice = lattice
        self.rho = rho
        self.algebra: FrameAlgebra = frame_algebra(rho, lattice.chart)
        exprs = self.algebra.advection_coefficients()
        self._fns = {
            name: self.algebra.compile(f"xprime:{name}", exprs[name]) for name in _COEFFICIENTS
        }
        self._unit_key: tuple[float, ...] | None = None
        self._unit_coefficients: dict[str, ComplexArray] = {}

        w = lattice.w[..., None]
        d = rho_eval(rho, w, order=1, chart=lattice.chart)
        dk, _, _ = fubini_study_terms(w)
        # frame coefficients: e = d_w - alpha Z + beta conj(Z)
        self.alpha = (d.dw + 0.5 * dk)[..., 0]
        self.beta = 0.5 * dk[..., 0]

    def coefficients(self, velocity: ComplexArray) -> dict[str, ComplexArray]:
        v = np.asarray(velocity, dtype=np.complex128)
        norm = float(np.linalg.norm(v))
        if norm == 0:
            zero = np.zeros(self.lattice.shape, dtype=np.complex128)
            return {name: zero for name in self._fns}
        # X' is real-linear in the velocity: cache along its direction
        unit = v / norm
        key = tuple(np.round(np.concatenate([unit.real, unit.imag]), 12).tolist())
        if key != self._unit_key:
            w = self.lattice.w[..., None]
            zeta = self.lattice.zeta
            self._unit_coefficients = {
                name: self.algebra.evaluate(fn, w, zeta, unit) for name, fn in self._fns.items()
            }
            self._unit_key = key
        return {name: norm * value for name, value in self._unit_coefficients.items()}

    def rate(self, phi: ComplexArray, t: float, velocity: ComplexArray, s: float) -> ComplexArray:
        lat = self.lattice
        co = self.coefficients(velocity)
        z_phi = lat.z_op(phi)
        zb_phi = lat.zbar_op(phi)
        e_phi = lat.d_w(phi) - self.alpha * z_phi + self.beta * zb_phi
        eb_phi = lat.d_wbar(phi) - self.alpha.conj() * zb_phi + self.beta.conj() * z_phi
        advection = co["a"] * z_phi + co["b"] * e_phi + co["c"] * zb_phi + co["d"] * eb_phi
        return -phi * co["ebar_d"] + phi * co["e_b"] - phi**2 * co["e_d"] - advection

    def speeds(self, velocity: ComplexArray) -> dict[str, ComplexArray]:
        """Coefficients of d_r, d_theta, d_x, d_y in the advection operator."""
        co = self.coefficients(velocity)
        a, b, c, d = co["a"], co["b"], co["c"], co["d"]
        alpha, beta = self.alpha, self.beta
        on_z = a - b * alpha + d * beta.conj()
        on_zbar = c + b * beta - d * alpha.conj()
        return {
            "r": 0.5 * self.lattice.radius * (on_z + on_zbar),
            "theta": 0.5j * (on_zbar - on_z),
            "x": 0.5 * (b + d),
            "y": 0.5j * (d - b),
        }

    def stable_dt(self, velocity: ComplexArray, c_cfl: float) -> float | None:
        sp = self.speeds(velocity)
        lat = self.lattice
        rate = (
            np.abs(sp["r"]) / lat.h_r
            + np.abs(sp["theta"]) / lat.h_theta
            + np.abs(sp["x"]) / lat.h_w
            + np.abs(sp["y"]) / lat.h_w
        )
        peak = float(np.max(rate))
        if peak == 0:
            return None
        return c_cfl / peak


class AtlasTransportLaw(DeformationLaw):
    """FrameTransportLaw on every chart of an atlas; values carry a leading chart axis."""

    def __init__(self, atlas: Atlas, rho: ProfileRho) -> None:
        self.atlas = atlas
        self.laws = tuple(FrameTransportLaw(lat, rho) for lat in atlas.lattices)

    def rate(self, phi: ComplexArray, t: float, velocity: ComplexArray, s: float) -> ComplexArray:
        return np.stack([law.rate(phi[i], t, velocity, s) for i, law in enumerate(self.laws)])

    def stable_dt(self, velocity: ComplexArray, c_cfl: float) -> float | None:
        steps = [law.stable_dt(velocity, c_cfl) for law in self.laws]
        return min((dt for dt in steps if dt is not None), default=None)
