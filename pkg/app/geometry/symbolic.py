"""Exact frame algebra on a chart, built with sympy and compiled with lambdify.

Functions live on (w, conj w, zeta, conj zeta) treated as independent
symbols; ``wb``/``zb`` stand for the conjugates and conjugation swaps them.
"""

import logging
from collections.abc import Callable, Sequence
from functools import lru_cache
from typing import TYPE_CHECKING, Any

import numpy as np
import numpy.typing as npt
import sympy as sp

from app.core.errors import InvalidInput
from app.geometry.polar import PolarPoint, chart_order

if TYPE_CHECKING:
    from app.geometry.profile import ProfileRho

logger = logging.getLogger(__name__)

ComplexArray = npt.NDArray[np.complex128]
Field = dict[sp.Symbol, sp.Expr]


class FrameAlgebra:
    """Symbolic Z, e_alpha and the special-field ingredients of one chart."""

    def __init__(self, rho: "ProfileRho", chart: int) -> None:
        self.n = rho.n
        self.chart = chart
        m = self.m = rho.n - 1
        self.w = sp.symbols(f"w1:{m + 1}")
        self.wb = sp.symbols(f"wb1:{m + 1}")
        self.z, self.zb = sp.symbols("z zb")
        self.v = sp.symbols(f"v1:{self.n + 1}")
        self.vb = sp.symbols(f"vb1:{self.n + 1}")
        self._swap = {
            **dict(zip(self.w, self.wb, strict=True)),
            **dict(zip(self.wb, self.w, strict=True)),
            **dict(zip(self.v, self.vb, strict=True)),
            **dict(zip(self.vb, self.v, strict=True)),
            self.z: self.zb,
            self.zb: self.z,
        }
        self.coords = (self.z, *self.w, self.zb, *self.wb)
        self._compiled: dict[str, Callable[..., Any]] = {}

        s2 = 1 + sum(self.w[a] * self.wb[a] for a in range(m))
        L = sp.Integer(0)
        for mono in rho.chart_terms(chart):
            term = sp.Float(mono.c.real) + sp.I * sp.Float(mono.c.imag)
            for a in range(m):
                term *= self.w[a] ** mono.p[a] * self.wb[a] ** mono.q[a]
            L += term
        L = L / s2**rho.denominator_power
        self.L = L
        self.K = sp.log(s2)
        self.S = sp.sqrt(s2)
        self.P = self.L + self.K

        self.L_w = [sp.diff(L, x) for x in self.w]
        self.L_wb = [sp.diff(L, x) for x in self.wb]
        self.P_w = [sp.diff(self.P, x) for x in self.w]
        self.alpha = [sp.diff(L, x) + sp.diff(self.K, x) / 2 for x in self.w]
        self.beta = [sp.diff(self.K, x) / 2 for x in self.w]
        self.g = sp.Matrix(m, m, lambda a, b: sp.diff(self.P, self.w[a], self.wb[b]))
        self.h = sp.Matrix(m, m, lambda a, b: sp.diff(self.P, self.w[a], self.w[b]))

    # --- conjugation and operators -----------------------------------------

    def conj(self, expr: sp.Expr) -> sp.Expr:
        return sp.sympify(expr).xreplace(self._swap).xreplace({sp.I: -sp.I})

    def Zop(self, f: sp.Expr) -> sp.Expr:
        return self.z * sp.diff(f, self.z)

    def Zbar(self, f: sp.Expr) -> sp.Expr:
        return self.zb * sp.diff(f, self.zb)

    def E(self, a: int, f: sp.Expr) -> sp.Expr:
        return sp.diff(f, self.w[a]) - self.alpha[a] * self.Zop(f) + self.beta[a] * self.Zbar(f)

    def Ebar(self, a: int, f: sp.Expr) -> sp.Expr:
        return (
            sp.diff(f, self.wb[a])
            - self.conj(self.alpha[a]) * self.Zbar(f)
            + self.conj(self.beta[a]) * self.Zop(f)
        )

    # --- vector fields as coefficient maps -----------------------------------

    def field_Z(self) -> Field:
        return {self.z: self.z}

    def field_Zbar(self) -> Field:
        return {self.zb: self.zb}

    def field_e(self, a: int) -> Field:
        return {
            self.w[a]: sp.Integer(1),
            self.z: -self.alpha[a] * self.z,
            self.zb: self.beta[a] * self.zb,
        }

    def field_ebar(self, a: int) -> Field:
        return {self.conj(k): self.conj(c) for k, c in self.field_e(a).items()}

    def apply(self, X: Field, f: sp.Expr) -> sp.Expr:
        return sum((c * sp.diff(f, k) for k, c in X.items()), sp.Integer(0))

    def bracket(self, X: Field, Y: Field) -> Field:
        out: Field = {}
        for k in self.coords:
            val = self.apply(X, Y.get(k, sp.Integer(0))) - self.apply(Y, X.get(k, sp.Integer(0)))
            if val != 0:
                out[k] = val
        return out

    def bracket_identities(self, g_shift: float = 0.0) -> list[sp.Expr]:
        """Component expressions that vanish when the frame bracket relations hold."""
        residuals: list[sp.Expr] = []
        Z = self.field_Z()
        Zbar = self.field_Zbar()
        for a in range(self.m):
            for comp in self.bracket(Z, self.field_e(a)).values():
                residuals.append(comp)
            for comp in self.bracket(Z, self.field_ebar(a)).values():
                residuals.append(comp)
            for b in range(self.m):
                if b > a:
                    residuals.extend(self.bracket(self.field_e(a), self.field_e(b)).values())
                lhs = self.bracket(self.field_e(a), self.field_ebar(b))
                gab = self.g[a, b] + g_shift
                expected = {k: gab * c for k, c in Z.items()}
                for k, c in Zbar.items():
                    expected[k] = -gab * c
                for k in self.coords:
                    diff = lhs.get(k, sp.Integer(0)) - expected.get(k, sp.Integer(0))
                    if diff != 0:
                        residuals.append(diff)
        return residuals

    # --- special-field ingredients ------------------------------------------

    def chart_velocity(self) -> list[sp.Symbol]:
        order = chart_order(self.n, self.chart)
        return [self.v[i] for i in order]

    def radial(self) -> tuple[sp.Expr, list[sp.Expr]]:
        vc = self.chart_velocity()
        Y = [(vc[a] - vc[-1] * self.w[a]) * self.S for a in range(self.m)]
        Y0 = vc[-1] * self.S + sum((Y[a] * self.P_w[a] for a in range(self.m)), sp.Integer(0))
        return Y0, Y

    def h_terms(self) -> tuple[list[sp.Expr], list[sp.Expr]]:
        _, Y = self.radial()
        m = self.m
        zero = sp.Integer(0)
        H = [
            sum((Y[a] * (self.h[a, b] + self.P_w[a] * self.P_w[b]) for a in range(m)), zero)
            for b in range(m)
        ]
        Hb = [sum((Y[a] * self.g[a, b] for a in range(m)), sp.Integer(0)) for b in range(m)]
        return H, Hb

    def identity_expressions(self) -> list[sp.Expr]:
        """Both lines of the derivative identity for Y^0/zeta - conj(Y^0) zeta."""
        Y0, _ = self.radial()
        H, Hb = self.h_terms()
        X0 = Y0 / self.z - self.conj(Y0) * self.z
        out = []
        for b in range(self.m):
            out.append(
                self.Ebar(b, X0)
                - (Hb[b] / self.z - self.conj(H[b] - Y0 * self.L_w[b]) * self.z)
            )
            out.append(
                self.E(b, X0)
                - (H[b] / self.z - self.conj(Hb[b] - Y0 * self.L_wb[b]) * self.z)
            )
        return out

    def advection_coefficients(self) -> dict[str, sp.Expr]:
        """X' = a Z + b e + c conj(Z) + d conj(e) for n = 2, with the derivatives the flow needs."""
        if self.m != 1:
            raise InvalidInput("advection coefficients are built for n = 2")
        Y0, (Y,) = self.radial()
        (H,), (Hb,) = self.h_terms()
        z, zb = self.z, self.zb
        g = self.g[0, 0]
        a = Y0 / z - self.conj(Y0) * z
        b = Y / z
        c = self.conj(Y0) / zb - Y0 * zb
        yprime = -(
            H / z
            + self.conj(Hb) / zb
            - self.conj(Hb - Y0 * self.L_wb[0]) * z
            - (H - Y0 * self.L_w[0]) * zb
        ) / g
        d = self.conj(Y) / zb + yprime
        return {
            "a": a,
            "b": b,
            "c": c,
            "d": d,
            "yprime": yprime,
            "e_b": self.E(0, b),
            "e_d": self.E(0, d),
            "ebar_d": self.Ebar(0, d),
            "ebar_b": self.Ebar(0, b),
        }

    # --- numeric evaluation -----------------------------------------------------

    @property
    def args(self) -> tuple[sp.Symbol, ...]:
        return (*self.w, *self.wb, self.z, self.zb, *self.v, *self.vb)

    def compile(self, name: str, expr: sp.Expr) -> Callable[..., Any]:
        if name not in self._compiled:
            self._compiled[name] = sp.lambdify(self.args, expr, modules="numpy")
        return self._compiled[name]

    def evaluate(
        self,
        fn: Callable[..., Any],
        w: ComplexArray,
        zeta: ComplexArray | complex,
        v: Sequence[complex] | ComplexArray | None = None,
    ) -> ComplexArray:
        """Evaluate a compiled expression; ``w`` has shape (..., m), zeta broadcasts."""
        w = np.asarray(w, dtype=np.complex128)
        zeta = np.asarray(zeta, dtype=np.complex128)
        vv = np.zeros(self.n, dtype=np.complex128) if v is None else np.asarray(v, np.complex128)
        ws = [w[..., a] for a in range(self.m)]
        values = fn(*ws, *[x.conj() for x in ws], zeta, zeta.conj(), *vv, *vv.conj())
        shape = np.broadcast_shapes(w.shape[:-1], zeta.shape)
        return np.asarray(values, dtype=np.complex128) + np.zeros(shape, dtype=np.complex128)

    def bracket_residual(self, p: PolarPoint, g_shift: float = 0.0) -> float:
        name = f"brackets:{g_shift!r}"
        if name not in self._compiled:
            exprs = self.bracket_identities(g_shift)
            self._compiled[name] = sp.lambdify(self.args, exprs or [0], modules="numpy")
        values = self.evaluate(self._compiled[name], p.w, p.zeta)
        return float(np.max(np.abs(values)))

    def identity_residual(self, p: PolarPoint, v: Sequence[complex] | ComplexArray) -> float:
        fn = self.compile("identity", self.identity_expressions())
        return float(np.max(np.abs(self.evaluate(fn, p.w, p.zeta, v))))


@lru_cache(maxsize=16)
def frame_algebra(rho: "ProfileRho", chart: int) -> FrameAlgebra:
    logger.debug(f"building frame algebra for chart {chart} (n={rho.n})")
    return FrameAlgebra(rho, chart)
