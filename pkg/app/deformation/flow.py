"""Time evolution of the deformation tensor and detection of the degeneracy frontier."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import numpy.typing as npt

from app.core.errors import Degenerate, InvalidInput, Unstable
from app.core.monitoring import RunMonitor
from app.deformation.lattice import Atlas, Lattice, frame_factor
from app.deformation.laws import AtlasTransportLaw, DeformationLaw
from app.geometry.polar import PolarPoint, transition
from app.geometry.profile import ProfileRho, fubini_study_terms, rho_eval
from app.models import FlowSpec, InitialDataSpec
from app.special_fields import FrameVector, ambient_components, guiding_velocity

logger = logging.getLogger(__name__)

ComplexArray = npt.NDArray[np.complex128]
FloatArray = npt.NDArray[np.float64]

Termination = Literal["reached_one", "degenerate", "unstable"]


@dataclass
class DeformationField:
    """phi on an atlas, shape (charts, n_w, n_w, n_r, n_theta).

    For n = 2 each lattice value is the scalar phi^1_1bar in the adapted
    frame of its chart.
    """

    values: ComplexArray
    atlas: Atlas

    @property
    def lattice(self) -> Lattice:
        return self.atlas.lattice

    @property
    def charts(self) -> tuple[int, ...]:
        return self.atlas.charts


@dataclass
class Monitors:
    margin: float
    signed_margin: float
    c_residual: float
    d_residual_f0: float
    d_residual_fgamma: float
    b_margin: float
    sup_norm: float
    # mismatch of the charts on their overlap at the last blend
    blend_error: float = 0.0


@dataclass
class ConditionResiduals:
    c_res: float
    d_res_f0: float
    d_res_fgamma: float
    b_margin: float


@dataclass
class FlowState:
    t: float
    phi: DeformationField
    monitors: Monitors
    history: list[tuple[float, ComplexArray]] = field(default_factory=list)


@dataclass
class DegeneracyReport:
    s_o: float
    terminating: Termination
    margin_curve: list[tuple[float, float]]
    event_time: float | None = None
    state: FlowState | None = None
    dt: float | None = None
    steps: int = 0
    blend_error: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "s_o": self.s_o,
            "terminating": self.terminating,
            "event_time": self.event_time,
            "dt": self.dt,
            "steps": self.steps,
            "blend_error": self.blend_error,
            "margin_curve": [[t, m] for t, m in self.margin_curve],
        }


@dataclass
class PhiMetric:
    """Pairings g^(phi)(e, E_bar) and g^(phi)(E, E_bar) on the atlas."""

    e_E: ComplexArray
    E_E: ComplexArray


# --- pointwise quantities -------------------------------------------------------------


def determinant(values: ComplexArray | complex) -> FloatArray:
    """det(I - conj(phi) phi) for the scalar tensor of n = 2."""
    return np.asarray(1.0 - np.abs(values) ** 2, dtype=np.float64)


def degeneracy_margin(phi: DeformationField | ComplexArray | complex) -> float:
    values = phi.values if isinstance(phi, DeformationField) else phi
    return float(np.min(np.abs(determinant(values))))


def condition_residuals(phi: DeformationField) -> ConditionResiduals:
    """Integrability monitors; the bracket residuals f are vacuous with a single index."""
    values = phi.values
    b_margin = float(np.min(determinant(values)))
    c_res = float(np.max(np.abs(phi.lattice.zbar_op(values)))) if values.size else 0.0
    return ConditionResiduals(c_res=c_res, d_res_f0=0.0, d_res_fgamma=0.0, b_margin=b_margin)


def invariant_pairing(phi: ComplexArray | complex, g: ComplexArray | complex) -> ComplexArray:
    """Matrix of g^(phi) on (e, conj e), shape (..., 2, 2).

    g^(phi) is the J-invariant symmetric form that vanishes on pairs of
    deformed (1,0) or (0,1) vectors and takes (1 - |phi|^2) g on E, E_bar.
    """
    phi = np.asarray(phi, dtype=np.complex128)
    g = np.broadcast_to(np.asarray(g, dtype=np.complex128), phi.shape)
    ones = np.ones_like(phi)
    # columns E = e + conj(phi) conj(e) and E_bar = conj(e) + phi e
    basis = np.stack([np.stack([ones, phi], -1), np.stack([phi.conj(), ones], -1)], -2)
    c = determinant(phi) * g
    zero = np.zeros_like(phi)
    deformed = np.stack([np.stack([zero, c], -1), np.stack([c, zero], -1)], -2)
    inverse = np.linalg.inv(basis)
    return np.asarray(np.swapaxes(inverse, -1, -2) @ deformed @ inverse, dtype=np.complex128)


def phi_metric(phi: DeformationField, rho: ProfileRho) -> PhiMetric:
    e_E = np.empty(phi.values.shape, dtype=np.complex128)
    E_E = np.empty(phi.values.shape, dtype=np.complex128)
    for index, lat in enumerate(phi.atlas.lattices):
        w = lat.w[..., None]
        d = rho_eval(rho, w, order=2, chart=lat.chart)
        _, k_wwb, _ = fubini_study_terms(w)
        g = (d.hess_wwb + k_wwb)[..., 0, 0]
        values = phi.values[index]
        form = invariant_pairing(values, g)
        ones = np.ones_like(values)
        e = np.stack([ones, np.zeros_like(values)], -1)
        E = np.stack([ones, values.conj()], -1)
        E_bar = np.stack([values, ones], -1)
        e_E[index] = np.einsum("...i,...ij,...j->...", e, form, E_bar)
        E_E[index] = np.einsum("...i,...ij,...j->...", E, form, E_bar)
    return PhiMetric(e_E=e_E, E_E=E_E)


def transform_to_chart(value: complex, p: PolarPoint, chart: int, rho: ProfileRho) -> complex:
    """phi at p re-expressed in the adapted frame of another chart."""
    if rho.n != 2:
        raise InvalidInput("chart transformation of phi is implemented for n = 2")
    if chart == p.chart:
        return complex(value)
    unit = FrameVector(
        a0=0j, a=np.ones(1, np.complex128), a0_bar=0j, a_bar=np.zeros(1, np.complex128)
    )
    e_old = ambient_components(unit, p, rho)
    e_new = ambient_components(unit, transition(p, chart), rho)
    lam = complex(np.vdot(e_old, e_new) / np.vdot(e_old, e_old))
    return complex(np.conj(lam) / lam * value)


def initial_field(atlas: Atlas, spec: InitialDataSpec) -> ComplexArray:
    """phi_J on every chart; the bump lives on chart 2 and is read on chart 1 through 1/w."""
    out = atlas.zeros()
    if spec.kind == "zero" or spec.amplitude == 0:
        return out

    def bump(w: ComplexArray, zeta: ComplexArray) -> ComplexArray:
        return np.asarray(spec.amplitude * np.exp(-np.abs(w) ** 2 / spec.width**2) * zeta)

    for index, lat in enumerate(atlas.lattices):
        w = lat.w
        zeta = lat.zeta[None, None]
        if lat.chart == 2:
            out[index] = bump(w, zeta)
            continue
        safe = np.where(w == 0, 1.0, w)
        home_w = 1.0 / safe
        home_zeta = zeta * safe / np.abs(safe)
        # the bump is flat at w = infinity of chart 2
        value = frame_factor(home_w) * bump(home_w, home_zeta)
        out[index] = np.where(w == 0, 0.0, value)
    return out


# --- time stepping ---------------------------------------------------------------------


class DeformationFlow:
    """Explicit RK4 for d(phi)/dt = law.rate with angular filtering after every stage.

    The charts of the atlas evolve side by side and are blended on their
    overlap at every checkpoint.
    """

    def __init__(
        self,
        law: DeformationLaw,
        atlas: Atlas,
        spec: FlowSpec,
        direction: ComplexArray,
        s: float,
        monitor: RunMonitor | None = None,
    ) -> None:
        self.law = law
        self.atlas = atlas
        self.spec = spec
        self.tol = spec.tolerances
        self.direction = np.asarray(direction, dtype=np.complex128)
        self.s = s
        self.monitor = monitor or RunMonitor()
        self.dt = self._time_step()

    def velocity(self, t: float) -> ComplexArray:
        return guiding_velocity(self.direction, self.s, t)

    def _time_step(self) -> float:
        raw = self.spec.dt
        if raw is None and self.s > 0:
            raw = self.law.stable_dt(self.velocity(1.0), self.tol.c_cfl)
        if raw is None:
            raw = self.spec.checkpoint_dt / 10
        substeps = max(1, math.ceil(self.spec.checkpoint_dt / raw - 1e-9))
        dt = self.spec.checkpoint_dt / substeps
        logger.info(f"time step {dt:.3e} ({substeps} per checkpoint)")
        return dt

    def monitors(self, values: ComplexArray, blend_error: float = 0.0) -> Monitors:
        det = determinant(values)
        residuals = condition_residuals(DeformationField(values, self.atlas))
        out = Monitors(
            margin=float(np.min(np.abs(det))),
            signed_margin=float(np.min(det)),
            c_residual=residuals.c_res,
            d_residual_f0=residuals.d_res_f0,
            d_residual_fgamma=residuals.d_res_fgamma,
            b_margin=residuals.b_margin,
            sup_norm=float(np.max(np.abs(values))) if values.size else 0.0,
            blend_error=blend_error,
        )
        self.monitor.observe("margin", out.margin)
        self.monitor.observe("c_residual", out.c_residual)
        self.monitor.observe("sup_norm", out.sup_norm)
        return out

    def _rate(self, values: ComplexArray, t: float) -> ComplexArray:
        return self.law.rate(values, t, self.velocity(t), self.s)

    def advance(self, values: ComplexArray, t: float, dt: float) -> ComplexArray:
        filt = self.atlas.lattice.filter_theta
        k1 = self._rate(values, t)
        k2 = self._rate(filt(values + 0.5 * dt * k1), t + 0.5 * dt)
        k3 = self._rate(filt(values + 0.5 * dt * k2), t + 0.5 * dt)
        k4 = self._rate(filt(values + dt * k3), t + dt)
        return filt(values + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))

    def step(self, state: FlowState, dt: float) -> FlowState:
        if state.monitors.signed_margin <= self.tol.eps_deg:
            raise Degenerate(
                "deformation is degenerate before the step",
                {"t": state.t, "margin": state.monitors.margin},
            )
        with self.monitor.timer("flow.step"):
            values = self.advance(state.phi.values, state.t, dt)
        prev = state.monitors.sup_norm
        mon = self.monitors(values, state.monitors.blend_error)
        if not math.isfinite(mon.sup_norm) or (
            prev > self.tol.growth_floor and mon.sup_norm > self.tol.growth_factor * prev
        ):
            raise Unstable(
                "sup norm of phi grew too fast in one step",
                {"t": state.t + dt, "before": prev, "after": mon.sup_norm, "dt": dt},
            )
        logger.debug(
            f"t={state.t + dt:.4f} margin={mon.margin:.6f} "
            f"|phi|={mon.sup_norm:.3e} C={mon.c_residual:.3e}"
        )
        return FlowState(
            t=state.t + dt,
            phi=DeformationField(values, self.atlas),
            monitors=mon,
            history=state.history,
        )

    def blend(self, state: FlowState) -> FlowState:
        """Replace the charts by their partition-of-unity blend."""
        with self.monitor.timer("flow.blend"):
            values, error = self.atlas.blend(state.phi.values)
        self.monitor.observe("blend_error", error)
        return FlowState(
            t=state.t,
            phi=DeformationField(values, self.atlas),
            monitors=self.monitors(values, error),
            history=state.history,
        )

    def _bisect_event(self, state: FlowState, dt: float) -> float:
        """Time in (t, t + dt] at which det(I - conj(phi) phi) reaches eps_deg."""
        lo, hi = 0.0, dt
        while hi - lo > self.tol.t_bisect:
            mid = 0.5 * (lo + hi)
            values = self.advance(state.phi.values, state.t, mid)
            if float(np.min(determinant(values))) <= self.tol.eps_deg:
                hi = mid
            else:
                lo = mid
        return state.t + 0.5 * (lo + hi)

    def run(self, initial: ComplexArray) -> DegeneracyReport:
        if initial.shape != self.atlas.shape:
            raise InvalidInput(
                "initial data does not match the atlas",
                {"shape": list(initial.shape), "atlas": list(self.atlas.shape)},
            )
        mon = self.monitors(initial)
        if mon.signed_margin <= self.tol.eps_deg:
            raise Degenerate(
                "initial deformation violates the nondegeneracy condition",
                {"margin": mon.margin, "eps_deg": self.tol.eps_deg},
            )
        state = FlowState(
            t=0.0,
            phi=DeformationField(initial, self.atlas),
            monitors=mon,
            history=[(0.0, initial.copy())],
        )
        curve = [(0.0, mon.margin)]
        ckpt = self.spec.checkpoint_dt
        steps = 0
        blend_error = 0.0
        while state.t < 1.0 - 1e-12:
            dt = min(self.dt, 1.0 - state.t)
            new = self.step(state, dt)
            steps += 1
            if new.monitors.signed_margin <= self.tol.eps_deg:
                event = self._bisect_event(state, dt)
                curve.append((event, self.tol.eps_deg))
                logger.info(f"degeneracy at t={event:.4f} (s={self.s:.4f})")
                return DegeneracyReport(
                    s_o=self.s * event,
                    terminating="degenerate",
                    margin_curve=curve,
                    event_time=event,
                    state=state,
                    dt=self.dt,
                    steps=steps,
                    blend_error=blend_error,
                )
            state = new
            ratio = state.t / ckpt
            if abs(ratio - round(ratio)) < 1e-9 or state.t >= 1.0 - 1e-12:
                state = self.blend(state)
                blend_error = max(blend_error, state.monitors.blend_error)
                state.history.append((state.t, state.phi.values.copy()))
                curve.append((state.t, state.monitors.margin))
        logger.info(
            f"flow reached t=1 in {steps} steps, final margin {state.monitors.margin:.6f}, "
            f"blend error {blend_error:.2e}"
        )
        return DegeneracyReport(
            s_o=self.s,
            terminating="reached_one",
            margin_curve=curve,
            state=state,
            dt=self.dt,
            steps=steps,
            blend_error=blend_error,
        )


def run_to(
    s: float,
    direction: ComplexArray,
    rho: ProfileRho,
    spec: FlowSpec,
    law: DeformationLaw | None = None,
    initial: ComplexArray | None = None,
    monitor: RunMonitor | None = None,
    atlas: Atlas | None = None,
) -> DegeneracyReport:
    """Integrate phi over t in [0, 1] for the segment parameter s."""
    atlas = atlas or Atlas.from_spec(spec.grid, rho.n)
    law = law or AtlasTransportLaw(atlas, rho)
    start = initial_field(atlas, spec.initial) if initial is None else initial
    flow = DeformationFlow(law, atlas, spec, direction, s, monitor)
    return flow.run(np.asarray(start, dtype=np.complex128))


def find_frontier(
    direction: ComplexArray,
    rho: ProfileRho,
    spec: FlowSpec,
    law: DeformationLaw | None = None,
    initial: ComplexArray | None = None,
    monitor: RunMonitor | None = None,
    atlas: Atlas | None = None,
) -> DegeneracyReport:
    """sup of the segment parameters whose flow stays nondegenerate up to t = 1."""
    if float(np.linalg.norm(direction)) >= 1:
        raise InvalidInput("direction must have norm < 1")
    atlas = atlas or Atlas.from_spec(spec.grid, rho.n)
    law = law or AtlasTransportLaw(atlas, rho)

    def attempt(s: float) -> DegeneracyReport:
        return run_to(
            s, direction, rho, spec, law=law, initial=initial, monitor=monitor, atlas=atlas
        )

    full = attempt(1.0)
    if full.terminating == "reached_one":
        return full
    lo, hi = 0.0, 1.0
    successes: list[float] = []
    failures: list[DegeneracyReport] = [full]
    while hi - lo > spec.tolerances.s_bisect:
        mid = 0.5 * (lo + hi)
        report = attempt(mid)
        if report.terminating == "reached_one":
            lo = mid
            successes.append(mid)
        else:
            hi = mid
            failures.append(report)
        logger.info(f"frontier bracket [{lo:.4f}, {hi:.4f}]")
    # a failing run must not break down before a parameter that succeeded
    best = max(successes, default=0.0)
    for report in failures:
        if report.s_o < best - spec.tolerances.s_bisect:
            raise Unstable(
                "frontier membership is not monotone in s",
                {"succeeded_at": best, "failed_at": report.s_o},
            )
    # the s = 1 run already resolves the frontier to t_bisect; the bracket must agree with it
    if not lo - spec.tolerances.s_bisect <= full.s_o <= hi + spec.tolerances.s_bisect:
        raise Unstable(
            "frontier bracket disagrees with the breakdown time of the full segment",
            {"bracket": [lo, hi], "full_segment": full.s_o},
        )
    last = failures[-1]
    return DegeneracyReport(
        s_o=full.s_o,
        terminating="degenerate",
        margin_curve=last.margin_curve,
        event_time=full.event_time,
        state=last.state,
        dt=last.dt,
        steps=sum(r.steps for r in failures),
        blend_error=max(r.blend_error for r in failures),
    )
