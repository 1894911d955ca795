import numpy as np
import pytest

from app.core.errors import Degenerate, InvalidInput, Unstable
from app.core.monitoring import RunMonitor
from app.deformation.flow import (
    DeformationField,
    DeformationFlow,
    condition_residuals,
    degeneracy_margin,
    determinant,
    find_frontier,
    initial_field,
    invariant_pairing,
    phi_metric,
    run_to,
    transform_to_chart,
)
from app.deformation.lattice import Atlas, Lattice, frame_factor
from app.deformation.laws import AtlasTransportLaw, DeformationLaw, FrameTransportLaw
from app.geometry.polar import to_polar
from app.geometry.profile import ProfileRho, metric_coeffs, preset
from app.models import FlowSpec, GridSpec, InitialDataSpec
from app.special_fields import reconstruct_structure
from app.tests.utils.laws import GrowthLaw, RampLaw
from app.tests.utils.utils import global_field

DIRECTION = np.array([0.5 + 0j, 0j])


def bump_spec(flow_spec: FlowSpec, amplitude: float = 0.05) -> FlowSpec:
    return flow_spec.model_copy(
        update={"dt": None, "initial": InitialDataSpec(kind="bump", amplitude=amplitude)}
    )


def test_determinant_and_margin() -> None:
    values = np.array([0.0, 0.6, 0.8j])
    np.testing.assert_allclose(determinant(values), [1.0, 0.64, 0.36])
    assert degeneracy_margin(values) == pytest.approx(0.36)


def test_zero_initial_field(small_atlas: Atlas) -> None:
    values = initial_field(small_atlas, InitialDataSpec())
    assert values.shape == small_atlas.shape
    assert not np.any(values)


def test_bump_initial_field_satisfies_condition_c(small_atlas: Atlas) -> None:
    values = initial_field(small_atlas, InitialDataSpec(kind="bump", amplitude=0.1))
    assert np.max(np.abs(values[1])) == pytest.approx(0.1, rel=1e-2)
    residuals = condition_residuals(DeformationField(values, small_atlas))
    assert residuals.c_res <= 1e-10
    assert residuals.d_res_f0 == 0.0


def test_bump_reads_the_same_on_both_charts(small_atlas: Atlas) -> None:
    values = initial_field(small_atlas, InitialDataSpec(kind="bump", amplitude=0.1))
    # chart 1 at w = 0.5 + 0.5j is chart 2 at w = 1 - 1j, zeta turned by pi / 4
    lat1, lat2 = small_atlas.lattices
    i, j = 10, 10
    assert lat1.w[i, j, 0, 0] == pytest.approx(0.5 + 0.5j)
    assert lat2.w[12, 4, 0, 0] == pytest.approx(1 - 1j)
    expected = frame_factor(1 - 1j) * np.roll(values[1, 12, 4], -2, axis=-1)
    np.testing.assert_allclose(values[0, i, j], expected, atol=1e-14)


class TestAtlas:
    def test_charts_and_shape(self, small_atlas: Atlas) -> None:
        assert small_atlas.charts == (1, 2)
        assert small_atlas.shape == (2, 17, 17, 9, 16)

    def test_weights_form_a_partition(self, small_atlas: Atlas) -> None:
        w = small_atlas.lattices[0].w[:, :, 0, 0]
        weights = small_atlas.weights(0)
        assert weights[8, 8] == 1.0
        assert np.all((weights >= 0) & (weights <= 1))
        assert weights[w == 1.0][0] == pytest.approx(0.5)
        assert weights[w == 2.0][0] == 0.0
        # the weight of the other chart at the same point is 1 - weight
        assert small_atlas.weights(1)[w == 0.5][0] == pytest.approx(
            1 - weights[w == 2.0][0]
        )

    def test_overlap_needs_a_box_beyond_the_unit_disc(self, small_grid: GridSpec) -> None:
        with pytest.raises(InvalidInput):
            Atlas.from_spec(small_grid.model_copy(update={"w_box": 1.0}), 2)
        with pytest.raises(InvalidInput):
            Atlas.from_spec(small_grid, 3)

    def test_blend_of_a_global_field(self, small_atlas: Atlas) -> None:
        values = global_field(small_atlas)
        blended, error = small_atlas.blend(values)
        assert 0 < error <= 1e-3
        np.testing.assert_allclose(blended, values, atol=1e-3)
        # inside the unit disc of the other chart nothing changes
        np.testing.assert_array_equal(blended[1, 8, 8], values[1, 8, 8])

    def test_blend_replaces_the_far_corner(self, small_atlas: Atlas) -> None:
        values = global_field(small_atlas)
        values[1, 0, 0] = 0.7
        blended, error = small_atlas.blend(values)
        # w = -2 - 2i has no weight on chart 2
        expected = 0.1 * (-2 - 2j) ** 2 / 81
        assert blended[1, 0, 0, 0, 0] == pytest.approx(expected, abs=1e-3)
        assert error < 0.1

    def test_single_chart_blend_is_the_identity(self, single_atlas: Atlas) -> None:
        values = np.full(single_atlas.shape, 0.3 + 0j)
        blended, error = single_atlas.blend(values)
        assert blended is values
        assert error == 0.0


class TestPhiMetric:
    def test_pairs_frame_with_g(self, small_atlas: Atlas, perturbed: ProfileRho) -> None:
        values = np.full(small_atlas.shape, 0.3, dtype=np.complex128)
        pairing = phi_metric(DeformationField(values, small_atlas), perturbed)
        for index, chart in enumerate(small_atlas.charts):
            w = complex(small_atlas.lattices[index].w[3, 5, 0, 0])
            g = metric_coeffs(perturbed, [w], chart).g[0, 0]
            assert pairing.e_E[index, 3, 5, 0, 0] == pytest.approx(g)
            assert pairing.E_E[index, 3, 5, 0, 0] == pytest.approx(0.91 * g)

    def test_pairing_is_invariant_under_the_deformed_structure(self) -> None:
        phi = 0.4 - 0.3j
        form = invariant_pairing(phi, 2.0)
        J = reconstruct_structure(phi)
        np.testing.assert_allclose(J.T @ form @ J, form, atol=1e-12)
        np.testing.assert_allclose(form, form.T, atol=1e-12)
        # conj(e) is null for the pairing only at phi = 0
        assert abs(form[1, 1]) > 0.1
        np.testing.assert_allclose(invariant_pairing(0.0, 2.0), [[0, 2], [2, 0]])


def test_transform_to_same_chart(ball: ProfileRho) -> None:
    p = to_polar([0.3, 0.4j], 2)
    assert transform_to_chart(0.2j, p, 2, ball) == 0.2j


def test_transform_between_charts_is_the_frame_factor(
    ball: ProfileRho, perturbed: ProfileRho
) -> None:
    p = to_polar([0.3 + 0.1j, 0.4j], 2)
    for rho in (ball, perturbed):
        value = transform_to_chart(0.2j, p, 1, rho)
        assert value == pytest.approx(complex(frame_factor(p.w[0])) * 0.2j, abs=1e-12)


class TestFrameTransportLaw:
    def test_needs_two_dimensions(self, small_lattice: Lattice) -> None:
        with pytest.raises(InvalidInput):
            FrameTransportLaw(small_lattice, preset("ball", 3))

    def test_zero_deformation_is_stationary(
        self, small_lattice: Lattice, perturbed: ProfileRho
    ) -> None:
        law = FrameTransportLaw(small_lattice, perturbed)
        rate = law.rate(small_lattice.zeros(), 0.3, DIRECTION, 1.0)
        assert np.all(np.isfinite(rate))
        assert not np.any(rate)
        assert law.stable_dt(DIRECTION, 0.5) > 0

    def test_coefficients_scale_with_the_velocity(
        self, small_lattice: Lattice, perturbed: ProfileRho
    ) -> None:
        law = FrameTransportLaw(small_lattice, perturbed)
        one = law.coefficients(DIRECTION)["d"].copy()
        w = small_lattice.w[..., None]
        direct = law.algebra.evaluate(law._fns["d"], w, small_lattice.zeta, 3 * DIRECTION)
        np.testing.assert_allclose(law.coefficients(3 * DIRECTION)["d"], direct, atol=1e-12)
        np.testing.assert_allclose(direct, 3 * one, atol=1e-12)

    def test_bump_is_transported(self, small_atlas: Atlas, perturbed: ProfileRho) -> None:
        values = initial_field(small_atlas, InitialDataSpec(kind="bump", amplitude=0.05))
        rate = AtlasTransportLaw(small_atlas, perturbed).rate(values, 0.3, DIRECTION, 1.0)
        assert rate.shape == small_atlas.shape
        assert np.all(np.isfinite(rate))
        assert np.max(np.abs(rate[1])) > 1e-5

    def test_rate_does_not_depend_on_the_chart(
        self, small_grid: GridSpec, perturbed: ProfileRho
    ) -> None:
        atlas = Atlas.from_spec(small_grid.model_copy(update={"n_w": 33}), 2)
        values = global_field(atlas)
        law = AtlasTransportLaw(atlas, perturbed)
        rate = law.rate(values, 0.3, DIRECTION, 1.0)
        lat1, lat2 = atlas.lattices
        # chart 2 at w = 1 + i is chart 1 at w = (1 - i) / 2, theta shifted back by pi / 4
        i2, j2 = 24, 24
        i1, j1 = 20, 12
        assert lat2.w[i2, j2, 0, 0] == pytest.approx(1 + 1j)
        assert lat1.w[i1, j1, 0, 0] == pytest.approx(0.5 - 0.5j)
        p = to_polar([1 + 1j, 1.0], 2)
        factor = transform_to_chart(1.0, p, 1, perturbed)
        assert factor == pytest.approx(-1.0)
        expected = factor * np.roll(rate[1, i2, j2], 2, axis=-1)
        scale = float(np.max(np.abs(rate[1, i2, j2])))
        assert scale > 1e-5
        np.testing.assert_allclose(rate[0, i1, j1], expected, atol=2e-2 * scale)


class TestDeformationFlow:
    def test_rk4_is_fourth_order(
        self, single_atlas: Atlas, flow_spec: FlowSpec, linear_law: DeformationLaw
    ) -> None:
        flow = DeformationFlow(linear_law, single_atlas, flow_spec, DIRECTION, 0.0)
        phi0 = np.full(single_atlas.shape, 0.1, dtype=np.complex128)

        def error(dt: float) -> float:
            values = phi0
            for k in range(round(1 / dt)):
                values = flow.advance(values, k * dt, dt)
            return float(np.max(np.abs(values - phi0 * np.exp(2j))))

        ratio = error(0.1) / error(0.05)
        assert 12 < ratio < 20

    def test_ball_stays_undeformed(
        self, ball: ProfileRho, flow_spec: FlowSpec, monitor: RunMonitor
    ) -> None:
        report = run_to(1.0, DIRECTION, ball, flow_spec, monitor=monitor)
        assert report.terminating == "reached_one"
        assert report.s_o == 1.0
        assert report.state is not None
        assert report.state.phi.charts == (1, 2)
        assert not np.any(report.state.phi.values)
        assert report.state.monitors.margin == 1.0
        assert report.state.monitors.c_residual == 0.0
        assert report.blend_error == 0.0
        assert len(report.state.history) == 11
        assert [t for t, _ in report.margin_curve][-1] == pytest.approx(1.0)
        assert monitor.extrema()["margin"]["min"] == 1.0

    def test_perturbed_bump_run(
        self, perturbed: ProfileRho, flow_spec: FlowSpec, monitor: RunMonitor
    ) -> None:
        spec = bump_spec(flow_spec)
        report = run_to(0.3, DIRECTION, perturbed, spec, monitor=monitor)
        assert report.terminating == "reached_one"
        assert report.state is not None
        initial = report.state.history[0][1]
        final = report.state.phi.values
        assert np.max(np.abs(final - initial)) > 1e-4
        # condition (C) is carried along up to discretisation error
        assert report.state.monitors.c_residual <= report.state.monitors.sup_norm
        assert 0 < report.blend_error <= 1e-2
        assert report.to_dict()["blend_error"] == report.blend_error
        assert "blend_error" in monitor.extrema()

    def test_perturbed_run_converges_in_time(
        self, small_atlas: Atlas, perturbed: ProfileRho, flow_spec: FlowSpec
    ) -> None:
        law = AtlasTransportLaw(small_atlas, perturbed)
        flow = DeformationFlow(law, small_atlas, bump_spec(flow_spec), DIRECTION, 0.3)
        start = initial_field(small_atlas, InitialDataSpec(kind="bump", amplitude=0.05))

        def solve(dt: float) -> np.ndarray:
            values = start
            for k in range(round(0.1 / dt)):
                values = flow.advance(values, k * dt, dt)
            return values

        reference = solve(0.0025)
        coarse = float(np.max(np.abs(solve(0.01) - reference)))
        fine = float(np.max(np.abs(solve(0.005) - reference)))
        assert fine < coarse
        assert 8 <= coarse / fine <= 32

    def test_ramp_degenerates_at_known_time(
        self,
        ball: ProfileRho,
        flow_spec: FlowSpec,
        ramp_law: RampLaw,
        ramp_initial: np.ndarray,
        single_atlas: Atlas,
    ) -> None:
        report = run_to(
            1.0, DIRECTION, ball, flow_spec, law=ramp_law, initial=ramp_initial, atlas=single_atlas
        )
        expected = ramp_law.event_time(0.1, 1e-3, 1.0)
        assert expected == pytest.approx(0.59967, abs=1e-5)
        assert report.terminating == "degenerate"
        assert report.event_time == pytest.approx(expected, abs=1e-3)
        assert 0.599 <= report.s_o <= 0.601

    def test_ramp_below_frontier_reaches_one(
        self,
        ball: ProfileRho,
        flow_spec: FlowSpec,
        ramp_law: RampLaw,
        ramp_initial: np.ndarray,
        single_atlas: Atlas,
    ) -> None:
        report = run_to(
            0.5, DIRECTION, ball, flow_spec, law=ramp_law, initial=ramp_initial, atlas=single_atlas
        )
        assert report.terminating == "reached_one"
        assert report.s_o == 0.5

    def test_initial_data_must_match_the_atlas(
        self, ball: ProfileRho, flow_spec: FlowSpec, ramp_initial: np.ndarray
    ) -> None:
        with pytest.raises(InvalidInput):
            run_to(1.0, DIRECTION, ball, flow_spec, law=RampLaw(1.0), initial=ramp_initial)

    def test_degenerate_initial_data(
        self, ball: ProfileRho, flow_spec: FlowSpec, single_atlas: Atlas
    ) -> None:
        initial = np.full(single_atlas.shape, 0.9999, dtype=np.complex128)
        with pytest.raises(Degenerate):
            run_to(
                1.0,
                DIRECTION,
                ball,
                flow_spec,
                law=RampLaw(1.0),
                initial=initial,
                atlas=single_atlas,
            )

    def test_blow_up_is_unstable(
        self,
        ball: ProfileRho,
        flow_spec: FlowSpec,
        ramp_initial: np.ndarray,
        single_atlas: Atlas,
    ) -> None:
        with pytest.raises(Unstable):
            run_to(
                1.0,
                DIRECTION,
                ball,
                flow_spec,
                law=GrowthLaw(100.0),
                initial=ramp_initial,
                atlas=single_atlas,
            )


class TestFrontier:
    def test_synthetic_frontier(
        self,
        ball: ProfileRho,
        flow_spec: FlowSpec,
        ramp_law: RampLaw,
        ramp_initial: np.ndarray,
        single_atlas: Atlas,
    ) -> None:
        report = find_frontier(
            DIRECTION, ball, flow_spec, law=ramp_law, initial=ramp_initial, atlas=single_atlas
        )
        assert report.terminating == "degenerate"
        assert 0.599 <= report.s_o <= 0.601

    def test_ball_frontier_is_one(self, ball: ProfileRho, flow_spec: FlowSpec) -> None:
        report = find_frontier(DIRECTION, ball, flow_spec)
        assert report.terminating == "reached_one"
        assert report.s_o == 1.0

    def test_direction_outside_ball(self, ball: ProfileRho, flow_spec: FlowSpec) -> None:
        with pytest.raises(InvalidInput):
            find_frontier(np.array([1.0 + 0j, 0j]), ball, flow_spec)
