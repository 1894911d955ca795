import numpy as np
import pytest

from app.core.errors import ChartSingular, CoreSingular
from app.geometry.polar import (
    PolarPoint,
    chart_order,
    coordinate_fields,
    from_polar,
    select_chart,
    to_polar,
    transition,
)


def test_chart_order_puts_axis_last() -> None:
    assert chart_order(3, 1) == [1, 2, 0]
    assert chart_order(2, 2) == [0, 1]


def test_chart_order_rejects_bad_axis() -> None:
    with pytest.raises(ChartSingular):
        chart_order(2, 3)


def test_polar_coordinates_of_a_point() -> None:
    z = np.array([0.3 + 0.1j, 0.4 - 0.2j])
    p = to_polar(z, 2)
    assert p.w == pytest.approx(np.array([z[0] / z[1]]))
    assert abs(p.zeta) == pytest.approx(np.linalg.norm(z))
    assert np.angle(p.zeta) == pytest.approx(np.angle(z[1]))
    np.testing.assert_allclose(from_polar(p), z, atol=1e-14)


def test_polar_on_deleted_hyperplane() -> None:
    with pytest.raises(ChartSingular):
        to_polar([0.5, 0.0], 2)


def test_select_chart_prefers_largest_coordinate() -> None:
    assert select_chart([0.1, 0.5j]) == 2
    assert select_chart([0.5, 0.1]) == 1
    # ties go to the lowest axis
    assert select_chart([0.3, 0.3j]) == 1
    assert select_chart([0.5, 0.1], charts=[2]) == 2


def test_select_chart_at_origin() -> None:
    with pytest.raises(ChartSingular):
        select_chart([0.0, 0.0])


def test_transition_preserves_the_point() -> None:
    z = np.array([0.2 - 0.3j, 0.5 + 0.1j])
    p = to_polar(z, 2)
    q = transition(p, 1)
    assert q.chart == 1
    np.testing.assert_allclose(from_polar(q), z, atol=1e-14)
    assert transition(p, 2) is p


def test_radial_field_is_the_euler_field() -> None:
    z = np.array([0.2 - 0.3j, 0.5 + 0.1j])
    fields = coordinate_fields(to_polar(z, 2))
    np.testing.assert_allclose(fields[:2, 0], z, atol=1e-14)
    np.testing.assert_allclose(fields[2:, 0], 0, atol=1e-14)
    np.testing.assert_allclose(fields[2:, 2], z.conj(), atol=1e-14)


def test_fiber_derivative_matches_finite_differences() -> None:
    p = to_polar(np.array([0.2 - 0.3j, 0.5 + 0.1j]), 2)
    h = 1e-6

    def shifted(dw: complex) -> np.ndarray:
        return from_polar(PolarPoint(chart=2, w=p.w + dw, zeta=p.zeta))

    dx = (shifted(h) - shifted(-h)) / (2 * h)
    dy = (shifted(1j * h) - shifted(-1j * h)) / (2 * h)
    d_w = 0.5 * (dx - 1j * dy)
    np.testing.assert_allclose(coordinate_fields(p)[:2, 1], d_w, atol=1e-8)


def test_coordinate_fields_on_core() -> None:
    with pytest.raises(CoreSingular):
        coordinate_fields(PolarPoint(chart=2, w=np.array([0.1j]), zeta=0j))
