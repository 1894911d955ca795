import json
import math
from pathlib import Path

import numpy as np
import pytest

from app.core.errors import CoreSingular, InvalidInput, NotPseudoconvex
from app.geometry.polar import PolarPoint, to_polar
from app.geometry.profile import (
    ProfileRho,
    frame_vectors,
    indicatrix_contains,
    indicatrix_metric,
    levi_form,
    load_profile,
    metric_coeffs,
    minkowski,
    potential_hessian_fd,
    preset,
    rho_eval,
    straighten,
    unstraighten,
    validate_profile,
)


def test_ball_preset_covers_every_chart(ball: ProfileRho) -> None:
    assert ball.is_ball
    assert ball.charts == (1, 2)
    assert rho_eval(ball, [0.3 + 0.2j], chart=1).value == 0.0


def test_perturbed_preset_covers_both_charts(perturbed: ProfileRho) -> None:
    assert not perturbed.is_ball
    assert perturbed.charts == (1, 2)
    assert perturbed.denominator_power == 1
    w = 1.0 + 0.5j
    s = 1 + abs(w) ** 2
    d = rho_eval(perturbed, [w], order=2)
    assert float(d.value) == pytest.approx(0.2 * w.real / s)
    assert d.dw[0] == pytest.approx(0.2 * (1 / (2 * s) - w.real * w.conjugate() / s**2))
    assert d.dwb[0] == pytest.approx(np.conj(d.dw[0]))
    assert d.hess_wwb[0, 0] == pytest.approx(-0.2 * 2 * w.real / s**3)


def test_perturbed_charts_agree(perturbed: ProfileRho) -> None:
    z = np.array([0.3 - 0.2j, 0.5 + 0.1j])
    values = [float(rho_eval(perturbed, to_polar(z, c).w, chart=c).value) for c in (1, 2)]
    expected = 0.2 * (z[0] * z[1].conjugate()).real / np.vdot(z, z).real
    np.testing.assert_allclose(values, [expected, expected], atol=1e-14)


def test_perturbed_without_epsilon_is_the_ball() -> None:
    assert preset("perturbed", 2, 0.0).is_ball


def test_unknown_preset() -> None:
    with pytest.raises(InvalidInput):
        preset("ellipsoid", 2)


def test_metric_of_the_ball_at_the_chart_origin(ball: ProfileRho) -> None:
    data = metric_coeffs(ball, [0j])
    np.testing.assert_allclose(data.g, [[1.0]])
    np.testing.assert_allclose(data.h, [[0.0]])
    assert data.min_eigenvalue == pytest.approx(1.0)


def test_perturbation_rescales_fubini_study(ball: ProfileRho, perturbed: ProfileRho) -> None:
    w = 0.7 - 1.1j
    s = 1 + abs(w) ** 2
    fubini_study = metric_coeffs(ball, [w]).g[0, 0]
    assert fubini_study.real == pytest.approx(1 / s**2)
    # g = (1 - 2 eps Re(w) / (1 + |w|^2)) times the Fubini-Study metric
    expected = (1 - 2 * 0.2 * w.real / s) * fubini_study
    assert metric_coeffs(perturbed, [w]).g[0, 0] == pytest.approx(expected)


def test_metric_matches_finite_differences(perturbed: ProfileRho) -> None:
    w = [0.4 + 0.9j]
    np.testing.assert_allclose(
        potential_hessian_fd(perturbed, w), metric_coeffs(perturbed, w).g, atol=1e-6
    )


def test_levi_form_is_positive(perturbed: ProfileRho) -> None:
    p = to_polar([0.2 + 0.1j, 0.5], 2)
    levi = levi_form(perturbed, p)
    assert (levi / 2j)[0, 0].real > 0


def test_frame_on_core_is_singular(ball: ProfileRho) -> None:
    with pytest.raises(CoreSingular):
        frame_vectors(ball, PolarPoint(chart=2, w=np.array([0j]), zeta=0j))


def test_minkowski_functional(ball: ProfileRho, perturbed: ProfileRho) -> None:
    z = np.array([0.3, 0.4])
    assert minkowski(ball, z) == pytest.approx(0.5)
    # log rho^2 = 0.2 * 0.12 / 0.25
    assert minkowski(perturbed, z) == pytest.approx(0.5 * math.exp(0.048))
    assert minkowski(perturbed, 2j * z) == pytest.approx(2 * minkowski(perturbed, z))
    assert minkowski(ball, [0, 0]) == 0.0


def test_minkowski_off_the_last_chart(perturbed: ProfileRho) -> None:
    assert minkowski(perturbed, [0.3, 0]) == pytest.approx(0.3)
    assert minkowski(perturbed, [0, -0.7j]) == pytest.approx(0.7)


def test_perturbed_indicatrix_is_bounded(perturbed: ProfileRho) -> None:
    rng = np.random.default_rng(3)
    points = [rng.normal(size=2) + 1j * rng.normal(size=2) for _ in range(20)]
    for z in [np.array([-50.0, 1.0]), *points]:
        ratio = minkowski(perturbed, z) / np.linalg.norm(z)
        assert math.exp(-0.05) - 1e-12 <= ratio <= math.exp(0.05) + 1e-12


def test_indicatrix(perturbed: ProfileRho) -> None:
    u = np.array([0.0, 0.9])
    assert indicatrix_metric(perturbed, u) == pytest.approx(0.9)
    assert indicatrix_contains(perturbed, u)
    assert not indicatrix_contains(perturbed, 1.2 * u)


def test_straightening_is_inverted(perturbed: ProfileRho) -> None:
    z = np.array([0.3 - 0.2j, 0.5 + 0.1j])
    y = straighten(perturbed, z)
    assert np.linalg.norm(y) == pytest.approx(minkowski(perturbed, z))
    np.testing.assert_allclose(unstraighten(perturbed, y), z, atol=1e-14)


def test_load_profile_from_mapping() -> None:
    rows = [[[1], [0], 0.05, 0.0, chart] for chart in (1, 2)]
    rows += [[[0], [1], 0.05, 0.0, chart] for chart in (1, 2)]
    rho = load_profile({"n": 2, "denominator_power": 1, "coefficients": rows})
    assert rho.charts == (1, 2)
    assert float(rho_eval(rho, [1.0]).value) == pytest.approx(0.05)
    assert minkowski(rho, [0.3, 0]) == pytest.approx(0.3)


def test_profile_without_far_chart_is_unbounded() -> None:
    # eps Re(w) on the last chart alone: mu(-50, 1) tends to 0 along that line
    data = {"n": 2, "coefficients": [[[1], [0], 0.1, 0.0], [[0], [1], 0.1, 0.0]]}
    with pytest.raises(InvalidInput) as exc_info:
        load_profile(data)
    assert exc_info.value.details["missing"] == [1]
    assert "unbounded" in exc_info.value.message


def test_preset_and_coefficients_share_the_denominator() -> None:
    data = {
        "n": 2,
        "preset": "perturbed",
        "epsilon": 0.1,
        "coefficients": [[[1], [1], 0.01, 0.0]],
    }
    with pytest.raises(InvalidInput):
        load_profile(data)


def test_load_profile_reports_json_position(tmp_path: Path) -> None:
    path = tmp_path / "profile.json"
    path.write_text('{\n  "n": 2,\n  "preset": \n}\n')
    with pytest.raises(InvalidInput) as exc_info:
        load_profile(path)
    assert exc_info.value.details["line"] == 4
    assert "profile.json:4" in exc_info.value.message


def test_load_profile_reports_field_path() -> None:
    with pytest.raises(InvalidInput) as exc_info:
        load_profile({"n": 2, "preset": "perturbed", "epsilon": 0.5})
    assert exc_info.value.details["errors"]


def test_missing_profile_file(tmp_path: Path) -> None:
    with pytest.raises(InvalidInput):
        load_profile(tmp_path / "absent.json")


def test_non_real_coefficients_are_rejected() -> None:
    with pytest.raises(InvalidInput):
        load_profile({"n": 2, "coefficients": [[[1], [0], 0.1, 0.0]]})


def test_non_pseudoconvex_profile() -> None:
    with pytest.raises(NotPseudoconvex):
        load_profile({"n": 2, "coefficients": [[[1], [1], -2.0, 0.0]]})


def test_validation_report(perturbed: ProfileRho) -> None:
    report = validate_profile(perturbed, w_box=4.0, n_grid=17)
    # worst grid point is a corner w = 4 +- 4i: Fubini-Study 1/33^2 shrunk by 1 - 0.4 * 4/33
    assert report.min_eigenvalue == pytest.approx((1 - 1.6 / 33) / 33**2)
    assert report.worst_chart in (1, 2)
    assert report.consistency_error <= 1e-12
    assert 1.0 < report.indicatrix_radius <= math.exp(0.05)


def test_ball_indicatrix_is_the_unit_sphere(ball: ProfileRho) -> None:
    assert validate_profile(ball).indicatrix_radius == pytest.approx(1.0)


def test_inconsistent_charts_are_rejected() -> None:
    data = {
        "n": 2,
        "coefficients": [
            [[1], [1], 0.1, 0.0, 1],
            [[1], [1], 0.3, 0.0, 2],
        ],
    }
    with pytest.raises(InvalidInput):
        load_profile(data)


def test_profile_key_is_stable() -> None:
    assert preset("perturbed", 2, 0.1).key() == preset("perturbed", 2, 0.1).key()
    assert preset("perturbed", 2, 0.1).key() != preset("perturbed", 2, 0.2).key()
    assert json.loads(preset("ball").key())["every_chart"] is True
