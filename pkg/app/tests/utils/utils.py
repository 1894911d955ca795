import json
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import pytest

from app.deformation.lattice import Atlas

ComplexArray = npt.NDArray[np.complex128]


def random_ball_point(rng: np.random.Generator, n: int = 2, radius: float = 0.9) -> ComplexArray:
    g = rng.normal(size=n) + 1j * rng.normal(size=n)
    return radius * rng.random() ** (1.0 / (2 * n)) * g / np.linalg.norm(g)


def small_run_config(**overrides: Any) -> dict[str, Any]:
    config: dict[str, Any] = {
        "profile": {"preset": "ball"},
        "direction": [0.5, 0.0, 0.0, 0.0],
        "s": 0.0,
        "flow": {
            "grid": {"n_w": 17, "n_r": 9, "n_theta": 16, "w_box": 2.0, "r_min": 0.2},
            "dt": 0.05,
        },
        "green": {"points": [[0.0, 0.0, 0.0, 0.0], [0.3, 0.1, 0.2, -0.1], [0.5, 0.0, 0.0, 0.0]]},
        "verify": {
            "identity_points": 5,
            "ma_points": 3,
            "lie_points": 2,
            "hessian_step": 1e-3,
            "ma_threshold": 1e-3,
        },
    }
    config.update(overrides)
    return config


def write_config(directory: Path, name: str = "config.json", **overrides: Any) -> Path:
    path = directory / name
    path.write_text(json.dumps(small_run_config(**overrides), indent=2))
    return path


def global_field(atlas: Atlas, c: float = 0.1) -> ComplexArray:
    """c w^2 / (1 + |w|^2)^2: the same zeta-free tensor read on both charts of CP^1."""
    out = atlas.zeros()
    for index, lat in enumerate(atlas.lattices):
        w = lat.w
        out[index] = np.broadcast_to(c * w**2 / (1 + np.abs(w) ** 2) ** 2, lat.shape)
    return out


FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def frozen(name: str, values: dict[str, Any], rel: float = 1e-6) -> None:
    """Compare ``values`` with the stored regression fixture; record it on first use."""
    path = FIXTURES / name
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(values, indent=2, sort_keys=True))
        pytest.skip(f"recorded regression fixture {path.name}")
    expected = json.loads(path.read_text())
    assert sorted(values) == sorted(expected)
    for key, value in expected.items():
        if isinstance(value, str):
            assert values[key] == value, key
        else:
            assert values[key] == pytest.approx(value, rel=rel, abs=1e-12), key
