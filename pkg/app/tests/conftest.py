from collections.abc import Generator

import numpy as np
import pytest

from app.core.monitoring import RunMonitor
from app.deformation.lattice import Atlas, Lattice
from app.deformation.laws import DeformationLaw
from app.geometry.profile import ProfileRho, preset
from app.models import FlowSpec, GridSpec, ToleranceSpec
from app.tests.utils.laws import LinearLaw, RampLaw


@pytest.fixture(scope="session")
def ball() -> ProfileRho:
    return preset("ball", 2)


@pytest.fixture(scope="session")
def perturbed() -> ProfileRho:
    return preset("perturbed", 2, 0.2)


@pytest.fixture(scope="session")
def small_grid() -> GridSpec:
    return GridSpec(n_w=17, n_r=9, n_theta=16, w_box=2.0, r_min=0.2)


@pytest.fixture(scope="session")
def small_lattice(small_grid: GridSpec) -> Lattice:
    return Lattice.from_spec(small_grid, chart=2)


@pytest.fixture(scope="session")
def small_atlas(small_grid: GridSpec) -> Atlas:
    return Atlas.from_spec(small_grid, 2)


@pytest.fixture(scope="session")
def single_atlas(small_lattice: Lattice) -> Atlas:
    return Atlas.single(small_lattice)


@pytest.fixture
def flow_spec(small_grid: GridSpec) -> FlowSpec:
    return FlowSpec(
        grid=small_grid,
        tolerances=ToleranceSpec(eps_deg=1e-3, t_bisect=1e-3, s_bisect=1e-2),
        checkpoint_dt=0.1,
        dt=0.01,
    )


@pytest.fixture
def ramp_law() -> DeformationLaw:
    return RampLaw(rate_per_s=1.5)


@pytest.fixture
def linear_law() -> DeformationLaw:
    return LinearLaw(kappa=2.0)


@pytest.fixture
def ramp_initial(single_atlas: Atlas) -> np.ndarray:
    return np.full(single_atlas.shape, 0.1, dtype=np.complex128)


@pytest.fixture
def monitor() -> Generator[RunMonitor, None, None]:
    yield RunMonitor()
