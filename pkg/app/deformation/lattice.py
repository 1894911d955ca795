"""The (w, r, theta) annulus lattice of a chart, its derivative stencils and the
two-chart atlas of CP^1.

Arrays over the lattice have shape (n_w, n_w, n_r, n_theta): Re w, Im w,
r = |zeta| on [r_min, 1] and arg zeta on a periodic Fourier grid.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy.interpolate import make_interp_spline

from app.core.errors import ChartSingular, InvalidInput
from app.geometry.polar import PolarPoint
from app.models import GridSpec

ComplexArray = npt.NDArray[np.complex128]
FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class Lattice:
    n_w: int
    n_r: int
    n_theta: int
    w_box: float
    r_min: float
    chart: int = 2

    @classmethod
    def from_spec(cls, grid: GridSpec, chart: int = 2) -> "Lattice":
        return cls(
            n_w=grid.n_w,
            n_r=grid.n_r,
            n_theta=grid.n_theta,
            w_box=grid.w_box,
            r_min=grid.r_min,
            chart=chart,
        )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n_w, self.n_w, self.n_r, self.n_theta)

    @cached_property
    def x(self) -> FloatArray:
        return np.linspace(-self.w_box, self.w_box, self.n_w)

    @cached_property
    def r(self) -> FloatArray:
        return np.linspace(self.r_min, 1.0, self.n_r)

    @cached_property
    def theta(self) -> FloatArray:
        return 2 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def h_w(self) -> float:
        return 2 * self.w_box / (self.n_w - 1)

    @property
    def h_r(self) -> float:
        return (1.0 - self.r_min) / (self.n_r - 1)

    @property
    def h_theta(self) -> float:
        return 2 * np.pi / self.n_theta

    @cached_property
    def w(self) -> ComplexArray:
        """Chart coordinate broadcastable over lattice arrays, shape (n_w, n_w, 1, 1)."""
        x, y = np.meshgrid(self.x, self.x, indexing="ij")
        return (x + 1j * y)[:, :, None, None]

    @cached_property
    def zeta(self) -> ComplexArray:
        """zeta broadcastable over lattice arrays, shape (n_r, n_theta)."""
        return self.r[:, None] * np.exp(1j * self.theta)[None, :]

    @cached_property
    def radius(self) -> FloatArray:
        return self.r[None, None, :, None]

    def zeros(self) -> ComplexArray:
        return np.zeros(self.shape, dtype=np.complex128)

    # --- derivatives ---------------------------------------------------------------

    def d_theta(self, f: ComplexArray) -> ComplexArray:
        k = np.fft.fftfreq(self.n_theta, d=1.0 / self.n_theta)
        k[self.n_theta // 2] = 0.0
        return np.fft.ifft(1j * k * np.fft.fft(f, axis=-1), axis=-1)

    def d_r(self, f: ComplexArray) -> ComplexArray:
        return fd4(f, self.h_r, axis=-2)

    def d_x(self, f: ComplexArray) -> ComplexArray:
        return fd4(f, self.h_w, axis=-4)

    def d_y(self, f: ComplexArray) -> ComplexArray:
        return fd4(f, self.h_w, axis=-3)

    def z_op(self, f: ComplexArray) -> ComplexArray:
        """zeta d_zeta = (r d_r - i d_theta) / 2."""
        return 0.5 * (self.radius * self.d_r(f) - 1j * self.d_theta(f))

    def zbar_op(self, f: ComplexArray) -> ComplexArray:
        return 0.5 * (self.radius * self.d_r(f) + 1j * self.d_theta(f))

    def d_w(self, f: ComplexArray) -> ComplexArray:
        return 0.5 * (self.d_x(f) - 1j * self.d_y(f))

    def d_wbar(self, f: ComplexArray) -> ComplexArray:
        return 0.5 * (self.d_x(f) + 1j * self.d_y(f))

    def filter_theta(self, f: ComplexArray) -> ComplexArray:
        """Two-thirds rule: drop angular modes with |k| > n_theta / 3."""
        k = np.abs(np.fft.fftfreq(self.n_theta, d=1.0 / self.n_theta))
        keep = k <= self.n_theta / 3
        return np.fft.ifft(np.fft.fft(f, axis=-1) * keep, axis=-1)


def fd4(f: ComplexArray, h: float, axis: int) -> ComplexArray:
    """Fourth-order first derivative; one-sided fourth-order stencils at both ends."""
    f = np.moveaxis(np.asarray(f), axis, 0)
    out = np.empty_like(f)
    out[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)
    out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    out[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    out[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return np.moveaxis(out, 0, axis)


# --- two-chart atlas -------------------------------------------------------------------


def frame_factor(w_src: ComplexArray | complex) -> ComplexArray:
    """Multiplier taking phi from the chart with coordinate ``w_src`` to the other chart (n = 2)."""
    w_src = np.asarray(w_src, dtype=np.complex128)
    return (w_src.conj() / w_src) ** 2


def partition_weight(w: ComplexArray | complex, w_box: float) -> FloatArray:
    """Smoothstep cutoff in |w|: 1 on the unit disc, 0 from |w| = w_box on."""
    x = np.clip((w_box - np.abs(w)) / (w_box - 1.0), 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass(frozen=True)
class Atlas:
    """Chart lattices covering CP^1; atlas arrays carry a leading chart axis."""

    lattices: tuple[Lattice, ...]

    @classmethod
    def from_spec(cls, grid: GridSpec, n: int = 2) -> "Atlas":
        if n != 2:
            raise InvalidInput("lattice atlases are built for n = 2", {"n": n})
        if grid.w_box <= 1.0:
            raise InvalidInput(
                "w_box must exceed 1 so that the two charts overlap", {"w_box": grid.w_box}
            )
        return cls((Lattice.from_spec(grid, chart=1), Lattice.from_spec(grid, chart=2)))

    @classmethod
    def single(cls, lattice: Lattice) -> "Atlas":
        return cls((lattice,))

    @property
    def charts(self) -> tuple[int, ...]:
        return tuple(lat.chart for lat in self.lattices)

    @property
    def lattice(self) -> Lattice:
        return self.lattices[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return (len(self.lattices), *self.lattice.shape)

    def zeros(self) -> ComplexArray:
        return np.zeros(self.shape, dtype=np.complex128)

    def point_weight(self, w: ComplexArray | complex) -> FloatArray:
        """Unnormalised partition weight of a chart at coordinate ``w``."""
        lat = self.lattice
        if len(self.lattices) == 1:
            inside = (np.abs(np.real(w)) <= lat.w_box) & (np.abs(np.imag(w)) <= lat.w_box)
            return np.asarray(inside, dtype=np.float64)
        return partition_weight(w, lat.w_box)

    def weights(self, index: int) -> FloatArray:
        """Normalised weight of chart ``index`` on its own lattice, shape (n_w, n_w)."""
        w = self.lattices[index].w[:, :, 0, 0]
        own = self.point_weight(w)
        if len(self.lattices) == 1:
            return own
        with np.errstate(divide="ignore"):
            other = np.where(w == 0, 0.0, self.point_weight(1.0 / np.where(w == 0, 1.0, w)))
        return own / (own + other)

    def seen_from(self, index: int, field: ComplexArray, w: ComplexArray) -> ComplexArray:
        """The other chart's ``field`` at points ``w`` of chart ``index``, in this chart's frame."""
        other = self.lattices[1 - index]
        w_o = 1.0 / w
        along_x = make_interp_spline(other.x, field, k=3, axis=0)(w_o.real)
        values = np.stack(
            [
                make_interp_spline(other.x, along_x[j], k=3, axis=0)(w_o[j].imag)
                for j in range(len(w_o))
            ]
        )
        # zeta' = zeta w / |w|: theta on the other chart is shifted by arg w
        k = np.fft.fftfreq(other.n_theta, d=1.0 / other.n_theta)
        shift = np.exp(1j * np.outer(np.angle(w), k))[:, None, :]
        values = np.fft.ifft(np.fft.fft(values, axis=-1) * shift, axis=-1)
        return frame_factor(w_o)[:, None, None] * values

    def blend(self, values: ComplexArray) -> tuple[ComplexArray, float]:
        """Mix every chart with its neighbour on the overlap; returns the largest mismatch there."""
        if len(self.lattices) == 1:
            return values, 0.0
        out = values.copy()
        error = 0.0
        for index, lat in enumerate(self.lattices):
            lam = self.weights(index)
            mask = lam < 1.0
            if not np.any(mask):
                continue
            seen = self.seen_from(index, values[1 - index], lat.w[:, :, 0, 0][mask])
            mine = values[index][mask]
            overlap = lam[mask] > 0
            if np.any(overlap):
                error = max(error, float(np.max(np.abs(mine[overlap] - seen[overlap]))))
            share = lam[mask][:, None, None]
            out[index][mask] = share * mine + (1.0 - share) * seen
        return out, error


def swap_chart(p: PolarPoint) -> PolarPoint:
    """The same point on the other chart of CP^1: w -> 1/w, zeta -> zeta w / |w|."""
    if p.n != 2:
        raise InvalidInput("chart swaps are defined for n = 2")
    w = complex(p.w[0])
    if w == 0:
        raise ChartSingular("w = 0 is the deleted hyperplane of the other chart")
    return PolarPoint(chart=3 - p.chart, w=np.array([1.0 / w]), zeta=p.zeta * w / abs(w))
