"""Generalized polar coordinates (w, zeta) on C^n minus a coordinate hyperplane.

Chart ``axis`` (1-based) deletes {z^axis = 0}. Inside it

    w^alpha = z^alpha / z^axis      (remaining indices in increasing order)
    zeta    = |z| z^axis / |z^axis|

so that |zeta| = |z|, and the inverse is z = zeta / sqrt(1 + |w|^2) (w, 1)
with the axis coordinate moved back into place.
"""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from app.core.errors import ChartSingular, CoreSingular


ComplexArray = npt.NDArray[np.complex128]


@dataclass(frozen=True)
class PolarPoint:
    chart: int
    w: ComplexArray
    zeta: complex

    @property
    def n(self) -> int:
        return len(self.w) + 1


def chart_order(n: int, axis: int) -> list[int]:
    """Ambient indices (0-based) listed in chart order: axis last."""
    if not 1 <= axis <= n:
        raise ChartSingular(f"chart axis {axis} outside 1..{n}")
    k = axis - 1
    return [i for i in range(n) if i != k] + [k]


def as_point(z: Sequence[complex] | ComplexArray) -> ComplexArray:
    return np.asarray(z, dtype=np.complex128)


def to_polar(z: Sequence[complex] | ComplexArray, chart: int) -> PolarPoint:
    z = as_point(z)
    n = len(z)
    order = chart_order(n, chart)
    zc = z[order]
    axis_value = zc[-1]
    if axis_value == 0:
        raise ChartSingular(
            f"z^{chart} = 0: point lies on the deleted hyperplane",
            {"chart": chart, "z": [str(c) for c in z]},
        )
    w = zc[:-1] / axis_value
    zeta = np.linalg.norm(z) * axis_value / abs(axis_value)
    return PolarPoint(chart=chart, w=w, zeta=complex(zeta))


def from_polar(p: PolarPoint) -> ComplexArray:
    w = np.asarray(p.w, dtype=np.complex128)
    n = len(w) + 1
    scale = p.zeta / np.sqrt(1.0 + np.vdot(w, w).real)
    zc = np.empty(n, dtype=np.complex128)
    zc[:-1] = scale * w
    zc[-1] = scale
    z = np.empty(n, dtype=np.complex128)
    z[chart_order(n, p.chart)] = zc
    return z


def select_chart(z: Sequence[complex] | ComplexArray, charts: Iterable[int] | None = None) -> int:
    """Axis maximizing |z^i| among the allowed charts; ties go to the lowest axis."""
    z = as_point(z)
    allowed = sorted(charts) if charts is not None else list(range(1, len(z) + 1))
    best = max(allowed, key=lambda axis: (abs(z[axis - 1]), -axis))
    if z[best - 1] == 0:
        raise ChartSingular("no admissible chart contains the point", {"charts": allowed})
    return best


def transition(p: PolarPoint, chart: int) -> PolarPoint:
    if chart == p.chart:
        return p
    return to_polar(from_polar(p), chart)


def coordinate_fields(p: PolarPoint) -> ComplexArray:
    """Matrix of the polar coordinate fields in ambient components.

    Columns are the inputs ``[zeta d_zeta, d_w^1..d_w^m, conj(zeta) d_conj(zeta),
    d_conj(w)^1..]`` and rows the outputs ``[d_z^1..d_z^n, d_conj(z)^1..]``,
    both in ambient index order (m = n - 1).
    """
    if p.zeta == 0:
        raise CoreSingular("coordinate fields are singular at zeta = 0")
    w = np.asarray(p.w, dtype=np.complex128)
    m = len(w)
    n = m + 1
    order = chart_order(n, p.chart)
    zc = from_polar(p)[order]
    zcb = zc.conj()
    c = 0.5 * w.conj() / (1.0 + np.vdot(w, w).real)

    local = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    local[:n, 0] = zc
    local[n:, n] = zcb
    for a in range(m):
        col = -c[a] * np.concatenate([zc, zcb])
        col[a] += zc[-1]
        local[:, 1 + a] = col
        colb = -np.conj(c[a]) * np.concatenate([zc, zcb])
        colb[n + a] += zcb[-1]
        local[:, n + 1 + a] = colb

    # rows are in chart order; move them back to ambient order
    out = np.empty_like(local)
    out[order, :] = local[:n, :]
    out[[n + i for i in order], :] = local[n:, :]
    return out
