"""Synthetic evolution laws with closed-form solutions."""

import numpy as np
import numpy.typing as npt

from app.deformation.laws import DeformationLaw

ComplexArray = npt.NDArray[np.complex128]


class RampLaw(DeformationLaw):
    """d(phi)/dt = rate_per_s * s: phi grows linearly and degenerates at a known time."""

    def __init__(self, rate_per_s: float) -> None:
        self.rate_per_s = rate_per_s

    def rate(self, phi: ComplexArray, t: float, velocity: ComplexArray, s: float) -> ComplexArray:
        return np.full_like(phi, self.rate_per_s * s)

    def event_time(self, phi0: float, eps_deg: float, s: float) -> float:
        return (np.sqrt(1.0 - eps_deg) - phi0) / (self.rate_per_s * s)


class LinearLaw(DeformationLaw):
    """d(phi)/dt = i kappa phi."""

    def __init__(self, kappa: float) -> None:
        self.kappa = kappa

    def rate(self, phi: ComplexArray, t: float, velocity: ComplexArray, s: float) -> ComplexArray:
        return 1j * self.kappa * phi


class GrowthLaw(DeformationLaw):
    def __init__(self, factor: float) -> None:
        self.factor = factor

    def rate(self, phi: ComplexArray, t: float, velocity: ComplexArray, s: float) -> ComplexArray:
        return self.factor * phi
