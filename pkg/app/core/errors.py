from typing import Any


class ExhaustionError(Exception):
    """Base class for every failure raised by the engine.

    ``exit_code`` is what the command line reports when the error escapes a
    subcommand: 1 for run-level failures, 2 for invalid input.
    """

    exit_code: int = 1

    def __init__(self, message: str, details: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_payload(self) -> dict[str, Any]:
        return {
            "code": type(self).__name__,
            "message": self.message,
            "details": self.details,
        }


class InvalidInput(ExhaustionError):
    exit_code = 2


class NotPseudoconvex(InvalidInput):
    """The profile's metric g is not positive definite somewhere on the grid."""


class ChartSingular(ExhaustionError):
    """The point lies on the hyperplane deleted by the requested chart."""


class CoreSingular(ExhaustionError):
    """Frame quantities requested on the exceptional divisor (zeta = 0)."""


class Degenerate(ExhaustionError):
    """det(I - conj(phi) phi) fell to the degeneracy threshold."""


class Unstable(ExhaustionError):
    """The discrete evolution blew up or produced non-monotone frontier data."""


class PoleCollision(ExhaustionError):
    """A transported trajectory ran into the moving center."""


class NoConvergence(ExhaustionError):
    """An extrapolation or bisection failed its own consistency check."""
