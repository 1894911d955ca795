import pytest

from app.core.errors import (
    Degenerate,
    ExhaustionError,
    InvalidInput,
    NoConvergence,
    NotPseudoconvex,
    PoleCollision,
)


def test_payload() -> None:
    exc = Degenerate("det fell below the margin", {"t": 0.6})
    assert exc.to_payload() == {
        "code": "Degenerate",
        "message": "det fell below the margin",
        "details": {"t": 0.6},
    }
    assert str(exc) == "det fell below the margin"


def test_details_default_to_empty() -> None:
    assert NoConvergence("no").details == {}


@pytest.mark.parametrize(
    ("error", "code"),
    [(InvalidInput, 2), (NotPseudoconvex, 2), (Degenerate, 1), (PoleCollision, 1)],
)
def test_exit_codes(error: type[ExhaustionError], code: int) -> None:
    assert error("x").exit_code == code
