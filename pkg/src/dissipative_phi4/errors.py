"""Exception types shared across modules."""
from __future__ import annotations


class Phi4Error(Exception):
    """Base class; ``code`` is a short machine-readable tag."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ParameterError(Phi4Error, ValueError):
    code = "parameter"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["field"] = self.field
        return d


class PoleProximity(Phi4Error, ArithmeticError):
    code = "pole_proximity"


class UnboundLabel(Phi4Error, KeyError):
    code = "unbound_label"

    def __str__(self):
        return self.args[0] if self.args else "unbound label"


class NonConvergence(Phi4Error, RuntimeError):
    code = "non_convergence"


class PoleInDimension(Phi4Error, ArithmeticError):
    code = "pole_in_dimension"


class ThresholdViolation(Phi4Error, ValueError):
    code = "threshold"


class FitFailure(Phi4Error, RuntimeError):
    code = "fit_failure"


class DimensionOverflow(Phi4Error, MemoryError):
    code = "dimension_overflow"
