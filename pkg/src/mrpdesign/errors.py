from typing import Any, Dict, Optional

from .data import EXIT_DATA, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE, EXIT_USAGE


class MrpError(Exception):
    """Base class for `mrpdesign` errors.

    Each subclass carries the process exit code the command line uses for it, and
    :meth:`to_dict` renders the machine-readable error document.
    """

    exit_code: int = EXIT_DATA

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "exit_code": self.exit_code,
        }


class ConfigError(MrpError, ValueError):
    """Invalid configuration, command-line usage or window parameters."""

    exit_code = EXIT_USAGE


class DataError(MrpError, ValueError):
    """Invalid input data. Optionally cites the 1-based data row and column."""

    def __init__(
        self, message: str, row: Optional[int] = None, column: Optional[str] = None
    ):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} (at {', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column

    def to_dict(self) -> Dict[str, Any]:
        doc = super().to_dict()
        doc.update({"row": self.row, "column": self.column})
        return doc


class DegenerateMomentsError(DataError):
    """The lag-0 moment matrix is (numerically) singular."""


class ZeroObjectiveError(MrpError, ValueError):
    """Every lag moment is zero, so the portmanteau objective is identically 0."""


class SharpeUndefinedError(MrpError, ValueError):
    """The ROI series has zero standard deviation."""


class InfeasibleVarianceError(MrpError, ValueError):
    """The requested variance level is below the minimum on the budget hyperplane."""

    exit_code = EXIT_INFEASIBLE

    def __init__(self, nu: float, nu_min: float):
        super().__init__(
            f"Variance level nu={nu!r} is infeasible. "
            + f"The minimum variance on the budget hyperplane is nu_min={nu_min!r}."
        )
        self.nu = nu
        self.nu_min = nu_min

    def to_dict(self) -> Dict[str, Any]:
        doc = super().to_dict()
        doc.update({"nu": self.nu, "nu_min": self.nu_min})
        return doc


class NotPositiveDefiniteError(MrpError, ArithmeticError):
    """A matrix required to be positive definite failed its Cholesky factorization."""

    exit_code = EXIT_NONCONVERGENCE


class NumericalFailureError(MrpError, ArithmeticError):
    """A numerical procedure exceeded its iteration budget."""

    exit_code = EXIT_NONCONVERGENCE


class GtrsHardCaseError(MrpError, ArithmeticError):
    """The GTRS root lies on the boundary of its interval and cannot be completed."""

    exit_code = EXIT_NONCONVERGENCE

    def __init__(self, message: str, iteration: Optional[int] = None):
        if iteration is not None:
            message = f"{message} (MM iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration

    def to_dict(self) -> Dict[str, Any]:
        doc = super().to_dict()
        doc["iteration"] = self.iteration
        return doc


class NonConvergenceError(MrpError, ArithmeticError):
    """The MM loop stopped at its iteration cap without meeting a stopping test."""

    exit_code = EXIT_NONCONVERGENCE
