from __future__ import annotations

from typing import Any


class SpglsError(Exception):
    """Base class for all errors raised by pyspgls."""


class InvalidArgumentError(SpglsError, ValueError):
    pass


class DegenerateApexError(SpglsError, ArithmeticError):
    """The sphere point sits on the pole of the inverse variable map.

    The objective value at that point is kept so that callers may still report
    it, even though no finite predictor corresponds to it.
    """

    def __init__(self, msg: str, value: float, alpha_tilde: float) -> None:
        super().__init__(msg)
        self.value = value
        self.alpha_tilde = alpha_tilde


class NumericalFailureError(SpglsError, RuntimeError):
    def __init__(self, msg: str, **state: Any) -> None:
        super().__init__(msg)
        self.state = state


class CenteredProblemError(SpglsError, ValueError):
    """Linear term vanishes: the minimizer is an eigenvector, not in any
    Krylov space built from g. Use :func:`pyspgls.oracle.oracle_solve`."""


class LanczosStateError(SpglsError, RuntimeError):
    pass


class ProblemSizeError(SpglsError, ValueError):
    pass


class EmptyMatrixError(SpglsError, ValueError):
    pass


class EigenDecompositionError(SpglsError, RuntimeError):
    pass


class DataFormatError(SpglsError, ValueError):
    """Malformed input file.

    ``row`` and ``col`` are 1-based data row and column numbers (CSV files,
    header excluded), ``line`` is a 1-based line number (libsvm files).
    """

    def __init__(
        self,
        msg: str,
        *,
        row: None | int = None,
        col: None | int = None,
        line: None | int = None,
    ) -> None:
        super().__init__(msg)
        self.row = row
        self.col = col
        self.line = line


class ReportSchemaError(SpglsError, ValueError):
    """A report does not match the shipped schema; ``path`` locates the
    offending member, e.g. ``$.runs[3].report.matvecs``."""

    def __init__(self, msg: str, path: str = "$") -> None:
        super().__init__(f"{path}: {msg}")
        self.path = path
