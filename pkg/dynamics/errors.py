"""Exception hierarchy shared by the numerical modules and the command line."""

from typing import Iterable, List, Optional


class LabError(Exception):
    """Base class for every error raised deliberately by the laboratory."""


class ConfigError(LabError, ValueError):
    """Invalid configuration; carries every violation found, not just the first."""

    def __init__(self, violations: Iterable[str]):
        if isinstance(violations, str):
            violations = [violations]
        self.violations: List[str] = list(violations)
        super().__init__("; ".join(self.violations) or "invalid configuration")


class NumericalError(LabError, ArithmeticError):
    """A computation produced or received values it cannot work with."""


class NearDefectiveError(NumericalError):
    def __init__(self, residual: float, message: Optional[str] = None):
        self.residual = float(residual)
        super().__init__(
            message or f"near-defective matrix: bi-orthonormality residual {self.residual:.3e}"
        )


class ConvergenceError(NumericalError):
    def __init__(self, residual: float, iterations: int, message: Optional[str] = None):
        self.residual = float(residual)
        self.iterations = int(iterations)
        super().__init__(
            message
            or f"no convergence after {self.iterations} iterations (last change {self.residual:.3e})"
        )


class EnumerationLimitError(LabError, ValueError):
    def __init__(self, bound: str, value):
        self.bound = bound
        self.value = value
        super().__init__(f"enumeration bound exceeded: {bound} (got {value})")


class OutputLockedError(LabError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"output directory is locked by another run: {self.path}")
