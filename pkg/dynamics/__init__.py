# dynamics/__init__.py

from .errors import (
    ConfigError,
    ConvergenceError,
    EnumerationLimitError,
    LabError,
    NearDefectiveError,
    NumericalError,
    OutputLockedError,
)

__all__ = [
    'LabError',
    'ConfigError',
    'NumericalError',
    'NearDefectiveError',
    'ConvergenceError',
    'EnumerationLimitError',
    'OutputLockedError',
]
