"""
Exception hierarchy shared by every replayforge module.
Each error also derives from the closest builtin so callers may catch either.
"""

from typing import Optional


class ReplayForgeError(Exception):
    """Base class for all replayforge errors"""


class DimensionError(ReplayForgeError, ValueError):
    """Shapes or widths do not line up"""


class DomainError(ReplayForgeError, ValueError):
    """An argument lies outside the domain of the operation"""


class SchemaError(ReplayForgeError, ValueError):
    """A schema is malformed or a file does not match it"""


class ParseError(ReplayForgeError, ValueError):
    """A dataset cell could not be parsed"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class StateError(ReplayForgeError, RuntimeError):
    """An object is used before it is ready (e.g. sampling an untrained generator)"""


class TrainingError(ReplayForgeError, RuntimeError):
    """Training produced a non-finite loss, gradient or parameter"""

    def __init__(self, message: str, parameter: Optional[str] = None):
        super().__init__(message)
        self.parameter = parameter
