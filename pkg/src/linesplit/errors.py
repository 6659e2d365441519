"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class LinesplitError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteEvaluation(LinesplitError, ArithmeticError):
    """A kernel or evaluator produced inf/nan, typically on a line source."""

    def __init__(self, message: str, location=None, cell: int | None = None):
        super().__init__(message)
        self.location = location
        self.cell = cell


class NonPositiveKappa(LinesplitError, ValueError):
    pass


class ParseError(LinesplitError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class InvalidCell(LinesplitError, ValueError):
    pass


class DegenerateCell(LinesplitError, ValueError):
    pass


class SegmentOutsideMesh(LinesplitError, ValueError):
    pass


class NotConverged(LinesplitError, RuntimeError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class BreakdownError(LinesplitError, ArithmeticError):
    pass


class SingularMatrix(LinesplitError, ArithmeticError):
    pass


class ConfigError(LinesplitError, ValueError):
    pass
