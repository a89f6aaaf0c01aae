"""Exception types raised across rdbench."""

from __future__ import annotations


class RDBenchError(Exception):
    """Base class for all rdbench errors."""


class InvalidInputError(RDBenchError, ValueError):
    pass


class UndefinedCorrelationError(InvalidInputError):
    """A correlation was requested on data with zero (rank) variance."""


class DegenerateFitError(InvalidInputError):
    pass


class NoOverlapError(RDBenchError):
    """Two RD curves share no quality (or log-rate) interval."""


class DegenerateCurveError(RDBenchError):
    """An RD curve cannot be interpolated after preprocessing."""


class InvalidSliceError(RDBenchError):
    pass


class ConfigError(RDBenchError):
    pass


class ParseError(RDBenchError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(f"{where}{message}")


class ToolError(RDBenchError):
    """An external tool was missing or exited non-zero.

    ``output`` carries the captured stderr/stdout so job failures can be
    reported with diagnostics instead of being skipped.
    """

    def __init__(self, message: str, command: list[str] | None = None,
                 returncode: int | None = None, output: str = ""):
        self.command = command
        self.returncode = returncode
        self.output = output
        detail = message
        if returncode is not None:
            detail += f" (exit {returncode})"
        if output:
            detail += "\n" + output.strip()[-4000:]
        super().__init__(detail)


class JobError(RDBenchError):
    pass
