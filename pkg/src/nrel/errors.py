"""Exception hierarchy.

Every error raised by the engine derives from :class:`NrelError` and carries a
``stage`` label so the command-line runner can report which phase failed.
"""

from __future__ import annotations


class NrelError(Exception):
    stage = "runtime"


class SchemaError(NrelError):
    stage = "load"


class LoadError(NrelError):
    stage = "load"


class ShapeError(NrelError, ValueError):
    stage = "runtime"


class ParseError(NrelError):
    stage = "parse"

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        super().__init__(f"{message} (line {line}, column {col})" if line else message)


class ExpandError(NrelError):
    stage = "expand"


class LowerError(NrelError):
    stage = "lower"


class CompileError(NrelError):
    stage = "compile"


class ExecError(NrelError):
    stage = "runtime"


class FitError(NrelError):
    stage = "fit"


class PredError(NrelError):
    stage = "pred"
