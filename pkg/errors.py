"""
Exception hierarchy for ivafuse.

Every operation raises a subclass of ``FusionError`` so the CLI can report a
stage-tagged diagnostic and exit non-zero.
"""

from __future__ import annotations


class FusionError(Exception):
    """Base class for all domain errors."""


class ParseError(FusionError, ValueError):
    """Malformed input file or SMILES string, with its location."""

    def __init__(
        self,
        message: str,
        *,
        path: str | None = None,
        line: int | None = None,
        column: str | int | None = None,
        offset: int | None = None,
    ):
        self.path = path
        self.line = line
        self.column = column
        self.offset = offset

        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class ShapeError(FusionError, ValueError):
    """Array or table dimensions do not agree."""


class AlignmentError(FusionError, ValueError):
    """Molecule id sets of fused tables / labels do not match."""


class NumericalError(FusionError, ArithmeticError):
    """Singular, rank-deficient or otherwise ill-conditioned linear algebra."""

    def __init__(self, message: str, condition: float | None = None):
        self.condition = condition
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)


class ConvergenceError(FusionError, ArithmeticError):
    """IVA cost became non-finite."""

    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"{message} at iteration {iteration}")


class ConfigError(FusionError, ValueError):
    """Invalid or incomplete run configuration."""


class StageError(FusionError):
    """Wraps an error with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class VocabularyError(FusionError, ValueError):
    """Bond type missing from the bond vocabulary."""


class ParameterError(FusionError, ValueError):
    """Argument outside its admissible range."""
