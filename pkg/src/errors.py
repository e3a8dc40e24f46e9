"""Exception hierarchy for the siloed difference-in-differences toolkit.

Two families, mapped to CLI exit codes:

  * ``InputError`` (exit 2): the caller handed us something malformed:
    bad files, unknown columns, invalid schedules or specs.  These also
    subclass ``ValueError`` so plain ``except ValueError`` keeps working.
  * ``EstimationError`` (exit 3): inputs were well-formed but the
    requested estimate is not defined (collinear designs, empty cells,
    too few silos for clustered inference, ...).
"""

from __future__ import annotations

from typing import Optional, Sequence


class UndidError(Exception):
    """Base class for every domain error raised by the package."""
    exit_code: int = 1


# ---------------------------------------------------------------------------
# Input errors (exit 2)
# ---------------------------------------------------------------------------

class InputError(UndidError, ValueError):
    exit_code = 2


class DimensionMismatch(InputError):
    pass


class NonFiniteInput(InputError):
    pass


class UnknownColumn(InputError):
    pass


class MissingCovariate(InputError):
    pass


class MalformedRow(InputError):
    """A row of an input file failed to parse or violated an invariant."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        self.line = line
        self.column = column
        self.detail = message
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column '{column}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class DuplicateKey(InputError):
    pass


class SchemaVersionMismatch(InputError):
    pass


class BadSchedule(InputError):
    pass


class NoEligibleBlocks(InputError):
    pass


class InvalidSpec(InputError):
    pass


class InvalidScheme(InputError):
    pass


# ---------------------------------------------------------------------------
# Estimation errors (exit 3)
# ---------------------------------------------------------------------------

class EstimationError(UndidError):
    exit_code = 3


class RankDeficient(EstimationError):
    """Design columns are linearly dependent.

    ``dependent_columns`` is a minimal set of columns that are jointly
    collinear (every proper subset is linearly independent).
    """

    def __init__(self, dependent_columns: Sequence[str], message: Optional[str] = None):
        self.dependent_columns = tuple(dependent_columns)
        super().__init__(
            message
            or f"design is rank deficient; collinear columns: {', '.join(self.dependent_columns)}"
        )


class DegreesOfFreedomError(EstimationError):
    pass


class EmptyCell(EstimationError):
    pass


class NegativeVariance(EstimationError):
    pass


class MismatchedBlock(EstimationError):
    pass


class NoTreatedRows(EstimationError):
    pass


class NoControlRows(EstimationError):
    pass


class WeightSumZero(EstimationError):
    pass


class MissingCell(EstimationError):
    pass


class TooFewSilos(EstimationError):
    pass


class DegeneratePermutationSpace(EstimationError):
    pass


class DegenerateDesign(EstimationError):
    pass
