"""
Exception hierarchy for anchormt.

Every module raises one of these so the CLI can map failures onto exit codes:
usage problems exit 1, bad input data exits 2, numeric failures exit 3.
"""


class AnchorMTError(Exception):
    """Base class for all anchormt errors."""

    exit_code = 1


class UsageError(AnchorMTError, ValueError):
    """Bad flags, unknown config keys, illegal call sequences."""

    exit_code = 1


class DataError(AnchorMTError, ValueError):
    """Malformed or empty input data."""

    exit_code = 2


class NumericError(AnchorMTError, ArithmeticError):
    """Shape mismatches, non-finite values, autodiff misuse."""

    exit_code = 3


class CorpusFormatError(DataError):
    """Corpus file could not be decoded or parsed."""

    def __init__(self, message: str, path: str = "", line_number: int = 0):
        self.path = path
        self.line_number = line_number
        location = f"{path}:{line_number}: " if path else ""
        super().__init__(f"{location}{message}")


class DictionaryFormatError(CorpusFormatError):
    """Dictionary line did not hold exactly one source/target pair."""


class ShapeError(NumericError):
    """Operand shapes are incompatible for an op."""


class NonFiniteError(NumericError):
    """NaN or Inf produced by an op."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"non-finite values produced by {op}")
