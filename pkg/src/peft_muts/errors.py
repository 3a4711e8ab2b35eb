"""Exception hierarchy shared by every subpackage.

The CLI maps these onto process exit codes, so each family of failure
gets its own base class.
"""


class PmtsError(Exception):
    """Base class for all package errors."""


class DimensionError(PmtsError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class NumericError(PmtsError, FloatingPointError):
    """Non-finite values appeared where finite ones are required."""


class SpecError(PmtsError, ValueError):
    """An architecture or configuration description is inconsistent."""


class ContractError(PmtsError, ValueError):
    """A caller violated an operation's input contract."""


class AlignmentError(DimensionError):
    """A tuning side path does not match its backbone block output."""


class DataError(PmtsError):
    """Input data could not be parsed or is unusable."""


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class CheckpointError(PmtsError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    def __init__(self, name, expected, found):
        self.name = name
        self.expected = tuple(expected) if expected is not None else None
        self.found = tuple(found) if found is not None else None
        if found is None:
            msg = f"tensor {name!r} missing from checkpoint (expected shape {self.expected})"
        elif expected is None:
            msg = f"unexpected tensor {name!r} with shape {self.found}"
        else:
            msg = f"tensor {name!r}: expected shape {self.expected}, found {self.found}"
        super().__init__(msg)
