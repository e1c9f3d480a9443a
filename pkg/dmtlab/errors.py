"""Exception types shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class DmtError(Exception):
    exit_code = 1


class ValidationError(DmtError, ValueError):
    """Invalid argument, configuration or dataset."""

    exit_code = 2


class DimensionError(ValidationError):
    """Operand shapes do not agree."""


class ContractError(ValidationError):
    """A precondition of an operation was violated."""


class DegenerateDomainError(ValidationError):
    """Source and target domains are elementwise identical.

    The translation likelihood is then a Dirac distribution and the
    translator cannot be optimized.
    """


class TimestepRangeError(DmtError, IndexError):
    exit_code = 2


class ParseError(DmtError, ValueError):
    """A binary file could not be decoded."""

    exit_code = 5

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CompatibilityError(DmtError):
    """A file was written for a different format version or architecture."""

    exit_code = 5


class TrainingDivergenceError(DmtError, ArithmeticError):
    exit_code = 3

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"Training diverged in epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class SelectionError(DmtError):
    """Timestep pre-selection found no crossing of the distance curves."""

    exit_code = 4


class NumericError(DmtError, ArithmeticError):
    exit_code = 2
