"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """An argument lies outside the operation's domain."""


class NonFiniteError(DomainError):
    """A NaN or infinity reached an operation that requires finite input."""


class ParseError(ValueError):
    """Malformed input text."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TreeError(ValueError):
    """Head pointers do not describe a valid dependency tree."""


class StructureError(TreeError):
    """Zero or several roots."""


class CycleError(TreeError):
    """A node is its own ancestor."""


class RangeError(TreeError):
    """A head index points outside the sentence."""


class ProblemError(ValueError):
    """A problem set violates its invariants."""


class GenerationError(ValueError):
    """A synthetic-data configuration cannot be satisfied."""


class ConfigError(ValueError):
    """Invalid model or training configuration."""


class TrainingDiverged(ArithmeticError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, example_id, loss):
        self.epoch = epoch
        self.example_id = example_id
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, example {example_id!r}")


class EmptyDatasetError(ValueError):
    """Accuracy is undefined on an empty dataset."""
