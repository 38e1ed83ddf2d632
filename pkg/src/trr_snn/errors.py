"""Exception hierarchy shared by every module."""


class TrrError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(TrrError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible with the requested operation."""


class ParseError(TrrError):
    """A file could not be decoded; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DataError(TrrError):
    """Decoded data violates an invariant (e.g. timestamps going backwards)."""


class CheckpointError(TrrError):
    """A checkpoint does not match the model it is loaded into."""


class ConfigError(TrrError):
    """Configuration is malformed or names an unknown key."""


class TrainingDivergedError(TrrError, RuntimeError):
    """A loss became non-finite during training."""
