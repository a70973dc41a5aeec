"""Exception types shared across the package."""


class ContractError(ValueError):
    """A precondition on an operation's inputs was violated."""


class ShapeError(ContractError):
    """Array shapes are incompatible for the requested operation."""


class CorrelationUndefinedError(ContractError):
    """Correlation is undefined (zero variance or degenerate input)."""


class NumericalDivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a valid checkpoint (bad magic, truncated, malformed)."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointChecksumError(CheckpointError):
    """Checkpoint payload does not match its trailing CRC32."""
