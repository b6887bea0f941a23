"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes or axes incompatible with the requested operation."""


class ConfigError(ValueError):
    """Invalid architecture or run configuration."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DataError(ValueError):
    """Dataset contents violate their declared schema (labels, counts)."""


class FormatError(ValueError):
    """A serialized file is malformed; carries the offending byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TransportError(RuntimeError):
    """A teacher service could not be reached after retries."""
