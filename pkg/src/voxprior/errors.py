"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes or resolutions of two operands do not line up."""


class BinvoxFormatError(ValueError):
    """Malformed binvox bytes. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(RuntimeError):
    """A dataset, database, or support set is empty or unusable."""


class GenerationError(RuntimeError):
    """Procedural shape generation could not satisfy its constraints."""
