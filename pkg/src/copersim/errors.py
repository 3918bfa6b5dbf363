"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Array dimensions incompatible with the requested operation."""


class ParameterError(ValueError):
    """A scalar argument is outside its documented range."""


class GenerationError(RuntimeError):
    """Scene generation could not satisfy a placement constraint."""


class ProtocolError(RuntimeError):
    """A message violates the exchange protocol (names the offending link)."""


class WireError(ValueError):
    """Malformed byte stream; carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class ConfigError(ValueError):
    """Invalid run configuration; names the failing field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field
