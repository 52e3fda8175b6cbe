"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array arguments whose shapes do not line up for the requested op."""


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the dotted field path."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class IngestError(ValueError):
    """Malformed dataset container; carries the byte offset of the fault."""

    def __init__(self, message, byte_offset=None):
        self.byte_offset = byte_offset
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)


class ProtocolError(RuntimeError):
    """Federated protocol violation: missing client, layout mismatch, bad weights."""


class UsageError(RuntimeError):
    """API used out of order or on the wrong kind of model."""
