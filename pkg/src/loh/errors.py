"""Exception types raised across the package."""


class LohError(Exception):
    """Base class for all errors raised by :mod:`loh`."""


class InputError(LohError, ValueError):
    """Invalid arguments or data passed to an operation."""


class FormatError(LohError, ValueError):
    """A file on disk is corrupt, truncated, or of the wrong kind.

    ``path`` and ``offset`` are set when known so callers can point at the
    offending byte.
    """

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        parts = []
        if path is not None:
            parts.append(str(path))
        if offset is not None:
            parts.append(f"offset {offset}")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
