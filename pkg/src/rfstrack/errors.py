"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid or unreadable configuration."""


class FilterError(Exception):
    """A filter recursion failed; carries the frame index when known."""

    def __init__(self, message: str, frame: int | None = None):
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)
        self.frame = frame


class DataFormatError(Exception):
    """Malformed input data file."""
