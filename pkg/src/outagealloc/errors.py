"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (bad field, bad combination, unknown key)."""


class DataFormatError(ValueError):
    """A binary file does not match its declared format.

    ``offset`` is the byte position at which the problem was detected,
    when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateEstimateError(ZeroDivisionError):
    """An empirical ratio has an empty denominator (e.g. no accepted samples)."""
