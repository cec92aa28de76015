"""Exception types shared across the package."""


class HairError(Exception):
    """Base class for all package errors."""


class TooShortError(HairError, ValueError):
    """A strand is shorter than the requested resampling step."""


class DimensionError(HairError, ValueError):
    """Array or grid dimensions do not match what an operation expects."""


class FormatError(HairError, ValueError):
    """A binary file has a bad magic, version or payload size."""


class DigestMismatchError(HairError):
    """A checkpoint was produced for a different network layout."""


class EscapedError(HairError, ValueError):
    """A growth point left the volume."""


class ConfigError(HairError, ValueError):
    """Invalid configuration key or value."""


class DivergenceError(HairError, RuntimeError):
    """Training produced a non-finite loss."""
