"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes violate an operation's contract."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class WavFormatError(ValueError):
    """WAV file is malformed or uses an unsupported encoding."""


class ConfigError(ValueError):
    """Invalid configuration key or value."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
