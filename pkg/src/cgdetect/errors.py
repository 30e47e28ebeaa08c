"""Exception types shared across the toolkit."""


class CGDetectError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(CGDetectError, ValueError):
    pass


class GeometryError(CGDetectError, ValueError):
    """Window/stride/padding combination yields an empty output."""


class FormatError(CGDetectError):
    """File does not follow the expected format."""


class CorruptionError(FormatError):
    """File is structurally valid but its payload is damaged or truncated."""


class ConfigError(CGDetectError, ValueError):
    pass


class DegenerateInputError(CGDetectError, ValueError):
    """Training data cannot support the requested model (e.g. one class)."""


class NumericalError(CGDetectError, ArithmeticError):
    pass
