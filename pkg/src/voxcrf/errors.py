"""Exception types shared across the package."""


class VoxcrfError(Exception):
    """Base class for all package errors."""


class InputError(VoxcrfError, ValueError):
    """Invalid or inconsistent input data (bad dimensions, bad values)."""


class ConfigError(VoxcrfError, ValueError):
    """Invalid configuration or hyperparameter."""


class FormatError(VoxcrfError, ValueError):
    """Malformed file content (manifest, UNRY, PGM/PPM, PLY)."""


class SizeLimitError(VoxcrfError, ValueError):
    """Instance exceeds a hard size limit (e.g. exhaustive enumeration)."""


class NumericalError(VoxcrfError, ArithmeticError):
    """Non-finite value produced during computation; message names the stage."""
