"""Error taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError/usage -> 1,
DataFormatError -> 2, NumericError -> 3.
"""


class LidsnError(Exception):
    """Base class for all package errors."""


class ShapeError(LidsnError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(LidsnError):
    """Invalid or inconsistent configuration."""


class NumericError(LidsnError):
    """A numeric invariant was violated (non-finite values, NaN gradients)."""


class DataFormatError(LidsnError):
    """A data file violates its format contract.

    ``kind`` is a short machine-checkable tag; each corruption mode gets a
    distinct kind so callers and tests can tell them apart.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind
