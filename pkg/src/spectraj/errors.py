"""Exception taxonomy shared by every module.

Callers are expected to be able to tell apart contract violations (a bug
in the calling code), bad configuration, bad input data, and numerical
failures, so each gets its own class. The CLI maps ConfigError and usage
problems to exit code 2 and everything else to exit code 1.
"""


class SpectrajError(Exception):
    """Base class for every error raised by this package."""


class ContractError(SpectrajError):
    """A documented precondition of an operation was violated."""


class ShapeError(ContractError):
    """Operands have incompatible shapes; the message names both."""


class ConfigError(SpectrajError):
    """A configuration value is missing, unknown, or out of range."""


class CapacityError(ConfigError):
    """A scene exceeds a configured capacity such as the agent limit."""


class DataError(SpectrajError):
    """Scene or image data is malformed or out of the supported range."""


class NumericError(SpectrajError):
    """An iterative numerical procedure failed to converge or blew up."""
