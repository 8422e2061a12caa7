"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: config problems exit 2, data
problems exit 3, numeric failures exit 4.
"""


class PointPolicyError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class DimensionError(PointPolicyError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""

    exit_code = 2


class DomainError(PointPolicyError, ValueError):
    """An operand lies outside the mathematical domain of an operation."""

    exit_code = 4


class TapeError(PointPolicyError, RuntimeError):
    """Misuse of the autodiff tape (detached tensor, double backward, ...)."""

    exit_code = 4


class ArgumentError(PointPolicyError, ValueError):
    """A caller-supplied argument violates a documented precondition."""

    exit_code = 2


class ConfigError(PointPolicyError, ValueError):
    """A configuration document or object is invalid or inconsistent."""

    exit_code = 2


class DataError(PointPolicyError, ValueError):
    """A dataset, episode, or checkpoint on disk is missing or corrupt."""

    exit_code = 3


class GenerationError(PointPolicyError, RuntimeError):
    """Procedural scene generation failed (e.g. could not place clusters)."""

    exit_code = 3


class TrainingError(PointPolicyError, RuntimeError):
    """Training hit a numeric failure such as a NaN gradient."""

    exit_code = 4
