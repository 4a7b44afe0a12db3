"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, unreadable or malformed input files with 3, and numerical
failures (singular matrices, unstable models, non-convergence) with 4.
"""


class EcselectError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(EcselectError):
    """Invalid configuration or invalid arguments to an operation."""

    exit_code = 2


class FormatError(EcselectError):
    """Malformed, truncated, or otherwise unreadable input file."""

    exit_code = 3


class NumericalError(EcselectError):
    """A numerical procedure failed (singularity, instability, divergence)."""

    exit_code = 4
