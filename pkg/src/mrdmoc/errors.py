"""Error taxonomy shared across the toolkit.

Plain ``ValueError`` is used for domain/precondition violations (bad mode
index, dimension mismatch, empty node set).  The classes below cover the
remaining failure modes so the CLI can map them onto exit codes.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class ModelError(RuntimeError):
    """Physically inconsistent model, e.g. a non-positive-definite mass matrix."""


class NumericError(RuntimeError):
    """Numerical failure: quadrature non-convergence, singular solve, bad conditioning (CLI exit code 3)."""


class AssemblyError(NumericError):
    """Optimization problem could not be assembled consistently (rank-deficient constraints, bad grid)."""
