"""Exception types shared across the package.

The CLI maps these onto process exit codes: invalid configuration or
arguments exit with 2, numeric failures (including Krylov
non-convergence) with 1, and I/O problems with 3.
"""

from __future__ import annotations


class FracbackError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgumentError(FracbackError, ValueError):
    """An argument violates a documented precondition."""

    exit_code = 2


class UnsupportedArgumentError(InvalidArgumentError):
    """Argument is outside the supported domain of a special function."""


class SpaceMismatchError(InvalidArgumentError):
    """Nodal vectors from different finite element spaces were combined."""


class CoefficientBoundsError(InvalidArgumentError):
    """Diffusion coefficient violates its declared ellipticity bounds."""


class DegenerateObservationError(InvalidArgumentError):
    """Noise was requested for an identically-zero observation."""


class NumericFailureError(FracbackError):
    """An iterative solve failed to converge within its iteration budget."""

    exit_code = 1


class NoConvergenceError(NumericFailureError):
    """Krylov reconstruction hit max_iters; carries the best iterate found."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
