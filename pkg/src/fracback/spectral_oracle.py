"""Closed-form subdiffusion solutions for frozen scalar coefficients on the
unit interval / unit square, by sine eigenfunction expansion and
Mittag-Leffler decay factors. Ground truth for solver tests; no closed form
exists for genuinely time-dependent coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .frac_time import mittag_leffler

__all__ = ["SpectralSolution", "evaluate"]


@dataclass(frozen=True)
class SpectralSolution:
    """Eigenfunction expansion of the homogeneous problem with constant
    scalar diffusivity c:

        u(x, t) = sum_k E_alpha(-lambda_k t^alpha) c_k phi_k(x)

    with lambda_k = c k^2 pi^2, phi_k = sqrt(2) sin(k pi x) in 1D, and
    tensor modes lambda_kl = c (k^2 + l^2) pi^2,
    phi_kl = 2 sin(k pi x) sin(l pi y) in 2D.

    `modes` maps the mode index (int in 1D, (int, int) in 2D) to the
    coefficient of the normalized eigenfunction.
    """

    alpha: float
    c: float
    dim: int
    modes: tuple  # ((index, coefficient), ...)

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidArgumentError(f"order must lie in (0, 1], got {self.alpha}")
        if self.c <= 0:
            raise InvalidArgumentError(f"diffusivity must be positive, got {self.c}")
        if self.dim not in (1, 2):
            raise InvalidArgumentError(f"dimension must be 1 or 2, got {self.dim}")
        lams = [self.eigenvalue(idx) for idx, _ in self.modes]
        if any(l <= 0 for l in lams):
            raise InvalidArgumentError("all eigenvalues must be positive")

    @classmethod
    def from_sine_amplitudes(cls, alpha, c, amplitudes, dim=1):
        """Build from plain sine amplitudes: u0 = sum a_k sin(k pi x) in 1D
        (or a_kl sin(k pi x) sin(l pi y) in 2D); amplitudes are rescaled to
        coefficients of the normalized eigenfunctions."""
        norm = math.sqrt(2.0) if dim == 1 else 2.0
        modes = tuple(sorted((idx, a / norm) for idx, a in amplitudes.items()))
        return cls(alpha=alpha, c=c, dim=dim, modes=modes)

    def eigenvalue(self, index) -> float:
        if self.dim == 1:
            return self.c * (index * math.pi) ** 2
        k, l = index
        return self.c * (k * k + l * l) * math.pi**2

    def eigenfunction(self, index, x, y=None) -> np.ndarray:
        if self.dim == 1:
            return math.sqrt(2.0) * np.sin(index * math.pi * np.asarray(x))
        k, l = index
        return 2.0 * np.sin(k * math.pi * np.asarray(x)) * np.sin(l * math.pi * np.asarray(y))

    def decay_factor(self, index, t: float) -> float:
        """E_alpha(-lambda t^alpha) for one mode."""
        if t < 0:
            raise InvalidArgumentError(f"time must be nonnegative, got {t}")
        if t == 0.0:
            return 1.0
        return mittag_leffler(self.alpha, -self.eigenvalue(index) * t**self.alpha)


def evaluate(sol: SpectralSolution, x, t: float, y=None):
    """Evaluate the expansion at points x (and y in 2D) at time t;
    exact (up to Mittag-Leffler accuracy) when u0 is the finite sine
    combination encoded in `sol`."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x, dtype=float)
    if sol.dim == 2 and y is None:
        raise InvalidArgumentError("2D solution needs both x and y coordinates")
    for index, coeff in sol.modes:
        out = out + (coeff * sol.decay_factor(index, t)) * sol.eigenfunction(index, x, y)
    return out
