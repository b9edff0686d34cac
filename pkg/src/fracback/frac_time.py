"""Time-fractional machinery: convolution quadrature weights for the
backward Euler discretization of the Caputo derivative, the discrete
fractional derivative itself, and Mittag-Leffler evaluation used by the
closed-form oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, UnsupportedArgumentError

__all__ = [
    "CQWeights",
    "TimeGrid",
    "cq_weights",
    "discrete_caputo",
    "mittag_leffler",
]


@dataclass(frozen=True)
class CQWeights:
    """Backward Euler convolution quadrature weights for order alpha.

    omega[j] = (-1)^j * binom(alpha, j); sigma[n] = sum_{k<=n} omega[k].
    omega[0] == 1; for alpha in (0,1) all later weights are negative and
    the partial sums sigma are positive and strictly decreasing.
    """

    alpha: float
    N: int
    omega: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_n = n*tau on [0, T] with tau = T/N."""

    T: float
    N: int

    def __post_init__(self):
        if not (self.T > 0):
            raise InvalidArgumentError(f"final time must be positive, got {self.T}")
        if self.N < 1:
            raise InvalidArgumentError(f"need at least one time step, got N={self.N}")

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.tau


def cq_weights(alpha: float, N: int) -> CQWeights:
    """Compute CQ weights omega_0..omega_N by the stable recurrence
    omega_0 = 1, omega_j = omega_{j-1} * (j - 1 - alpha) / j,
    equivalent to the closed form (-1)^j Gamma(alpha+1) /
    (Gamma(alpha-j+1) Gamma(j+1)) but without Gamma evaluations.
    """
    if not (0.0 < alpha <= 1.0):
        raise InvalidArgumentError(f"fractional order must lie in (0, 1], got {alpha}")
    if N < 1:
        raise InvalidArgumentError(f"need at least one step, got N={N}")
    omega = np.empty(N + 1)
    omega[0] = 1.0
    for j in range(1, N + 1):
        omega[j] = omega[j - 1] * (j - 1 - alpha) / j
    sigma = np.cumsum(omega)
    omega.setflags(write=False)
    sigma.setflags(write=False)
    return CQWeights(alpha=alpha, N=N, omega=omega, sigma=sigma)


def discrete_caputo(weights: CQWeights, tau: float, history) -> float:
    """Discrete Caputo derivative at the last history point:

        tau^(-alpha) * sum_{j=0}^{n} omega_{n-j} * (phi_j - phi_0).

    `history` holds phi_0..phi_n (scalars, or vectors stacked along the
    first axis). The tau^(-alpha) scale factor is included so the alpha=1
    case reduces to the plain backward difference.
    """
    phi = np.asarray(history, dtype=float)
    if phi.shape[0] == 0:
        raise InvalidArgumentError("history must contain at least phi_0")
    n = phi.shape[0] - 1
    if n > weights.N:
        raise InvalidArgumentError(
            f"history length {n + 1} exceeds weight table (N={weights.N})"
        )
    if tau <= 0:
        raise InvalidArgumentError(f"step size must be positive, got {tau}")
    diffs = phi - phi[0]
    w = weights.omega[: n + 1][::-1]
    if phi.ndim == 1:
        acc = float(np.dot(w, diffs))
    else:
        acc = np.tensordot(w, diffs, axes=(0, 0))
    return tau ** (-weights.alpha) * acc


# ---------------------------------------------------------------------------
# Mittag-Leffler E_{alpha,1} on the real line (z <= 5), absolute accuracy 1e-10
# ---------------------------------------------------------------------------
#
# Switching rule (fixed):
#   alpha == 1          -> exp(z) exactly.
#   |z| <= 5            -> power series sum z^k / Gamma(alpha k + 1), summed in
#                          arbitrary precision (working digits grow like
#                          0.45*|z|^(1/alpha), which bounds the cancellation).
#   z < -5, |z|^(1/alpha) >= 30
#                       -> algebraic tail -sum_{k=1}^{K} z^(-k)/Gamma(1-alpha k)
#                          with K = floor(15/alpha); the omitted remainder is
#                          O(exp(-|z|^(1/alpha))) < 1e-12 in this region.
#   z < -5, |z|^(1/alpha) < 30
#                       -> real-line integral representation
#                          E_a(-x) = sin(a pi)/(a pi) *
#                            Int_0^inf x e^(-t^(1/a)) /
#                                      ((t + x cos(a pi))^2 + (x sin(a pi))^2) dt
#                          via adaptive quadrature (only reached for alpha
#                          roughly above 0.47, where the algebraic tail alone
#                          cannot deliver 1e-10 near the series boundary).

_SERIES_CUTOFF = 5.0
_ASYMPTOTIC_BAND = 30.0


def _ml_series(alpha: float, z: float) -> float:
    import mpmath as mp

    digits = 20 + int(0.45 * abs(z) ** (1.0 / alpha)) if z != 0 else 20
    with mp.workdps(digits):
        zz = mp.mpf(z)
        aa = mp.mpf(alpha)  # promote so Gamma arguments carry full precision
        total = mp.mpf(1)
        kmin = max(abs(z) ** (1.0 / alpha) / alpha, 4.0)
        tiny = mp.mpf(10) ** (-(digits - 4))
        k = 1
        while True:
            term = zz**k / mp.gamma(aa * k + 1)
            total += term
            if abs(term) < tiny and k > kmin:
                break
            k += 1
        return float(total)


def _reciprocal_gamma(x: float) -> float:
    # 1/Gamma(x) with poles at nonpositive integers mapped to 0; negative
    # non-integer arguments go through the reflection formula.
    if x > 0:
        return 1.0 / math.gamma(x)
    if abs(x - round(x)) < 1e-12:
        return 0.0
    return math.gamma(1.0 - x) * math.sin(math.pi * x) / math.pi


def _ml_asymptotic(alpha: float, z: float) -> float:
    K = int(15.0 / alpha)
    total = 0.0
    zk = 1.0
    for k in range(1, K + 1):
        zk *= z
        total -= _reciprocal_gamma(1.0 - alpha * k) / zk
    return total


def _ml_integral(alpha: float, z: float) -> float:
    from scipy.integrate import quad

    x = -z
    ca = math.cos(alpha * math.pi)
    sa = math.sin(alpha * math.pi)
    root = 1.0 / alpha

    def integrand(t):
        return x * math.exp(-(t**root)) / ((t + x * ca) ** 2 + (x * sa) ** 2)

    peak = max(0.0, -x * ca)
    upper = max(60.0, 3.0 * peak)
    pts = [peak] if 0.0 < peak < upper else None
    val, _ = quad(integrand, 0.0, upper, points=pts, epsabs=1e-14, epsrel=1e-13, limit=400)
    return sa / (alpha * math.pi) * val


def mittag_leffler(alpha: float, z: float) -> float:
    """One-parameter Mittag-Leffler function E_{alpha,1}(z) for real z <= 5.

    Supported domain: alpha in (0, 1], z real and at most the series cutoff
    (the solvers only ever need z <= 0; small positive arguments are allowed
    for convenience). Absolute accuracy 1e-10 on the whole domain.
    """
    if not (0.0 < alpha <= 1.0):
        raise UnsupportedArgumentError(f"order must lie in (0, 1], got {alpha}")
    z = float(z)
    if not math.isfinite(z):
        raise UnsupportedArgumentError(f"argument must be finite, got {z}")
    if z > _SERIES_CUTOFF:
        raise UnsupportedArgumentError(
            f"argument {z} > {_SERIES_CUTOFF} is outside the supported range"
        )
    if alpha == 1.0:
        return math.exp(z)
    if abs(z) <= _SERIES_CUTOFF:
        return _ml_series(alpha, z)
    if abs(z) ** (1.0 / alpha) >= _ASYMPTOTIC_BAND:
        return _ml_asymptotic(alpha, z)
    return _ml_integral(alpha, z)
