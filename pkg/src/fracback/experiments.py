"""Reproduction harness: noise injection, the delta -> (h, tau, gamma)
coupling rules behind the convergence figures, delta-sweep studies, and
log-log rate fitting.

Also hosts the built-in problem ingredients shared by the harness and the
CLI: diffusion coefficients `a1`, `a2` (2D, time-dependent), `const:<c>`,
and initial data `smooth`, `nonsmooth`, `modes:<k:c,...>`.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateObservationError,
    InvalidArgumentError,
    NoConvergenceError,
    NumericFailureError,
)
from .frac_time import TimeGrid
from .backward_recon import ReconConfig, ReconResult, reconstruct
from .forward_solver import ForwardProblem, solve_forward
from .grid_fem import (
    CoefficientField,
    NodalVector,
    build_space,
    evaluate_at_points,
    l2_error,
    l2_norm,
    l2_project,
)

__all__ = [
    "NoiseSpec",
    "NoisyObservation",
    "Coupling",
    "ExperimentSpec",
    "ErrorRecord",
    "ConvergenceResult",
    "RateFit",
    "add_noise",
    "couple_params",
    "run_convergence",
    "fit_rate",
    "coefficient_by_id",
    "initial_by_id",
    "COUPLING_RULES",
]


# ---------------------------------------------------------------------------
# built-in problem ingredients
# ---------------------------------------------------------------------------

def _a1_11(x, y, t):
    return y * np.sin(np.sqrt(1.0 + t)) + 2.0


def _a1_22(x, y, t):
    return np.sin(np.pi * x) * (t + 1.2) ** (-0.8) + 2.0


def _a2_11(x, y, t):
    return np.exp(-x) * math.cos(t) + 2.0


def _a2_12(x, y, t):
    return np.full_like(x, (1.5 - (t + 1.0) ** (-0.2)) / 10.0)


def _a2_22(x, y, t):
    return np.cos(np.pi * y) * math.sin(t) + 2.0


def make_a1() -> CoefficientField:
    """Anisotropic time-dependent 2D coefficient, diagonal entries in
    [1, 3] resp. [2, 2.87], off-diagonal -0.1; eigenvalues in [0.9, 3.1]."""
    return CoefficientField.matrix2d(
        _a1_11, lambda x, y, t: np.full_like(x, -0.1), _a1_22,
        c0_lower=0.85, c0_upper=3.15, time_dependent=True, name="a1",
    )


def make_a2() -> CoefficientField:
    """Oscillatory 2D coefficient whose time derivative does not decay;
    diagonal entries in [1, 3], off-diagonal in [0.05, 0.15)."""
    return CoefficientField.matrix2d(
        _a2_11, _a2_12, _a2_22,
        c0_lower=0.8, c0_upper=3.2, time_dependent=True, name="a2",
    )


def coefficient_by_id(ident: str, dim: int) -> CoefficientField:
    """Resolve a coefficient id: 'a1', 'a2' (2D only) or 'const:<c>'."""
    if ident == "a1" or ident == "a2":
        if dim != 2:
            raise InvalidArgumentError(f"coefficient {ident!r} is two-dimensional")
        return make_a1() if ident == "a1" else make_a2()
    if ident.startswith("const:"):
        try:
            c = float(ident.split(":", 1)[1])
        except ValueError as exc:
            raise InvalidArgumentError(f"bad constant coefficient id {ident!r}") from exc
        return CoefficientField.constant(c, dim)
    raise InvalidArgumentError(f"unknown coefficient id {ident!r}")


def initial_by_id(ident: str, dim: int):
    """Resolve an initial-data id to a callable field.

    'smooth'    -> sin(2 pi x) sin(2 pi y) (sin(2 pi x) in 1D)
    'nonsmooth' -> indicator of 0.5 <= x <= 1
    'modes:k:c,...' -> 1D sine combination sum c sin(k pi x)
    """
    if ident == "smooth":
        if dim == 1:
            return lambda x: np.sin(2.0 * np.pi * x)
        return lambda x, y: np.sin(2.0 * np.pi * x) * np.sin(2.0 * np.pi * y)
    if ident == "nonsmooth":
        if dim == 1:
            return lambda x: np.where(x >= 0.5, 1.0, 0.0)
        return lambda x, y: np.where(x >= 0.5, 1.0, 0.0)
    if ident.startswith("modes:"):
        if dim != 1:
            raise InvalidArgumentError("'modes:' initial data is one-dimensional")
        amps = {}
        try:
            for part in ident.split(":", 1)[1].split(","):
                k, c = part.split(":")
                amps[int(k)] = float(c)
        except ValueError as exc:
            raise InvalidArgumentError(f"bad modes id {ident!r}") from exc
        if not amps or any(k < 1 for k in amps):
            raise InvalidArgumentError(f"bad modes id {ident!r}")

        def u0(x, amps=amps):
            out = np.zeros_like(np.asarray(x, dtype=float))
            for k, c in amps.items():
                out += c * np.sin(k * np.pi * x)
            return out

        return u0
    raise InvalidArgumentError(f"unknown initial-data id {ident!r}")


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Noise level and RNG identity. The generator is Philox-4x64-10 keyed
    by `seed` (counter-based, so streams are reproducible bit-for-bit on any
    platform); node perturbations are i.i.d. standard Gaussian."""

    delta: float
    seed: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise InvalidArgumentError(f"noise level must be >= 0, got {self.delta}")


@dataclass(frozen=True)
class NoisyObservation:
    vector: NodalVector
    realized_l2: float  # mass-norm of the actually applied perturbation


def add_noise(g: NodalVector, spec: NoiseSpec) -> NoisyObservation:
    """Perturb g by eps * delta * (max nodal value of g), eps i.i.d.
    standard Gaussian per interior node from the seeded generator."""
    if spec.delta == 0.0:
        return NoisyObservation(g.copy(), 0.0)
    if not np.any(g.values):
        raise DegenerateObservationError(
            "cannot scale noise by the supremum of an identically-zero observation"
        )
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    eps = rng.standard_normal(g.space.n_dof)
    scale = spec.delta * float(np.max(g.values))
    noisy = NodalVector(g.values + scale * eps, g.space)
    realized = l2_norm(g.space, noisy - g)
    return NoisyObservation(noisy, realized)


# ---------------------------------------------------------------------------
# parameter couplings (delta -> grid + regularization)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Coupling:
    M: int
    N: int
    gamma: float
    h: float
    tau: float


def _grid_from(h_target: float, tau_target: float, T: float):
    M = max(3, round(1.0 / h_target) - 1)
    N = max(5, round(T / tau_target))
    return M, N


def _smooth_a1(delta, alpha, T):
    rd = math.sqrt(delta)
    M, N = _grid_from(rd, rd / 5.0, T)
    return M, N, rd / 350.0


def _nonsmooth_a1(delta, alpha, T):
    M, N = _grid_from(math.sqrt(delta), delta**0.2 / 20.0, T)
    return M, N, delta**0.8 / 200.0


def _smooth_a2(delta, alpha, T):
    rd = math.sqrt(delta)
    M, N = _grid_from(rd, rd / 5.0, T)
    gamma = rd / 150.0 if alpha == 0.75 else rd / 350.0
    return M, N, gamma


COUPLING_RULES = {
    "smooth_a1": _smooth_a1,
    "nonsmooth_a1": _nonsmooth_a1,
    "smooth_a2": _smooth_a2,
}


def couple_params(delta: float, rule: str, alpha: float, T: float = 1.0) -> Coupling:
    """Map a noise level to (M, N, gamma) under a named rule; h and tau are
    the realized grid spacings 1/(M+1) and T/N."""
    if not (0.0 < delta < 1.0):
        raise InvalidArgumentError(f"noise level must lie in (0, 1), got {delta}")
    if rule not in COUPLING_RULES:
        raise InvalidArgumentError(
            f"unknown coupling rule {rule!r}; known: {sorted(COUPLING_RULES)}"
        )
    M, N, gamma = COUPLING_RULES[rule](delta, alpha, T)
    return Coupling(M=M, N=N, gamma=gamma, h=1.0 / (M + 1), tau=T / N)


# ---------------------------------------------------------------------------
# delta sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """One convergence study: fixed problem, decreasing noise levels, and a
    coupling rule (or explicit parameters) per level."""

    dim: int
    coefficient: str
    alpha: float
    T: float
    initial: str
    deltas: tuple
    coupling: str = "smooth_a1"
    explicit: tuple = ()  # optional ((M, N, gamma), ...) overriding the rule
    seed: int = 0
    fine_M: int = 99
    fine_N: int = 500
    krylov_tol: float = 1e-8
    max_iters: int = 400
    method: str = "cg"
    noise_free: bool = False

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        object.__setattr__(self, "deltas", deltas)
        if len(deltas) == 0:
            raise InvalidArgumentError("need at least one noise level")
        if any(d2 >= d1 for d1, d2 in zip(deltas, deltas[1:])):
            raise InvalidArgumentError("noise levels must be strictly decreasing")
        if self.explicit and len(self.explicit) != len(deltas):
            raise InvalidArgumentError("explicit parameters must match the delta list")

    def coupling_for(self, delta: float) -> Coupling:
        if self.explicit:
            M, N, gamma = self.explicit[self.deltas.index(delta)]
            return Coupling(M=int(M), N=int(N), gamma=float(gamma), h=1.0 / (M + 1), tau=self.T / N)
        return couple_params(delta, self.coupling, self.alpha, self.T)

    def validate_grids(self):
        for d in self.deltas:
            c = self.coupling_for(d)
            if c.M >= self.fine_M or c.N >= self.fine_N:
                raise InvalidArgumentError(
                    f"fine grid ({self.fine_M}, {self.fine_N}) is not strictly finer "
                    f"than the delta={d} grid ({c.M}, {c.N})"
                )


@dataclass
class ErrorRecord:
    """One sweep point. abs/rel errors are against P_h u0 on the experiment
    grid; error_vs_exact is the quadrature error against the exact field."""

    delta: float
    h: float
    tau: float
    gamma: float
    M: int
    N: int
    abs_error: float
    rel_error: float
    error_vs_exact: float
    realized_noise: float
    iterations: int
    converged: bool
    wall_time: float

    def __post_init__(self):
        if min(self.abs_error, self.rel_error, self.error_vs_exact) < 0:
            raise InvalidArgumentError("errors must be nonnegative")


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual_norm: float
    n_points: int


@dataclass
class ConvergenceResult:
    records: list
    fit: RateFit


def fit_rate(points) -> RateFit:
    """Least-squares line through (log delta, log error)."""
    pts = [(float(d), float(e)) for d, e in points]
    if len(pts) < 3:
        raise InvalidArgumentError(f"rate fit needs at least 3 points, got {len(pts)}")
    if any(d <= 0 or e <= 0 for d, e in pts):
        raise InvalidArgumentError("rate fit needs strictly positive deltas and errors")
    x = np.log([d for d, _ in pts])
    y = np.log([e for _, e in pts])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.linalg.norm(A @ np.array([slope, intercept]) - y))
    return RateFit(float(slope), float(intercept), resid, len(pts))


def _solve_fine_terminal(spec: ExperimentSpec):
    """Forward-solve the exact problem on the fine data-generation grid."""
    space = build_space(spec.dim, spec.fine_M)
    coeff = coefficient_by_id(spec.coefficient, spec.dim)
    u0_field = initial_by_id(spec.initial, spec.dim)
    problem = ForwardProblem(
        space=space,
        coeff=coeff,
        alpha=spec.alpha,
        grid=TimeGrid(spec.T, spec.fine_N),
        initial=l2_project(space, u0_field),
    )
    traj = solve_forward(problem)
    return space, traj.terminal


def _run_point(spec: ExperimentSpec, delta: float, fine_space, fine_terminal):
    started = time.perf_counter()
    coupling = spec.coupling_for(delta)
    space = build_space(spec.dim, coupling.M)
    coeff = coefficient_by_id(spec.coefficient, spec.dim)
    u0_field = initial_by_id(spec.initial, spec.dim)

    g_exact = NodalVector(
        evaluate_at_points(fine_space, fine_terminal, space.interior_coords()), space
    )
    if spec.noise_free:
        obs = NoisyObservation(g_exact, 0.0)
    else:
        obs = add_noise(g_exact, NoiseSpec(delta=delta, seed=spec.seed))

    problem = ForwardProblem(
        space=space,
        coeff=coeff,
        alpha=spec.alpha,
        grid=TimeGrid(spec.T, coupling.N),
        initial=space.zeros(),
    )
    cfg = ReconConfig(
        gamma=coupling.gamma,
        krylov_tol=spec.krylov_tol,
        max_iters=spec.max_iters,
        method=spec.method,
    )
    converged = True
    try:
        result = reconstruct(problem, obs.vector, cfg)
    except NoConvergenceError as exc:
        result = exc.result
        converged = False

    ref = l2_project(space, u0_field)
    abs_err = l2_norm(space, result.u0_rec - ref)
    ref_norm = l2_norm(space, ref)
    record = ErrorRecord(
        delta=delta,
        h=coupling.h,
        tau=coupling.tau,
        gamma=coupling.gamma,
        M=coupling.M,
        N=coupling.N,
        abs_error=abs_err,
        rel_error=abs_err / ref_norm if ref_norm > 0 else abs_err,
        error_vs_exact=l2_error(space, result.u0_rec, u0_field),
        realized_noise=obs.realized_l2,
        iterations=result.iterations,
        converged=converged,
        wall_time=time.perf_counter() - started,
    )
    return record, result


def run_convergence(spec: ExperimentSpec, threads: int = 1, collect_results=None) -> ConvergenceResult:
    """Full sweep: fine-grid data generation, per-delta transfer + noise +
    reconstruction, and the log(error) vs log(delta) fit over the relative
    errors of the converged points.

    Raises NumericFailureError (with `.records` attached) if fewer than 3
    points converge. `collect_results` may be a list that receives the raw
    ReconResult of every point, in delta order.
    """
    spec.validate_grids()
    fine_space, fine_terminal = _solve_fine_terminal(spec)

    def point(delta):
        return _run_point(spec, delta, fine_space, fine_terminal)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(point, spec.deltas))
    else:
        outs = [point(d) for d in spec.deltas]

    records = [rec for rec, _ in outs]
    if collect_results is not None:
        collect_results.extend(res for _, res in outs)
    good = [(r.delta, r.rel_error) for r in records if r.converged and r.rel_error > 0]
    if len(good) < 3:
        err = NumericFailureError(
            f"only {len(good)} of {len(records)} sweep points converged; rate fit needs 3"
        )
        err.records = records
        raise err
    return ConvergenceResult(records=records, fit=fit_rate(good))
