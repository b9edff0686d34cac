"""Fully discrete forward subdiffusion solver: P1 finite elements in space,
backward Euler convolution quadrature in time, time-dependent coefficient.

Each step n = 1..N solves

    (tau^-alpha M + S(t_n)) U^n
        = F_n + tau^-alpha M (sigma_{n-1} U^0 - sum_{j=1}^{n-1} w_{n-j} U^j)

with diagonally preconditioned conjugate gradients, warm-started from the
previous step. The whole history is retained; the memory sum is formed as
a dense dot product per step (O(N^2) vector work, fine at desk scale).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .frac_time import TimeGrid, cq_weights
from .grid_fem import (
    CoefficientField,
    FemSpace,
    NodalVector,
    assemble_load,
    assemble_stiffness,
)

__all__ = ["ForwardProblem", "ForwardTrajectory", "solve_forward", "terminal_map", "TerminalMap"]

# precompute per-step operators only when the total storage stays modest
_PRECOMPUTE_BUDGET = 2.5e7

DEFAULT_CG_TOL = 1e-10


@dataclass
class ForwardProblem:
    """Forward problem data: space, coefficient, order, grid, optional
    source f(x[, y], t), and the initial vector (normally P_h u0)."""

    space: FemSpace
    coeff: CoefficientField
    alpha: float
    grid: TimeGrid
    initial: NodalVector
    source: object = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidArgumentError(f"order must lie in (0, 1], got {self.alpha}")
        if self.initial.space is not self.space:
            raise InvalidArgumentError("initial vector does not belong to the problem space")
        if self.coeff.dim != self.space.dim:
            raise InvalidArgumentError("coefficient dimension does not match the space")


@dataclass
class ForwardTrajectory:
    """Nodal solution history U^0..U^N plus per-step CG iteration counts."""

    U: np.ndarray  # (N+1, n_dof)
    grid: TimeGrid
    space: FemSpace
    iterations: list = field(default_factory=list)

    def nodal(self, n: int) -> NodalVector:
        return NodalVector(self.U[n].copy(), self.space)

    @property
    def terminal(self) -> NodalVector:
        return self.nodal(self.grid.N)


def _pcg(mat, b, x0, inv_diag, rtol, maxiter):
    """Diagonally preconditioned CG for an SPD sparse matrix. Returns
    (x, iterations); raises NumericFailureError past the budget."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    x = x0.copy()
    r = b - mat @ x
    if np.linalg.norm(r) <= rtol * bnorm:
        return x, 0
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, maxiter + 1):
        Ap = mat @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise NumericFailureError("CG breakdown: operator not positive definite")
        a = rz / pAp
        x += a * p
        r -= a * Ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, k
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NumericFailureError(f"CG did not converge within {maxiter} iterations")


class _Stepper:
    """Precomputed machinery for repeated sweeps of one discretization:
    mass matrix, CQ weights, and the per-level operators B_n = k M + S(t_n)
    (cached when the coefficient is static or the storage budget allows)."""

    def __init__(self, space, coeff, alpha, grid, cg_tol=DEFAULT_CG_TOL):
        self.space = space
        self.coeff = coeff
        self.alpha = alpha
        self.grid = grid
        self.cg_tol = cg_tol
        self.mass = space._mass
        self.kappa = grid.tau ** (-alpha)
        w = cq_weights(alpha, grid.N)
        self.omega = w.omega
        self.sigma = w.sigma
        self.maxiter = 10 * space.n_dof + 10
        self._ops = None
        if not coeff.time_dependent:
            B = (self.kappa * self.mass + assemble_stiffness(space, coeff, 0.0).mat).tocsr()
            self._static = (B, 1.0 / B.diagonal())
        else:
            self._static = None
            nnz = self.mass.nnz * 9 // 3  # stiffness pattern estimate
            if grid.N * nnz <= _PRECOMPUTE_BUDGET:
                self._ops = [self._build(n) for n in range(1, grid.N + 1)]

    def _build(self, n):
        t_n = n * self.grid.tau
        B = (self.kappa * self.mass + assemble_stiffness(self.space, self.coeff, t_n).mat).tocsr()
        return B, 1.0 / B.diagonal()

    def operator(self, n):
        if self._static is not None:
            return self._static
        if self._ops is not None:
            return self._ops[n - 1]
        return self._build(n)

    def sweep(self, u0: np.ndarray, source=None, collect_iters=False):
        """Run the forward recursion from u0; returns (U history, iters)."""
        N = self.grid.N
        n_dof = self.space.n_dof
        U = np.empty((N + 1, n_dof))
        U[0] = u0
        iters = [] if collect_iters else None
        kM = self.kappa * self.mass
        x = u0.copy()
        for n in range(1, N + 1):
            hist = self.omega[1:n][::-1] @ U[1:n] if n > 1 else 0.0
            rhs = kM @ (self.sigma[n - 1] * u0 - hist)
            if source is not None:
                t_n = n * self.grid.tau
                rhs = rhs + assemble_load(self.space, _at_time(source, t_n, self.space.dim))
            B, inv_diag = self.operator(n)
            try:
                x, k = _pcg(B, rhs, x, inv_diag, self.cg_tol, self.maxiter)
            except NumericFailureError as exc:
                raise NumericFailureError(f"step {n}: {exc}") from exc
            U[n] = x
            if collect_iters:
                iters.append(k)
        return U, iters

    def sweep_adjoint(self, v: np.ndarray) -> np.ndarray:
        """Apply the adjoint (in the mass inner product) of the homogeneous
        terminal map u0 -> U^N: the forward recursion run with the
        time-reversed operator sequence,

            B_N Y_N = M v,
            B_n Y_n = -k M sum_{m=n+1}^N w_{m-n} Y_m   (n = N-1..1),
            result  = k sum_n sigma_{n-1} Y_n.
        """
        N = self.grid.N
        Y = np.empty((N + 1, self.space.n_dof))  # Y[0] unused
        B, inv_diag = self.operator(N)
        x, _ = _pcg(B, self.mass @ v, np.zeros_like(v), inv_diag, self.cg_tol, self.maxiter)
        Y[N] = x
        kM = self.kappa * self.mass
        for n in range(N - 1, 0, -1):
            acc = self.omega[1 : N - n + 1] @ Y[n + 1 : N + 1]
            rhs = -(kM @ acc)
            B, inv_diag = self.operator(n)
            x, _ = _pcg(B, rhs, x, inv_diag, self.cg_tol, self.maxiter)
            Y[n] = x
        return self.kappa * (self.sigma[:N] @ Y[1:])


def _at_time(source, t, dim):
    if dim == 1:
        return lambda x: source(x, t)
    return lambda x, y: source(x, y, t)


def solve_forward(problem: ForwardProblem, cg_tol: float = DEFAULT_CG_TOL) -> ForwardTrajectory:
    """Run the fully discrete scheme over the whole grid. U^0 is the
    problem's initial vector bit-for-bit; per-step CG iteration counts are
    recorded in the trajectory."""
    stepper = _Stepper(problem.space, problem.coeff, problem.alpha, problem.grid, cg_tol)
    U, iters = stepper.sweep(problem.initial.values, source=problem.source, collect_iters=True)
    return ForwardTrajectory(U=U, grid=problem.grid, space=problem.space, iterations=iters)


class TerminalMap:
    """The discrete linear map u0 -> U^N of the homogeneous scheme, applied
    matrix-free; `adjoint` applies its mass-inner-product adjoint."""

    def __init__(self, problem: ForwardProblem, cg_tol: float = DEFAULT_CG_TOL):
        if problem.source is not None:
            raise InvalidArgumentError("terminal map requires a homogeneous problem (f = 0)")
        self.problem = problem
        self._stepper = _Stepper(
            problem.space, problem.coeff, problem.alpha, problem.grid, cg_tol
        )

    def __call__(self, values: np.ndarray) -> np.ndarray:
        U, _ = self._stepper.sweep(np.asarray(values, dtype=float))
        return U[-1]

    def adjoint(self, values: np.ndarray) -> np.ndarray:
        return self._stepper.sweep_adjoint(np.asarray(values, dtype=float))


def terminal_map(problem: ForwardProblem, u0h: NodalVector, cg_tol: float = DEFAULT_CG_TOL) -> NodalVector:
    """Terminal state U^N of the homogeneous scheme started from u0h."""
    if u0h.space is not problem.space:
        raise InvalidArgumentError("initial vector does not belong to the problem space")
    return NodalVector(TerminalMap(problem, cg_tol)(u0h.values), problem.space)
