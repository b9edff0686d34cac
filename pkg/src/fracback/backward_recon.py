"""Quasi-boundary-value reconstruction of the initial state from terminal
data: solve (gamma I + S_h) u0 = g matrix-free, where S_h is the terminal
map of the homogeneous fully discrete scheme.

All inner products and norms are taken in the mass (discrete L2) inner
product, so both the stopping rule and the residual invariant are
mesh-independent. The default Krylov method is plain CG on gamma I + S_h;
if it stagnates (residual reduction below 1% over 10 iterations) the solve
falls back to CG on the normal equations (CGNR), whose operator is
self-adjoint by construction, restarting from the best iterate found.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NoConvergenceError
from .forward_solver import DEFAULT_CG_TOL, ForwardProblem, TerminalMap
from .grid_fem import NodalVector

__all__ = ["ReconConfig", "ReconResult", "reconstruct", "apply_qbv_operator"]


@dataclass(frozen=True)
class ReconConfig:
    """Reconstruction parameters. gamma must be positive to reconstruct;
    zero is tolerated here only so the bare operator gamma I + S_h can be
    applied in the degenerate case."""

    gamma: float
    krylov_tol: float = 1e-8
    max_iters: int = 400
    method: str = "cg"  # "cg" | "cgnr"
    step_cg_tol: float = DEFAULT_CG_TOL

    def __post_init__(self):
        if self.gamma < 0:
            raise InvalidArgumentError(f"regularization parameter must be >= 0, got {self.gamma}")
        if not (0.0 < self.krylov_tol < 1.0):
            raise InvalidArgumentError(f"krylov_tol must lie in (0, 1), got {self.krylov_tol}")
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be positive, got {self.max_iters}")
        if self.method not in ("cg", "cgnr"):
            raise InvalidArgumentError(f"method must be 'cg' or 'cgnr', got {self.method!r}")


@dataclass
class ReconResult:
    """Reconstructed initial vector plus Krylov diagnostics. qbv_residual is
    the mass-norm of gamma*u0_rec + S_h u0_rec - g, recomputed with a fresh
    operator application."""

    u0_rec: NodalVector
    iterations: int
    final_residual: float  # relative, mass norm
    qbv_residual: float  # absolute, mass norm
    converged: bool
    method_used: str
    observation_norm: float = 0.0  # mass norm of the right-hand side


class _QbvOperator:
    def __init__(self, problem: ForwardProblem, gamma: float, step_cg_tol: float):
        self.gamma = gamma
        self.terminal = TerminalMap(problem, cg_tol=step_cg_tol)
        self.mass = problem.space._mass
        self.applications = 0

    def apply(self, v: np.ndarray) -> np.ndarray:
        self.applications += 1
        return self.gamma * v + self.terminal(v)

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        self.applications += 1
        return self.gamma * v + self.terminal.adjoint(v)

    def m_dot(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(a @ (self.mass @ b))

    def m_norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(max(self.m_dot(a, a), 0.0)))


def apply_qbv_operator(problem: ForwardProblem, cfg: ReconConfig, v: NodalVector) -> NodalVector:
    """Apply gamma*v + S_h v, the matrix-free kernel of the Krylov loop."""
    if v.space is not problem.space:
        raise InvalidArgumentError("vector does not belong to the problem space")
    op = _QbvOperator(problem, cfg.gamma, cfg.step_cg_tol)
    return NodalVector(op.apply(v.values), problem.space)


def _cg_mass(op: _QbvOperator, b, x0, tol, max_iters, stagnation_window=10):
    """CG in the mass inner product on gamma I + S_h. Returns
    (x_best, res_best, iters, stagnated). Residuals are relative to |b|_M."""
    bnorm = op.m_norm(b)
    x = x0.copy()
    r = b - op.apply(x)
    res = op.m_norm(r) / bnorm
    best_x, best_res = x.copy(), res
    if res <= tol:
        return best_x, best_res, 0, False
    z = op.mass @ r
    p = r.copy()
    rz = float(r @ z)
    history = [res]
    for k in range(1, max_iters + 1):
        Ap = op.apply(p)
        pAp = op.m_dot(p, Ap)
        if pAp <= 0.0 or not np.isfinite(pAp):
            return best_x, best_res, k - 1, True
        a = rz / pAp
        x = x + a * p
        r = r - a * Ap
        res = op.m_norm(r) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            return best_x, best_res, k, False
        history.append(res)
        if len(history) > stagnation_window:
            if history[-1] > 0.99 * history[-1 - stagnation_window]:
                return best_x, best_res, k, True
        z = op.mass @ r
        rz_new = float(r @ z)
        p = r + (rz_new / rz) * p
        rz = rz_new
    return best_x, best_res, max_iters, False


def _cgnr_mass(op: _QbvOperator, b, x0, tol, max_iters):
    """CGLS in the mass inner product: normal equations A* A x = A* b with
    A = gamma I + S_h and A* its mass-inner-product adjoint (applied via the
    time-reversed transposed sweep). Stops on the plain residual b - A x."""
    bnorm = op.m_norm(b)
    x = x0.copy()
    r = b - op.apply(x)
    res = op.m_norm(r) / bnorm
    best_x, best_res = x.copy(), res
    if res <= tol:
        return best_x, best_res, 0
    s = op.apply_adjoint(r)
    p = s.copy()
    ss = op.m_dot(s, s)
    for k in range(1, max_iters + 1):
        q = op.apply(p)
        qq = op.m_dot(q, q)
        if qq <= 0.0 or not np.isfinite(qq):
            break
        a = ss / qq
        x = x + a * p
        r = r - a * q
        res = op.m_norm(r) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            return best_x, best_res, k
        s = op.apply_adjoint(r)
        ss_new = op.m_dot(s, s)
        p = s + (ss_new / ss) * p
        ss = ss_new
    return best_x, best_res, max_iters


def reconstruct(problem: ForwardProblem, g_obs: NodalVector, cfg: ReconConfig) -> ReconResult:
    """Solve (gamma I + S_h) u0 = g_obs for the initial vector.

    Raises NoConvergenceError (carrying the best iterate in `.result`) if
    the iteration budget is exhausted before the relative mass-norm residual
    drops below cfg.krylov_tol.
    """
    if problem.source is not None:
        raise InvalidArgumentError(
            "reconstruction requires a homogeneous problem; pre-correct the "
            "observation for any source term first"
        )
    if g_obs.space is not problem.space:
        raise InvalidArgumentError("observation does not belong to the problem space")
    if cfg.gamma <= 0:
        raise InvalidArgumentError(f"reconstruction needs gamma > 0, got {cfg.gamma}")

    op = _QbvOperator(problem, cfg.gamma, cfg.step_cg_tol)
    b = g_obs.values
    b_norm = op.m_norm(b)
    if b_norm == 0.0:
        zero = problem.space.zeros()
        return ReconResult(zero, 0, 0.0, 0.0, True, cfg.method, 0.0)

    x0 = np.zeros_like(b)
    method_used = cfg.method
    if cfg.method == "cg":
        x, res, iters, stagnated = _cg_mass(op, b, x0, cfg.krylov_tol, cfg.max_iters)
        if stagnated and res > cfg.krylov_tol and iters < cfg.max_iters:
            x, res, more = _cgnr_mass(op, b, x, cfg.krylov_tol, cfg.max_iters - iters)
            iters += more
            method_used = "cg+cgnr"
    else:
        x, res, iters = _cgnr_mass(op, b, x0, cfg.krylov_tol, cfg.max_iters)

    qbv = op.m_norm(op.apply(x) - b)
    result = ReconResult(
        u0_rec=NodalVector(x, problem.space),
        iterations=iters,
        final_residual=res,
        qbv_residual=qbv,
        converged=res <= cfg.krylov_tol,
        method_used=method_used,
        observation_norm=b_norm,
    )
    if not result.converged:
        raise NoConvergenceError(
            f"Krylov reconstruction stopped at relative residual {res:.3e} "
            f"after {iters} iterations (target {cfg.krylov_tol:.1e})",
            result=result,
        )
    return result
