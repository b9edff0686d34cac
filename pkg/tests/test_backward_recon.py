import numpy as np
import pytest

from fracback.backward_recon import ReconConfig, apply_qbv_operator, reconstruct
from fracback.errors import InvalidArgumentError, NoConvergenceError
from fracback.experiments import make_a1
from fracback.forward_solver import ForwardProblem, TerminalMap
from fracback.frac_time import TimeGrid, mittag_leffler
from fracback.grid_fem import (
    CoefficientField,
    assemble_mass,
    assemble_stiffness,
    build_space,
    l2_norm,
    l2_project,
)

UNIT = CoefficientField.constant(1.0, 1)


def homogeneous_problem(space, coeff, alpha, T, N):
    return ForwardProblem(space, coeff, alpha, TimeGrid(T, N), space.zeros())


def test_zero_observation_zero_iterations():
    space = build_space(1, 9)
    problem = homogeneous_problem(space, UNIT, 0.5, 1.0, 8)
    res = reconstruct(problem, space.zeros(), ReconConfig(gamma=1e-3))
    assert not res.u0_rec.values.any()
    assert res.iterations == 0
    assert res.converged


def test_single_mode_amplitude_algebra():
    # on the sine eigenmode the recovered amplitude is exactly E/(gamma+E)
    # with E the discrete terminal multiplier
    space = build_space(1, 60)
    v = np.sin(np.pi * space.interior_coords().ravel())
    problem = homogeneous_problem(space, UNIT, 0.5, 1.0, 100)
    tm = TerminalMap(problem)
    g = tm(v)
    M = assemble_mass(space).mat
    E = (g @ (M @ v)) / (v @ (M @ v))
    for gamma in (1e-2, 1e-3, 1e-4):
        res = reconstruct(problem, space.from_values(g), ReconConfig(gamma=gamma))
        amp = (res.u0_rec.values @ (M @ v)) / (v @ (M @ v))
        assert amp == pytest.approx(E / (gamma + E), rel=1e-7)


def test_single_mode_deviation_tracks_mittag_leffler():
    # relative deviation from u0h tends to gamma/(gamma+E) with E evaluated
    # from the Rayleigh eigenvalue; tolerance covers the O(tau) time error
    space = build_space(1, 80)
    v = np.sin(np.pi * space.interior_coords().ravel())
    S = assemble_stiffness(space, UNIT, 0.0).mat
    M = assemble_mass(space).mat
    lam = (v @ (S @ v)) / (v @ (M @ v))
    E = mittag_leffler(0.5, -lam)
    problem = homogeneous_problem(space, UNIT, 0.5, 1.0, 400)
    g = TerminalMap(problem)(v)
    for gamma in (1e-2, 1e-3):
        res = reconstruct(problem, space.from_values(g), ReconConfig(gamma=gamma))
        nv = space.from_values(v)
        deviation = l2_norm(space, res.u0_rec - nv) / l2_norm(space, nv)
        assert deviation == pytest.approx(gamma / (gamma + E), rel=2e-2)


def test_apply_qbv_operator_basics():
    space = build_space(1, 12)
    problem = homogeneous_problem(space, UNIT, 0.4, 1.0, 10)
    cfg0 = ReconConfig(gamma=0.0)
    assert not apply_qbv_operator(problem, cfg0, space.zeros()).values.any()
    rng = np.random.default_rng(8)
    v = space.from_values(rng.standard_normal(space.n_dof))
    # gamma = 0 degenerates to the bare terminal map
    tm = TerminalMap(problem)
    np.testing.assert_allclose(
        apply_qbv_operator(problem, cfg0, v).values, tm(v.values), rtol=1e-12
    )
    cfg = ReconConfig(gamma=0.37)
    x = space.from_values(rng.standard_normal(space.n_dof))
    y = space.from_values(rng.standard_normal(space.n_dof))
    lhs = apply_qbv_operator(problem, cfg, 2.0 * x - 0.5 * y).values
    rhs = 2.0 * apply_qbv_operator(problem, cfg, x).values - 0.5 * apply_qbv_operator(problem, cfg, y).values
    assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(rhs).max())


def test_cg_and_cgnr_agree_on_frozen_case():
    space = build_space(1, 40)
    problem = homogeneous_problem(space, CoefficientField.constant(0.5, 1), 0.5, 1.0, 60)
    u0 = l2_project(space, lambda x: np.sin(np.pi * x) + 0.3 * np.sin(2 * np.pi * x))
    g = space.from_values(TerminalMap(problem)(u0.values))
    res_cg = reconstruct(problem, g, ReconConfig(gamma=1e-3, method="cg"))
    res_nr = reconstruct(problem, g, ReconConfig(gamma=1e-3, method="cgnr"))
    diff = l2_norm(space, res_cg.u0_rec - res_nr.u0_rec)
    assert diff <= 1e-6 * l2_norm(space, res_cg.u0_rec)


def test_gamma_sweep_monotone_noise_free():
    space = build_space(1, 31)
    problem = homogeneous_problem(space, UNIT, 0.5, 1.0, 50)
    u0 = l2_project(space, lambda x: np.sin(2 * np.pi * x))
    g = space.from_values(TerminalMap(problem)(u0.values))
    errs = []
    for gamma in (1e-2, 1e-3, 1e-4):
        res = reconstruct(problem, g, ReconConfig(gamma=gamma))
        errs.append(l2_norm(space, res.u0_rec - u0))
    for a, b in zip(errs, errs[1:]):
        assert b <= a * 1.05


def test_qbv_residual_invariant_including_time_dependent_2d():
    space = build_space(2, 7)
    problem = homogeneous_problem(space, make_a1(), 0.5, 1.0, 15)
    u0 = l2_project(space, lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
    g_vals = TerminalMap(problem)(u0.values)
    rng = np.random.default_rng(42)
    noisy = space.from_values(g_vals + 1e-2 * np.max(g_vals) * rng.standard_normal(space.n_dof))
    cfg = ReconConfig(gamma=5e-4)
    res = reconstruct(problem, noisy, cfg)
    assert res.converged
    assert res.qbv_residual <= 10 * cfg.krylov_tol * l2_norm(space, noisy)


def test_no_convergence_carries_best_iterate():
    space = build_space(1, 25)
    problem = homogeneous_problem(space, UNIT, 0.5, 1.0, 30)
    u0 = l2_project(space, lambda x: np.sin(np.pi * x) + np.sin(4 * np.pi * x))
    g = space.from_values(TerminalMap(problem)(u0.values))
    with pytest.raises(NoConvergenceError) as err:
        reconstruct(problem, g, ReconConfig(gamma=1e-6, max_iters=1))
    result = err.value.result
    assert result is not None
    assert not result.converged
    assert np.isfinite(result.u0_rec.values).all()
    assert result.final_residual > 0


def test_reconstruct_validation():
    space = build_space(1, 9)
    problem = homogeneous_problem(space, UNIT, 0.5, 1.0, 8)
    g = space.zeros()
    with pytest.raises(InvalidArgumentError):
        reconstruct(problem, g, ReconConfig(gamma=0.0))
    with pytest.raises(InvalidArgumentError):
        ReconConfig(gamma=-1.0)
    with pytest.raises(InvalidArgumentError):
        ReconConfig(gamma=1e-3, krylov_tol=2.0)
    with pytest.raises(InvalidArgumentError):
        ReconConfig(gamma=1e-3, method="gmres")
    other = build_space(1, 9)
    with pytest.raises(InvalidArgumentError):
        reconstruct(problem, other.zeros(), ReconConfig(gamma=1e-3))
    sourced = ForwardProblem(
        space, UNIT, 0.5, TimeGrid(1.0, 8), space.zeros(),
        source=lambda x, t: np.ones_like(x),
    )
    with pytest.raises(InvalidArgumentError):
        reconstruct(sourced, g, ReconConfig(gamma=1e-3))
