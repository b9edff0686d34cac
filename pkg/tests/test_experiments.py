import math

import numpy as np
import pytest

from fracback.errors import (
    DegenerateObservationError,
    InvalidArgumentError,
    NumericFailureError,
)
from fracback.experiments import (
    ExperimentSpec,
    NoiseSpec,
    add_noise,
    coefficient_by_id,
    couple_params,
    fit_rate,
    initial_by_id,
    run_convergence,
)
from fracback.grid_fem import build_space, l2_project


# ---------------------------------------------------------------------------
# built-in coefficients and initial data
# ---------------------------------------------------------------------------

def test_a1_matrix_value_at_center():
    a1 = coefficient_by_id("a1", 2)
    got = a1(np.array([[0.5, 0.5]]), 0.0)[0]
    expected = np.array(
        [[0.5 * math.sin(1.0) + 2.0, -0.1],
         [-0.1, math.sin(math.pi / 2) * 1.2 ** (-0.8) + 2.0]]
    )
    np.testing.assert_allclose(got, expected, rtol=0, atol=0)


def test_a2_matrix_value_at_origin():
    a2 = coefficient_by_id("a2", 2)
    got = a2(np.array([[0.0, 0.0]]), 0.0)[0]
    expected = np.array([[3.0, 0.05], [0.05, 2.0]])
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("ident", ["a1", "a2"])
def test_builtin_coefficients_symmetric_and_elliptic(ident):
    coeff = coefficient_by_id(ident, 2)
    space = build_space(2, 9)
    coeff.validate(space, times=np.linspace(0.0, 10.0, 7))
    pts = space.quad_points.reshape(-1, 2)
    a = coeff(pts, 0.7)
    assert np.array_equal(a[:, 0, 1], a[:, 1, 0])


def test_coefficient_id_errors():
    with pytest.raises(InvalidArgumentError):
        coefficient_by_id("a1", 1)
    with pytest.raises(InvalidArgumentError):
        coefficient_by_id("const:zero", 1)
    with pytest.raises(InvalidArgumentError):
        coefficient_by_id("a7", 2)
    assert coefficient_by_id("const:2.5", 1).c0_lower == 2.5


def test_initial_data_ids():
    x = np.array([0.2, 0.5, 0.8])
    np.testing.assert_allclose(initial_by_id("smooth", 1)(x), np.sin(2 * np.pi * x))
    np.testing.assert_array_equal(initial_by_id("nonsmooth", 1)(x), [0.0, 1.0, 1.0])
    y = np.array([0.5, 0.5, 0.5])
    np.testing.assert_allclose(
        initial_by_id("smooth", 2)(x, y), np.sin(2 * np.pi * x) * np.sin(np.pi)
    )
    modes = initial_by_id("modes:1:1.0,3:-0.5", 1)
    np.testing.assert_allclose(
        modes(x), np.sin(np.pi * x) - 0.5 * np.sin(3 * np.pi * x)
    )
    with pytest.raises(InvalidArgumentError):
        initial_by_id("modes:1:1.0", 2)
    with pytest.raises(InvalidArgumentError):
        initial_by_id("modes:0:1.0", 1)
    with pytest.raises(InvalidArgumentError):
        initial_by_id("bumps", 1)


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

def test_add_noise_zero_level_is_identity():
    space = build_space(1, 9)
    g = l2_project(space, lambda x: np.sin(np.pi * x))
    out = add_noise(g, NoiseSpec(0.0, seed=1))
    np.testing.assert_array_equal(out.vector.values, g.values)
    assert out.realized_l2 == 0.0


def test_add_noise_bit_reproducible():
    space = build_space(2, 9)
    x = space.interior_coords()
    g = space.from_values(np.sin(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1]))
    a = add_noise(g, NoiseSpec(1e-2, seed=42))
    b = add_noise(g, NoiseSpec(1e-2, seed=42))
    assert np.array_equal(a.vector.values, b.vector.values)
    c = add_noise(g, NoiseSpec(1e-2, seed=43))
    assert not np.array_equal(a.vector.values, c.vector.values)


def test_add_noise_linear_in_delta():
    space = build_space(2, 9)
    g = l2_project(space, initial_by_id("smooth", 2))
    hi = add_noise(g, NoiseSpec(1e-2, seed=42))
    lo = add_noise(g, NoiseSpec(5e-3, seed=42))
    assert hi.realized_l2 / lo.realized_l2 == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(
        hi.vector.values - g.values, 2.0 * (lo.vector.values - g.values), rtol=1e-12
    )


def test_add_noise_degenerate_observation():
    space = build_space(1, 5)
    with pytest.raises(DegenerateObservationError):
        add_noise(space.zeros(), NoiseSpec(1e-2, seed=0))
    with pytest.raises(InvalidArgumentError):
        NoiseSpec(-1e-3, seed=0)


# ---------------------------------------------------------------------------
# parameter couplings
# ---------------------------------------------------------------------------

def test_couple_params_smooth_a1():
    c = couple_params(1e-2, "smooth_a1", 0.5)
    assert (c.M, c.N) == (9, 50)
    assert c.h == pytest.approx(0.1)
    assert c.tau == pytest.approx(0.02)
    assert c.gamma == pytest.approx(1.0 / 3500.0, rel=1e-12)


def test_couple_params_nonsmooth_a1():
    c = couple_params(1e-2, "nonsmooth_a1", 0.5)
    assert (c.M, c.N) == (9, 50)
    assert c.tau == pytest.approx(1.0 / 50, rel=1e-12)
    assert c.gamma == pytest.approx(10 ** (-1.6) / 200.0, rel=1e-12)
    assert c.gamma == pytest.approx(1.256e-4, rel=1e-3)


def test_couple_params_smooth_a2_alpha_dependent():
    assert couple_params(1e-2, "smooth_a2", 0.75).gamma == pytest.approx(0.1 / 150.0, rel=1e-12)
    assert couple_params(1e-2, "smooth_a2", 0.5).gamma == pytest.approx(0.1 / 350.0, rel=1e-12)


def test_couple_params_monotone_and_floored():
    prev = None
    for d in (1e-1, 5e-2, 1e-2, 1e-3, 1e-4):
        c = couple_params(d, "smooth_a1", 0.5)
        assert c.M >= 3 and c.N >= 5
        if prev is not None:
            assert c.M >= prev.M and c.N >= prev.N and c.gamma <= prev.gamma
        prev = c


def test_couple_params_invalid():
    with pytest.raises(InvalidArgumentError):
        couple_params(1.0, "smooth_a1", 0.5)
    with pytest.raises(InvalidArgumentError):
        couple_params(1e-2, "smooth_b9", 0.5)


# ---------------------------------------------------------------------------
# rate fitting and sweeps
# ---------------------------------------------------------------------------

def test_fit_rate_exact_power_law():
    fit = fit_rate([(1.0, 1.0), (0.25, 0.5), (0.0625, 0.25)])
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.residual_norm < 1e-12


def test_fit_rate_constant_errors():
    fit = fit_rate([(1e-1, 0.3), (1e-2, 0.3), (1e-3, 0.3)])
    assert fit.slope == pytest.approx(0.0, abs=1e-13)


def test_fit_rate_validation():
    with pytest.raises(InvalidArgumentError):
        fit_rate([(1.0, 1.0), (0.5, 0.5)])
    with pytest.raises(InvalidArgumentError):
        fit_rate([(1.0, 1.0), (0.5, 0.5), (0.25, -0.1)])


def test_experiment_spec_validation():
    with pytest.raises(InvalidArgumentError):
        ExperimentSpec(dim=1, coefficient="const:1", alpha=0.5, T=1.0,
                       initial="smooth", deltas=(1e-2, 1e-2))
    spec = ExperimentSpec(dim=1, coefficient="const:1", alpha=0.5, T=1.0,
                          initial="smooth", deltas=(4e-2, 1e-2), fine_M=5, fine_N=10)
    with pytest.raises(InvalidArgumentError):
        spec.validate_grids()


def tiny_spec(**kw):
    base = dict(dim=1, coefficient="const:1", alpha=0.5, T=1.0, initial="smooth",
                deltas=(4e-2, 2e-2, 1e-2), coupling="smooth_a1", seed=3,
                fine_M=39, fine_N=80)
    base.update(kw)
    return ExperimentSpec(**base)


def test_run_convergence_records_and_determinism():
    out1 = run_convergence(tiny_spec())
    out2 = run_convergence(tiny_spec())
    assert len(out1.records) == 3
    for r1, r2 in zip(out1.records, out2.records):
        assert r1.delta == r2.delta
        assert r1.abs_error == r2.abs_error
        assert r1.rel_error == r2.rel_error
        assert r1.iterations == r2.iterations
        assert r1.converged and r2.converged
        assert r1.abs_error >= 0 and r1.error_vs_exact >= 0
    assert out1.fit.slope == out2.fit.slope


def test_run_convergence_threads_match_serial():
    serial = run_convergence(tiny_spec())
    threaded = run_convergence(tiny_spec(), threads=3)
    for r1, r2 in zip(serial.records, threaded.records):
        assert r1.delta == r2.delta
        assert r1.abs_error == r2.abs_error


def test_noise_free_errors_bounded_by_noisy():
    # noise only adds error in expectation: majority vote over 3 seeds
    quiet = run_convergence(tiny_spec(noise_free=True))
    wins = 0
    for seed in (3, 4, 5):
        noisy = run_convergence(tiny_spec(seed=seed))
        if all(
            q.abs_error <= n.abs_error * 1.0 + 1e-15
            for q, n in zip(quiet.records, noisy.records)
        ):
            wins += 1
    assert wins >= 2


def test_run_convergence_insufficient_points():
    # an unreachable tolerance makes every reconstruction fail
    spec = tiny_spec(krylov_tol=1e-15, max_iters=2)
    with pytest.raises(NumericFailureError) as err:
        run_convergence(spec)
    assert len(err.value.records) == 3
    assert not any(r.converged for r in err.value.records)
