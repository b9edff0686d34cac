import math

import mpmath as mp
import numpy as np
import pytest
from scipy.special import erfc

from fracback.errors import InvalidArgumentError, UnsupportedArgumentError
from fracback.frac_time import TimeGrid, cq_weights, discrete_caputo, mittag_leffler


def closed_form_weight(alpha, j):
    """Independent high-precision oracle: (-1)^j Gamma(a+1)/(Gamma(a-j+1) j!)."""
    with mp.workdps(50):
        val = (-1) ** j * mp.gamma(alpha + 1) * mp.rgamma(alpha - j + 1) / mp.factorial(j)
        return float(val)


# ---------------------------------------------------------------------------
# CQ weights
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5, 0.75, 0.99])
def test_first_weight_is_minus_alpha(alpha):
    w = cq_weights(alpha, 3)
    assert w.omega[0] == 1.0
    assert w.omega[1] == pytest.approx(-alpha, rel=1e-15)


def test_weights_alpha_one_is_backward_difference():
    w = cq_weights(1.0, 5)
    np.testing.assert_array_equal(w.omega, [1.0, -1.0, 0.0, 0.0, 0.0, 0.0])


def test_weights_table_alpha_half():
    w = cq_weights(0.5, 4)
    np.testing.assert_array_equal(w.omega, [1.0, -0.5, -0.125, -0.0625, -0.0390625])
    np.testing.assert_array_equal(w.sigma, [1.0, 0.5, 0.375, 0.3125, 0.2734375])


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75, 1.0])
def test_weights_match_gamma_formula(alpha):
    w = cq_weights(alpha, 50)
    for j in range(51):
        ref = closed_form_weight(alpha, j)
        if ref == 0.0:
            assert w.omega[j] == 0.0
        else:
            assert abs(w.omega[j] - ref) <= 1e-12 * abs(ref)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_weight_signs_and_partial_sums(alpha):
    w = cq_weights(alpha, 200)
    assert (w.omega[1:] < 0).all()
    assert (w.sigma > 0).all()
    assert (np.diff(w.sigma) < 0).all()


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_partial_sum_decay_exponent(alpha):
    w = cq_weights(alpha, 4096)
    Ns = np.array([64, 128, 256, 512, 1024, 2048, 4096])
    slope = np.polyfit(np.log(Ns), np.log(w.sigma[Ns]), 1)[0]
    assert abs(slope + alpha) <= 0.05


@pytest.mark.parametrize("alpha,N", [(0.0, 4), (1.5, 4), (-0.5, 4), (0.5, 0)])
def test_weights_invalid_arguments(alpha, N):
    with pytest.raises(InvalidArgumentError):
        cq_weights(alpha, N)


# ---------------------------------------------------------------------------
# discrete Caputo derivative
# ---------------------------------------------------------------------------

def test_caputo_constant_history_vanishes():
    w = cq_weights(0.7, 10)
    assert discrete_caputo(w, 0.1, [3.5] * 7) == 0.0


def test_caputo_alpha_one_is_backward_difference():
    w = cq_weights(1.0, 10)
    tau = 0.2
    assert discrete_caputo(w, tau, [0.0, tau, 2 * tau]) == pytest.approx(1.0, rel=1e-14)


def test_caputo_hand_value():
    w = cq_weights(0.5, 4)
    assert discrete_caputo(w, 1.0, [0.0, 1.0, 1.0]) == pytest.approx(0.5, rel=1e-15)


def test_caputo_vector_history():
    w = cq_weights(0.5, 4)
    hist = np.array([[0.0, 0.0], [1.0, 2.0], [1.0, 2.0]])
    np.testing.assert_allclose(discrete_caputo(w, 1.0, hist), [0.5, 1.0], rtol=1e-15)


def test_caputo_invalid_arguments():
    w = cq_weights(0.5, 2)
    with pytest.raises(InvalidArgumentError):
        discrete_caputo(w, 0.1, [])
    with pytest.raises(InvalidArgumentError):
        discrete_caputo(w, 0.1, [0.0, 1.0, 2.0, 3.0])
    with pytest.raises(InvalidArgumentError):
        discrete_caputo(w, -0.1, [0.0, 1.0])


def test_time_grid():
    g = TimeGrid(2.0, 8)
    assert g.tau == 0.25
    assert g.times[-1] == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(InvalidArgumentError):
        TimeGrid(1.0, 0)
    with pytest.raises(InvalidArgumentError):
        TimeGrid(-1.0, 4)


# ---------------------------------------------------------------------------
# Mittag-Leffler
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75, 1.0])
def test_ml_at_zero(alpha):
    assert mittag_leffler(alpha, 0.0) == 1.0


def test_ml_classical_exponential():
    assert mittag_leffler(1.0, -1.0) == pytest.approx(0.36787944117144233, abs=1e-12)
    for z in np.linspace(-30.0, 0.0, 61):
        assert abs(mittag_leffler(1.0, z) - math.exp(z)) <= 1e-10


def test_ml_half_against_erfc_identity():
    # E_{1/2}(z) = exp(z^2) erfc(-z)
    assert mittag_leffler(0.5, -1.0) == pytest.approx(0.42758357615580705, abs=1e-10)
    for z in np.linspace(-10.0, 0.0, 81):
        exact = math.exp(z * z) * erfc(-z)
        assert abs(mittag_leffler(0.5, z) - exact) <= 1e-9


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75, 0.9, 1.0])
def test_ml_completely_monotone_samples(alpha):
    zs = np.linspace(-50.0, 0.0, 201)
    vals = np.array([mittag_leffler(alpha, z) for z in zs])
    assert (vals > 0).all()
    # nonincreasing as z decreases toward -infinity
    assert (np.diff(vals) >= -1e-13).all()


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.6, 0.75, 0.9])
def test_ml_branch_continuity(alpha):
    # the evaluation regions must agree at their seams
    for z0 in (-5.0, -(30.0 ** alpha)):
        lo = mittag_leffler(alpha, z0 - 1e-9)
        hi = mittag_leffler(alpha, z0 + 1e-9)
        assert abs(lo - hi) <= 1e-9


def test_ml_small_positive_arguments():
    with mp.workdps(40):
        ref = float(mp.nsum(lambda k: mp.mpf(2.0) ** k / mp.gamma(0.5 * k + 1), [0, mp.inf]))
    assert mittag_leffler(0.5, 2.0) == pytest.approx(ref, rel=1e-12)


def test_ml_unsupported_arguments():
    with pytest.raises(UnsupportedArgumentError):
        mittag_leffler(1.5, -1.0)
    with pytest.raises(UnsupportedArgumentError):
        mittag_leffler(0.0, -1.0)
    with pytest.raises(UnsupportedArgumentError):
        mittag_leffler(0.5, 10.0)
    with pytest.raises(UnsupportedArgumentError):
        mittag_leffler(0.5, math.nan)
