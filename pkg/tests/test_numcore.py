import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from introd.exceptions import DimensionError, InvalidInputError, OracleFailureError, TrainingDivergedError
from introd.numcore import (
    EPS,
    RngState,
    SgdConfig,
    cross_entropy,
    entropy,
    finite_diff_gradient,
    kl_divergence,
    mix64,
    sgd_step,
    softmax,
)

logits = arrays(np.float64, st.integers(2, 10), elements=st.floats(-30, 30))


def random_simplex(rng, n, k):
    p = rng.uniform((n, k)) + 1e-3
    return p / p.sum(axis=1, keepdims=True)


# -- softmax ---------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_matches_high_precision():
    mpmath.mp.dps = 50
    z = [mpmath.mpf("2.0"), mpmath.mpf("1.0"), mpmath.mpf("0.1")]
    total = sum(mpmath.exp(v) for v in z)
    expected = [float(mpmath.exp(v) / total) for v in z]
    np.testing.assert_allclose(softmax([2.0, 1.0, 0.1]), expected, rtol=1e-14)


@given(logits, st.floats(-1e3, 1e3))
def test_softmax_shift_invariant(z, c):
    assert np.max(np.abs(softmax(z + c) - softmax(z))) < 1e-12


@given(logits)
def test_softmax_is_distribution(z):
    p = softmax(z)
    assert np.all(p >= EPS)
    assert abs(p.sum() - 1.0) < 1e-9


def test_softmax_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        softmax([0.0, np.inf])
    with pytest.raises(InvalidInputError):
        softmax([np.nan, 1.0])


# -- cross-entropy / KL ------------------------------------------------------

def test_cross_entropy_examples():
    assert cross_entropy([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert cross_entropy([1.0, 0.0], [1.0, 0.0]) <= 1e-11
    expected = -(0.6 * math.log(0.5) + 0.4 * math.log(0.3))
    assert cross_entropy([0.6, 0.4, 0.0], [0.5, 0.3, 0.2]) == pytest.approx(expected, rel=1e-14)


def test_cross_entropy_length_mismatch():
    with pytest.raises(DimensionError):
        cross_entropy([1.0, 0.0], [0.3, 0.3, 0.4])


def test_cross_entropy_gibbs():
    rng = RngState(11)
    p = random_simplex(rng, 1000, 6)
    q = random_simplex(rng, 1000, 6)
    np.testing.assert_allclose(cross_entropy(p, p), entropy(p), rtol=0, atol=0)
    assert np.all(cross_entropy(p, q) >= entropy(p) - 1e-12)


def test_kl_examples():
    assert kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0.0
    expected = 0.7 * math.log(1.4) + 0.3 * math.log(0.6)
    assert kl_divergence([0.7, 0.3], [0.5, 0.5]) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(DimensionError):
        kl_divergence([1.0], [0.5, 0.5])


def test_kl_nonnegative_random_pairs():
    rng = RngState(12)
    assert np.all(kl_divergence(random_simplex(rng, 1000, 5), random_simplex(rng, 1000, 5)) >= 0)


def test_kl_gradient_identity_against_finite_differences():
    rng = RngState(13)
    for _ in range(20):
        p_t = random_simplex(rng, 1, 5)[0]
        z = rng.normal(5)
        fd = finite_diff_gradient(lambda v: kl_divergence(p_t, softmax(v)), z)
        analytic = softmax(z) - p_t
        assert np.max(np.abs(fd - analytic)) / max(np.max(np.abs(analytic)), 1e-8) < 1e-4


# -- finite differences ----------------------------------------------------

def test_fd_stationary_point():
    np.testing.assert_allclose(finite_diff_gradient(lambda t: np.sum(t**2), np.zeros(4)), 0.0, atol=1e-12)


def test_fd_exact_on_linear():
    g = np.array([1.5, -2.0, 0.25])
    np.testing.assert_allclose(finite_diff_gradient(lambda t: g @ t + 3.0, np.ones(3)), g, rtol=1e-9)


def test_fd_does_not_mutate_input():
    theta = np.array([1.0, 2.0])
    finite_diff_gradient(lambda t: t @ t, theta)
    np.testing.assert_array_equal(theta, [1.0, 2.0])


def test_fd_reports_nonfinite():
    with pytest.raises(OracleFailureError), np.errstate(invalid="ignore"):
        finite_diff_gradient(lambda t: np.log(t[0]), np.array([0.0]))


# -- SGD -------------------------------------------------------------------

def test_sgd_zero_gradient():
    p, _ = sgd_step(np.array([1.0, -2.0]), np.zeros(2), None, SgdConfig(0.5, 0.9))
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_sgd_plain_step():
    g = np.array([0.3, -0.7])
    p, _ = sgd_step(np.array([1.0, 1.0]), g, None, SgdConfig(1.0, 0.0))
    np.testing.assert_array_equal(p, np.array([1.0, 1.0]) - g)


def test_sgd_momentum_two_steps():
    cfg = SgdConfig(learning_rate=0.1, momentum=0.9)
    g = np.array([1.0, -2.0])
    p, v = sgd_step(np.zeros(2), g, None, cfg)
    p, v = sgd_step(p, g, v, cfg)
    # v1 = g, v2 = 1.9 g
    np.testing.assert_allclose(p, -0.1 * g * (1 + 1.9), rtol=1e-15)


def test_sgd_rejects_nonfinite_gradient():
    with pytest.raises(TrainingDivergedError):
        sgd_step(np.zeros(2), np.array([np.nan, 0.0]), None, SgdConfig())


@pytest.mark.parametrize(
    "kwargs",
    [dict(learning_rate=0.0), dict(momentum=1.0), dict(momentum=-0.1), dict(batch_size=0), dict(epochs=-1)],
)
def test_sgd_config_validation(kwargs):
    with pytest.raises(ValueError):
        SgdConfig(**kwargs)


# -- PRNG ------------------------------------------------------------------

def splitmix64_reference(seed, n):
    """Plain-integer SplitMix64, the textbook stateful form."""
    mask = (1 << 64) - 1
    state, out = seed, []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


@pytest.mark.parametrize("seed", [0, 1, 7, 2**63 + 5, 2**64 - 1])
def test_rng_matches_splitmix64(seed):
    assert RngState(seed).bits(16).tolist() == splitmix64_reference(seed, 16)


def test_rng_known_vector():
    assert int(RngState(0).bits(1)[0]) == 0xE220A8397B1DCDAF


def test_rng_counter_addressing_matches_stream():
    rng = RngState(99)
    stream = rng.uniform(10)
    np.testing.assert_array_equal(RngState(99).uniform_at(np.arange(10)), stream)
    assert rng.counter == 10


def test_rng_reproducible_and_split_independent():
    a = RngState(5).split(3, 1)
    b = RngState(5).split(3, 1)
    assert a == b
    assert a.normal(50).tobytes() == b.normal(50).tobytes()
    assert RngState(5).split(3, 1).seed != RngState(5).split(3, 2).seed


def test_rng_draw_ranges():
    rng = RngState(21)
    u = rng.uniform(20000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    z = rng.normal(20000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1.0) < 0.03
    k = rng.integers(7, 5000)
    assert set(np.unique(k).tolist()) == set(range(7))
    assert sorted(rng.permutation(50).tolist()) == list(range(50))


def test_mix64_is_bijective_on_sample():
    x = np.arange(10000, dtype=np.uint64)
    assert len(np.unique(mix64(x))) == 10000
