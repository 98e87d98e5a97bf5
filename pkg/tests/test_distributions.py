import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affective_processes import autodiff as ad
from affective_processes.distributions import (
    HALF_LOG_2PI,
    DiagonalGaussian,
    kl_divergence,
    log_prob,
    rsample,
    standard_normal,
)
from affective_processes.errors import ContractError, ShapeError


def G(mean, std):
    return DiagonalGaussian(np.atleast_1d(np.asarray(mean, float)), np.atleast_1d(np.asarray(std, float)))


def test_invariants_enforced():
    with pytest.raises(ContractError):
        G([0.0], [0.0])
    with pytest.raises(ShapeError):
        G([0.0, 1.0], [1.0])


# -- rsample --------------------------------------------------------------


def test_rsample_collapses_when_std_is_tiny():
    g = G([1.5, -2.0], [1e-12, 1e-12])
    np.testing.assert_allclose(rsample(g, np.array([3.0, -4.0])).data, [1.5, -2.0], atol=1e-11)


def test_rsample_standard_identity():
    eps = np.array([0.3, -1.2, 2.0])
    np.testing.assert_array_equal(rsample(standard_normal(3), eps).data, eps)


def test_rsample_monte_carlo_moments():
    noise = np.random.default_rng(0).standard_normal(100_000)
    draws = rsample(G(np.full(100_000, 2.0), np.full(100_000, 3.0)), noise).data
    assert abs(draws.mean() - 2.0) < 0.05
    assert abs(draws.std() - 3.0) < 0.05


def test_rsample_shape_mismatch():
    with pytest.raises(ShapeError):
        rsample(standard_normal(3), np.zeros(2))


def test_rsample_gradients():
    noise = np.array([0.7, -1.3])
    tape = ad.Tape()
    p = tape.watch_all({"mean": np.array([0.1, 0.2]), "std": np.array([0.5, 1.5])})
    out = rsample(DiagonalGaussian(p["mean"], p["std"]), noise).sum()
    g = tape.backward(out, p)
    np.testing.assert_array_equal(g["mean"], [1.0, 1.0])
    np.testing.assert_array_equal(g["std"], noise)
    err = ad.gradient_check(
        lambda q: (rsample(DiagonalGaussian(q["mean"], q["std"]), noise) * np.array([1.0, -2.0])).sum(),
        {"mean": np.array([0.1, 0.2]), "std": np.array([0.5, 1.5])},
    )
    assert err < 1e-8


# -- log_prob -------------------------------------------------------------


def test_log_prob_standard_at_zero():
    assert log_prob(G([0.0], [1.0]), np.zeros(1)).item() == pytest.approx(-0.9189385332046727, abs=1e-15)


def test_log_prob_at_mean():
    std = np.array([0.5, 2.0, 3.0])
    val = log_prob(G([1.0, 2.0, 3.0], std), np.array([1.0, 2.0, 3.0])).item()
    assert val == pytest.approx(-np.sum(HALF_LOG_2PI + np.log(std)), abs=1e-13)


def test_doubling_std_at_mean_lowers_log_prob_by_d_log2():
    y = np.array([0.2, -0.4, 1.0])
    a = log_prob(G(y, [0.3, 0.6, 0.9]), y).item()
    b = log_prob(G(y, [0.6, 1.2, 1.8]), y).item()
    assert a - b == pytest.approx(3 * math.log(2.0), abs=1e-13)


def test_log_prob_gradient_vanishes_at_mean():
    mean = np.array([0.4, -1.1])
    std = np.array([0.7, 1.3])
    tape = ad.Tape()
    y = tape.watch(mean.copy())
    g = tape.backward(log_prob(G(mean, std), y), {"y": y})["y"]
    np.testing.assert_allclose(g, 0.0, atol=1e-15)


# -- KL -------------------------------------------------------------------


def test_kl_identical_is_zero():
    g = G([0.3, -0.2], [0.5, 2.0])
    assert kl_divergence(g, g).item() == 0.0


def test_kl_unit_mean_shift():
    assert abs(kl_divergence(G([1.0], [1.0]), G([0.0], [1.0])).item() - 0.5) < 1e-12


def test_kl_doubled_std():
    expected = -math.log(2.0) + 2.0 - 0.5
    assert abs(kl_divergence(G([0.0], [2.0]), G([0.0], [1.0])).item() - expected) < 1e-12
    assert round(expected, 4) == 0.8069


def test_kl_dimension_mismatch():
    with pytest.raises(ShapeError):
        kl_divergence(standard_normal(2), standard_normal(3))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-5, 5), st.floats(0.05, 5), st.floats(-5, 5), st.floats(0.05, 5)),
             min_size=1, max_size=6)
)
def test_kl_non_negative(rows):
    q = G([r[0] for r in rows], [r[1] for r in rows])
    p = G([r[2] for r in rows], [r[3] for r in rows])
    assert kl_divergence(q, p).item() >= -1e-12


def test_kl_gradient_matches_finite_differences():
    params = {"mq": np.array([0.3, -0.5]), "sq": np.array([0.8, 1.4]),
              "mp": np.array([-0.2, 0.1]), "sp": np.array([1.1, 0.6])}
    err = ad.gradient_check(
        lambda p: kl_divergence(DiagonalGaussian(p["mq"], p["sq"]), DiagonalGaussian(p["mp"], p["sp"])),
        params,
    )
    assert err < 1e-8
