import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affective_processes.errors import ContractError, ShapeError
from affective_processes.metrics import ccc, icc, mse, pearson


def brute_ccc(y, h):
    n = len(y)
    my = sum(y) / n
    mh = sum(h) / n
    vy = sum((a - my) ** 2 for a in y) / n
    vh = sum((b - mh) ** 2 for b in h) / n
    cov = sum((a - my) * (b - mh) for a, b in zip(y, h)) / n
    return 2 * cov / (vy + vh + (my - mh) ** 2)


def test_ccc_hand_case():
    # equal variances 2/3, covariance 2/3, mean gap 1
    assert ccc([1, 2, 3], [2, 3, 4]) == pytest.approx(4 / 7, abs=1e-15)


def test_ccc_perfect_and_reversed():
    y = np.array([0.1, -0.4, 0.7, 0.2])
    assert ccc(y, y) == pytest.approx(1.0, abs=1e-15)
    assert ccc(y - y.mean(), -(y - y.mean())) == pytest.approx(-1.0, abs=1e-15)


def test_icc_hand_case():
    # pooled mean 2.5, W = 5.5 / 3, S = 3
    assert icc([1, 2, 3], [2, 3, 4]) == pytest.approx(-7 / 29, abs=1e-15)


def test_icc_swapped_pair():
    # pooled mean 0.5, W = 0.5, S = 2
    assert icc([0, 1], [1, 0]) == pytest.approx(-0.6, abs=1e-12)


def test_icc_ignores_a_common_shift():
    rng = np.random.default_rng(2)
    y, h = rng.uniform(-1, 1, 30), rng.uniform(-1, 1, 30)
    assert icc(y + 3.0, h + 3.0) == pytest.approx(icc(y, h), abs=1e-12)


def test_icc_identical_is_one():
    y = np.random.default_rng(0).uniform(-1, 1, 50)
    assert icc(y, y) == 1.0
    assert icc(np.full(4, 0.3), np.full(4, 0.3)) == 1.0


def test_icc_depends_on_length():
    # the squared-difference term is a sum, so the same per-frame error weighs more on longer series
    rng = np.random.default_rng(1)
    y = rng.uniform(-1, 1, 400)
    h = y + 0.1 * rng.standard_normal(400)
    assert icc(y[:400], h[:400]) < icc(y[:20], h[:20])


def test_mse_hand_case():
    assert mse([0, 0, 0, 0], [1, -1, 2, 0]) == pytest.approx(1.5, abs=1e-15)


def test_ccc_matches_brute_force():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 30))
        y = rng.uniform(-1, 1, n)
        h = rng.uniform(-1, 1, n) + rng.normal()
        worst = max(worst, abs(ccc(y, h) - brute_ccc(list(y), list(h))))
    assert worst < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=3, max_size=40), st.randoms())
def test_ccc_properties(pairs, rnd):
    y = np.array([p[0] for p in pairs])
    h = np.array([p[1] for p in pairs])
    c, degenerate = ccc(y, h, return_degenerate=True)
    if degenerate:
        assert c == 0.0
        return
    assert -1 - 1e-12 <= c <= 1 + 1e-12
    assert ccc(h, y) == pytest.approx(c, abs=1e-12)
    assert abs(c) <= abs(pearson(y, h)) + 1e-9
    order = list(range(len(y)))
    rnd.shuffle(order)
    assert ccc(y[order], h[order]) == pytest.approx(c, abs=1e-12)


def test_constant_inputs_are_flagged():
    value, flag = ccc(np.full(5, 0.2), np.full(5, 0.2), return_degenerate=True)
    assert value == 0.0 and flag
    value, flag = ccc(np.full(5, 0.2), np.linspace(0, 1, 5), return_degenerate=True)
    assert value == 0.0 and not flag


def test_input_validation():
    with pytest.raises(ShapeError):
        ccc([1, 2, 3], [1, 2])
    with pytest.raises(ContractError):
        ccc([1.0], [1.0])
    with pytest.raises(ContractError):
        mse([], [])
