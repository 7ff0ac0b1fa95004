import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from d3a.errors import InvalidInputError
from d3a.numkit import Rng
from d3a.weighting import alphas, epsilon_magnitudes, epsilon_signs, omega


def oracle_omega(D, d, omega_min=0.05):
    """Scalar loop version written directly from the rule, no numpy."""
    m = len(D)
    dmin = min(D)
    sD, sd = sum(D), sum(d)
    exps = [math.exp(-x) for x in d]
    z = sum(exps)
    out = []
    for i in range(m):
        a = dmin / D[i]
        share_D = D[i] / sD
        share_d = d[i] / sd if sd > 0 else 1.0 / m
        if abs(share_D - share_d) <= 1e-12:
            sign = 0.0
        elif share_D > share_d:
            sign = 1.0
        else:
            sign = -1.0
        out.append(max(a + sign * exps[i] / z, omega_min))
    return out


@pytest.mark.parametrize("D,expected", [((2.0, 1.0), (0.5, 1.0)), ((3.0, 3.0, 3.0), (1, 1, 1)),
                                        ((1.0, 2.0, 4.0), (1.0, 0.5, 0.25))])
def test_alphas_examples(D, expected):
    np.testing.assert_allclose(alphas(D), expected, atol=1e-15)


@pytest.mark.parametrize("D", [(0.0, 1.0), (-1.0, 2.0), ()])
def test_alphas_rejects(D):
    with pytest.raises(InvalidInputError):
        alphas(D)


def test_epsilon_magnitude_examples():
    np.testing.assert_allclose(epsilon_magnitudes([1.0, 1.0]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(epsilon_magnitudes([0.0, math.log(3.0)]), [0.75, 0.25],
                               atol=1e-15)


@given(st.lists(st.floats(0, 50), min_size=1, max_size=6))
def test_epsilon_magnitudes_sum_to_one(d):
    m = epsilon_magnitudes(d)
    assert abs(m.sum() - 1.0) <= 1e-12 and np.all(m >= 0)


def test_omega_worked_example():
    w = omega([2.0, 1.0], [1.0, 1.0])
    np.testing.assert_array_equal(np.sign(w.epsilon), [1.0, -1.0])
    np.testing.assert_array_equal(w.omega, [1.0, 0.5])


def test_omega_equal_shares_gives_alpha():
    w = omega([2.0, 1.0, 4.0], [0.2, 0.1, 0.4])
    np.testing.assert_array_equal(w.epsilon, [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(w.omega, w.alpha)


def test_omega_clamp():
    # alpha = (0.1, 1, 1); source 1 holds 10/12 of the overall distance but all
    # of the batch distance, so its epsilon is negative: e^-1 / (e^-1 + 2) ~ 0.155
    w = omega([10.0, 1.0, 1.0], [1.0, 0.0, 0.0])
    assert w.alpha[0] == pytest.approx(0.1)
    assert w.epsilon[0] == pytest.approx(-math.exp(-1) / (math.exp(-1) + 2), abs=1e-15)
    assert w.omega[0] == 0.05


def test_omega_toggles():
    D, d = [2.0, 1.0], [1.0, 1.0]
    np.testing.assert_array_equal(omega(D, d, use_alpha=False, use_epsilon=False).omega, [1, 1])
    np.testing.assert_array_equal(omega(D, d, use_epsilon=False).omega, [0.5, 1.0])
    np.testing.assert_array_equal(omega(D, d, use_alpha=False).omega, [1.5, 0.5])


def test_omega_length_mismatch():
    with pytest.raises(InvalidInputError):
        omega([1.0, 2.0], [1.0])


def test_omega_matches_oracle_1000_pairs():
    rng = Rng(2024)
    for t in range(1000):
        m = 1 + t % 4
        D = rng.uniform(0.01, 2.0, m)
        if t % 5 == 0:
            d = D * rng.uniform(0.1, 3.0, 1)[0]  # tie branch
        elif t % 7 == 0:
            d = np.zeros(m)
        else:
            d = rng.uniform(0.0, 3.0, m)
        got = omega(D, d).omega
        np.testing.assert_allclose(got, oracle_omega(D.tolist(), d.tolist()), rtol=0, atol=1e-12)


@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=5), st.floats(0.1, 100))
def test_alpha_scale_invariant(D, c):
    np.testing.assert_allclose(alphas(np.array(D) * c), alphas(D), atol=1e-12)


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=5, unique=True))
def test_exactly_one_alpha_is_one_for_distinct(D):
    a = alphas(D)
    assert np.sum(a == 1.0) == 1 and np.all(a <= 1.0)


@given(st.lists(st.tuples(st.floats(0.01, 10), st.floats(0, 10)), min_size=1, max_size=5))
def test_omega_invariants(pairs):
    D = [p[0] for p in pairs]
    d = [p[1] for p in pairs]
    w = omega(D, d)
    assert np.all(w.omega >= 0.05)
    assert np.abs(w.epsilon).sum() <= 1.0 + 1e-12
    signs = epsilon_signs(D, d)
    favourable = (w.alpha == 1.0) & (signs >= 0)
    assert np.all(w.omega[favourable] >= w.alpha[favourable])
