import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arw.errors import EmptySample
from arw.stats import dkw_epsilon, dominance_test, mean_se, two_proportion_z, wilson_interval


def test_wilson_known_value():
    # 95% Wilson interval for 8/10 (textbook value)
    lo, hi = wilson_interval(8, 10, 0.95)
    assert math.isclose(lo, 0.4901624, abs_tol=1e-6)
    assert math.isclose(hi, 0.9433178, abs_tol=1e-6)


@given(st.integers(0, 500), st.integers(1, 500))
def test_wilson_bounds(k, n):
    k = min(k, n)
    lo, hi = wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_wilson_shrinks_like_inverse_sqrt():
    w = [np.subtract(*wilson_interval(n // 3, n)[::-1]) for n in (900, 3600, 14400)]
    assert math.isclose(w[0] / w[1], 2.0, rel_tol=0.02)
    assert math.isclose(w[1] / w[2], 2.0, rel_tol=0.02)


def test_wilson_coverage_on_synthetic_streams():
    rng = np.random.default_rng(0)
    p, n = 0.3, 400
    hits = 0
    for _ in range(2000):
        lo, hi = wilson_interval(int(rng.binomial(n, p)), n, 0.99)
        hits += lo <= p <= hi
    assert hits / 2000 > 0.975


def test_dkw_formula():
    assert math.isclose(dkw_epsilon(0.01, 10_000), math.sqrt(math.log(200) / 20_000))


def test_dominance_examples():
    v = dominance_test([3, 1, 2], [1, 2, 3])
    assert v.one_sided_stat == 0 and v.passed
    assert dominance_test([1, 1, 1], [0, 0, 0]).passed
    assert not dominance_test(np.zeros(10_000), np.ones(10_000), 0.01).passed
    with pytest.raises(EmptySample):
        dominance_test([], [1])


def test_dominance_synthetic_shifted_samples():
    rng = np.random.default_rng(1)
    a = rng.poisson(5.2, 5000)
    b = rng.poisson(5.0, 5000)
    assert dominance_test(a, b).passed
    assert not dominance_test(rng.poisson(4.0, 5000), b).passed


def test_mean_se_and_z():
    m, se = mean_se([1.0, 2.0, 3.0])
    assert m == 2.0 and math.isclose(se, 1 / math.sqrt(3))
    z, p = two_proportion_z(50, 100, 50, 100)
    assert z == 0 and p == 1.0
