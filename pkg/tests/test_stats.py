from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noma import stats

from oracles import enum_rank_sum_p, quad_t_pvalue


def test_midranks_ties():
    assert stats.midranks([3, 1, 3, 2]).tolist() == [3.5, 1.0, 3.5, 2.0]


def test_rank_sum_hand_example():
    # 6 equally likely rank pairs for the first sample; {1,2} and {3,4} are the extremes
    assert stats.wilcoxon_rank_sum([1, 2], [3, 4]) == pytest.approx(1 / 3, abs=1e-12)


def test_rank_sum_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(60):
        n = int(rng.integers(2, 8))
        m = int(rng.integers(2, 17 - n))
        # coarse values force ties
        a = rng.integers(0, 6, n).astype(float)
        b = rng.integers(0, 6, m).astype(float) + rng.integers(0, 2)
        if np.all(np.concatenate([a, b]) == a[0]):
            continue
        assert stats.wilcoxon_rank_sum(a, b) == pytest.approx(enum_rank_sum_p(a, b), abs=1e-12)


def test_rank_sum_continuous_matches_enumeration():
    rng = np.random.default_rng(1)
    for n, m in ((2, 2), (3, 5), (8, 8), (4, 12)):
        a, b = rng.normal(size=n), rng.normal(0.5, 1, m)
        assert stats.wilcoxon_rank_sum(a, b) == pytest.approx(enum_rank_sum_p(a, b), abs=1e-12)


def test_rank_sum_identical_is_one():
    assert stats.wilcoxon_rank_sum([2, 2, 2], [2, 2]) == 1.0
    x = np.random.default_rng(2).normal(size=30)
    assert stats.wilcoxon_rank_sum(x, x) == pytest.approx(1.0, abs=1e-9)


def test_rank_sum_detects_shift():
    rng = np.random.default_rng(3)
    assert stats.wilcoxon_rank_sum(rng.normal(size=50), rng.normal(3, 1, 50)) < 1e-6


def test_rank_sum_needs_two_each():
    with pytest.raises(ValueError):
        stats.wilcoxon_rank_sum([1.0], [2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=25),
       st.lists(st.floats(-5, 5), min_size=2, max_size=25))
def test_rank_sum_is_a_probability_and_symmetric(a, b):
    p = stats.wilcoxon_rank_sum(a, b)
    assert 0.0 <= p <= 1.0
    assert p == pytest.approx(stats.wilcoxon_rank_sum(b, a), abs=1e-12)


def test_t_hand_example():
    # mean 2, sd 1, n 3: t = 2 sqrt(3), two-sided p with 2 dof is 1 - t / sqrt(t^2 + 2)
    t = 2 * math.sqrt(3)
    expected = 1 - t / math.sqrt(t * t + 2)
    assert stats.t_test_one_sample([1, 2, 3], 0.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.0742, abs=1e-4)


def test_t_matches_quadrature():
    rng = np.random.default_rng(4)
    for n in (2, 3, 5, 12, 40):
        for _ in range(5):
            xs = rng.normal(rng.normal(), rng.uniform(0.2, 2), n)
            mu0 = float(rng.normal())
            assert stats.t_test_one_sample(xs, mu0) == pytest.approx(quad_t_pvalue(xs, mu0), abs=1e-6)


def test_t_zero_variance():
    assert stats.t_test_one_sample([1.0, 1.0, 1.0], 1.0) == 1.0
    assert stats.t_test_one_sample([1.0, 1.0, 1.0], 2.0) == 0.0


def test_t_at_mean_is_one():
    assert stats.t_test_one_sample([1.0, 2.0, 4.0], 7 / 3) == pytest.approx(1.0, abs=1e-12)


def test_t_needs_two():
    with pytest.raises(ValueError):
        stats.t_test_one_sample([1.0], 0.0)


def test_betainc_known_values():
    assert stats.betainc_reg(1, 1, 0.3) == pytest.approx(0.3, abs=1e-14)
    assert stats.betainc_reg(2, 3, 0.4) == pytest.approx(0.5248, abs=1e-12)
    assert stats.betainc_reg(0.5, 0.5, 0.5) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        stats.betainc_reg(1, 1, 1.5)
