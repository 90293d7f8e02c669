import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from pdisc import capacity, ogp


@pytest.mark.parametrize("kappa", [-3.0, -5.0])
def test_single_tuple_root_is_first_moment_bound(kappa):
    root = ogp.ogp_alpha_root(1, 0.5, 1e-9, kappa)
    assert root == pytest.approx(capacity.alpha_up(kappa), rel=1e-6)


def test_no_constraints_positive():
    q = ogp.OgpQuery(m=4, beta=0.6, eta=0.1, alpha=0.0, kappa=-3.0, iota=0.2)
    expect = math.log(2) + 3 * ogp.binary_entropy((1 + 0.6 - 0.1) / 2) + 4 * 0.2
    assert ogp.ogp_exponent(q) == pytest.approx(expect)
    assert expect > 0


def test_large_kappa_scan():
    res = ogp.ogp_constant_scan(-10.0)
    assert res["m"] == 100
    assert res["exponent"] < 0
    # the previous power of two does not yet make it negative
    k2, L = 100.0, math.log(10.0) ** 2
    prev = res["C1"] / 2 * L / (k2 * stats.norm.cdf(-10.0))
    q = ogp.OgpQuery(100, res["beta"], res["eta"], prev, -10.0)
    assert ogp.ogp_exponent(q) >= 0


def test_domain_errors():
    with pytest.raises(ValueError):
        ogp.constraint_log_prob(2, 0.5, 3.0)
    with pytest.raises(ValueError):
        ogp.OgpQuery(1, 0.2, 0.3, 1.0, -3.0)
    with pytest.raises(ValueError):
        ogp.joint_tail_bound(-1.0, 0.5)
    with pytest.raises(ValueError):
        ogp.joint_tail_bound(-3.0, 1.5)


def test_no_underflow_far_tail():
    assert ogp.constraint_log_prob(1, 0.5, -12.0) < 0


@given(st.floats(0, 50), st.floats(0, 50))
def test_exponent_monotone_in_alpha(a, b):
    lo, hi = sorted((a, b))
    q = dict(m=3, beta=0.7, eta=0.2, kappa=-3.0)
    assert ogp.ogp_exponent(ogp.OgpQuery(alpha=hi, **q)) <= ogp.ogp_exponent(ogp.OgpQuery(alpha=lo, **q))


@given(st.floats(0, 2), st.floats(0, 2), st.integers(1, 5))
def test_exponent_slope_in_iota(i1, i2, m):
    q = dict(m=m, beta=0.7, eta=0.2, alpha=10.0, kappa=-3.0)
    d = ogp.ogp_exponent(ogp.OgpQuery(iota=i2, **q)) - ogp.ogp_exponent(ogp.OgpQuery(iota=i1, **q))
    assert d == pytest.approx(m * (i2 - i1), abs=1e-9)


@given(st.floats(-8, -2), st.floats(0, 1), st.floats(0, 1))
def test_bound_nondecreasing_in_q(A, q1, q2):
    lo, hi = sorted((q1, q2))
    assert ogp.joint_tail_bound(A, lo) <= ogp.joint_tail_bound(A, hi) + 1e-300


def test_q_one_degenerate():
    A = -3.0
    est = ogp.joint_tail_mc(A, 1.0, draws=10)
    assert est.estimate == pytest.approx(stats.norm.cdf(A))
    assert ogp.joint_tail_bound(A, 1.0) == pytest.approx(2 * stats.norm.cdf(A))


def test_importance_sampler_is_unbiased():
    # against the exact bivariate normal CDF
    A, q = -3.0, 0.5
    est = ogp.joint_tail_mc(A, q, draws=10**6, seed=1)
    exact = stats.multivariate_normal([0, 0], [[1, q], [q, 1]]).cdf([A, A])
    assert abs(est.estimate - exact) <= 4 * est.std_error + 1e-12


@pytest.mark.parametrize("A,q", [(-3.0, 0.0), (-4.0, 0.5)])
def test_bound_dominates(A, q):
    est = ogp.joint_tail_mc(A, q, draws=10**7, seed=2)
    assert est.dominated
    if q == 0.0:
        assert est.estimate == pytest.approx(stats.norm.cdf(A) ** 2, rel=1e-6)


def test_grid_rows():
    rows = ogp.ogp_grid([-3.0], [10.0, 20.0], [1, 2], [0.5], [0.1])
    assert len(rows) == 4
    assert all(tuple(r) == ogp.OGP_CSV_COLUMNS for r in rows)
    bad = ogp.ogp_grid([3.0], [1.0], [2], [0.5], [0.1])
    assert math.isnan(bad[0]["exponent"])


def test_mc_chunks_are_deterministic():
    a = ogp.joint_tail_mc(-3.0, 0.9, draws=3000, seed=5, chunk=1000)
    b = ogp.joint_tail_mc(-3.0, 0.9, draws=3000, seed=5, chunk=1000)
    assert a == b
