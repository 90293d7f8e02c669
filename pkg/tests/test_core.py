import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from pdisc.core import (Instance, empirical_quantile, generate_instance, load_instance, margins,
                        save_instance, verify_solution, wasserstein2)
from pdisc.errors import SizeError


def test_generation_is_deterministic():
    a = generate_instance(3, 4, 0.0, 7)
    b = generate_instance(3, 4, 0.0, 7)
    assert a.X.shape == (3, 4)
    assert np.array_equal(a.X, b.X)
    assert not np.array_equal(a.X, generate_instance(3, 4, 0.0, 8).X)


def test_entries_look_standard_normal():
    X = generate_instance(200, 100, 0.0, 1).X
    assert abs(X.mean()) < 0.05
    assert abs(X.var() - 1.0) < 0.1
    assert np.all(np.isfinite(X))


@pytest.mark.parametrize("M,N", [(0, 5), (5, 0), (-1, 3)])
def test_bad_sizes(M, N):
    with pytest.raises(SizeError):
        generate_instance(M, N, 0.0, 0)


def test_oversized_request_is_refused_before_allocation():
    with pytest.raises(SizeError):
        generate_instance(10**6, 10**6, 0.0, 0)


def test_instance_is_read_only():
    inst = generate_instance(3, 3, 0.0, 0)
    with pytest.raises(ValueError):
        inst.X[0, 0] = 1.0


def test_margins_of_zero_and_basis_vector():
    inst = generate_instance(5, 16, 0.0, 3)
    assert np.all(margins(inst, np.zeros(16)) == 0)
    e1 = np.zeros(16)
    e1[0] = math.sqrt(16)
    np.testing.assert_allclose(margins(inst, e1), inst.X[:, 0], rtol=0, atol=1e-14)


def test_margins_length_mismatch():
    inst = generate_instance(2, 3, 0.0, 0)
    with pytest.raises(ValueError):
        margins(inst, np.ones(4))


def test_random_sign_margins_are_normal():
    inst = generate_instance(1000, 1000, 0.0, 5)
    chi = np.where(np.random.default_rng(0).random(1000) < 0.5, -1.0, 1.0)
    ks = stats.kstest(margins(inst, chi), "norm").statistic
    assert ks < 0.05


@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_margins_linear(seed, a, b):
    inst = generate_instance(6, 9, 0.0, 11)
    rng = np.random.default_rng(seed)
    t1, t2 = rng.standard_normal(9), rng.standard_normal(9)
    lhs = margins(inst, a * t1 + b * t2)
    rhs = a * margins(inst, t1) + b * margins(inst, t2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_verify_hand_built():
    inst = Instance(np.array([[1.0, 0.0], [0.0, -1.0]]), 0.0)
    rep = verify_solution(inst, np.array([1.0, -1.0]), 0.0)
    assert rep.feasible and rep.binary
    assert rep.min_margin == pytest.approx(1 / math.sqrt(2), abs=1e-15)


def test_verify_extreme_kappa_and_non_binary():
    inst = generate_instance(20, 30, 0.0, 2)
    chi = np.ones(30)
    assert verify_solution(inst, chi, -1e6).feasible
    chi[4] = 0.5
    assert not verify_solution(inst, chi, -1e6).binary


@given(st.integers(0, 2**31), st.floats(-1.5, 1.5))
def test_feasible_iff_min_margin(seed, kappa):
    inst = generate_instance(8, 12, kappa, 4)
    chi = np.where(np.random.default_rng(seed).random(12) < 0.5, -1.0, 1.0)
    rep = verify_solution(inst, chi, kappa)
    m = margins(inst, chi)
    assert rep.feasible == bool(m.min() >= kappa) == (rep.min_margin >= 0) == (not rep.violated_rows)
    assert rep.violated_rows == sorted(rep.violated_rows)
    assert rep.violated_rows == [i for i in range(8) if m[i] < kappa]


def test_w2_two_atoms_and_grid():
    assert wasserstein2(np.full(10, 2.0), lambda p: np.full_like(p, -1.0)) == pytest.approx(3.0)
    g = 4096
    p = (np.arange(g) + 0.5) / g
    assert wasserstein2(stats.norm.ppf(p), stats.norm.ppf, g) < 1e-12


def test_w2_normal_samples():
    x = np.random.default_rng(1).standard_normal(10**5)
    assert wasserstein2(x, stats.norm.ppf) <= 0.02


def test_w2_empty():
    with pytest.raises(ValueError):
        wasserstein2([], stats.norm.ppf)


@given(st.integers(0, 2**31), st.integers(2, 300))
def test_w2_symmetric_for_equal_size_empirical(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(n), rng.exponential(size=n)
    d1 = wasserstein2(a, empirical_quantile(b))
    d2 = wasserstein2(b, empirical_quantile(a))
    assert abs(d1 - d2) <= 1e-10


@pytest.mark.parametrize("full", [True, False])
def test_instance_file_round_trip(tmp_path, full):
    inst = generate_instance(4, 6, -0.5, 99)
    path = tmp_path / "inst.pdisc"
    save_instance(inst, path, include_matrix=full)
    back = load_instance(path)
    assert (back.M, back.N, back.kappa, back.seed) == (4, 6, -0.5, 99)
    assert np.array_equal(back.X, inst.X)


def test_instance_file_bad_magic(tmp_path):
    path = tmp_path / "x"
    path.write_bytes(b"NOPE\n1\n1\n0\n0\n")
    with pytest.raises(ValueError):
        load_instance(path)
