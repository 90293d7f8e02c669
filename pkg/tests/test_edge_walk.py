import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from pdisc.edge_walk import (ColoringConfig, WalkState, active_sets, check_precondition, edge_walk_run,
                             partial_coloring, project_gaussian, slack_sum)
from pdisc.errors import ScheduleError


def _cfg(**kw):
    return ColoringConfig.general(**kw)


def test_active_sets_trivial_cases():
    X = np.random.default_rng(0).standard_normal((3, 5))
    th0 = np.full(5, 0.2)
    st_ = WalkState(theta=th0.copy(), theta0=th0.copy())
    v, d = active_sets(st_, X, np.ones(3), 0.0)
    assert v.size == 0 and d.size == 0
    th = th0.copy()
    th[1] = 1.0
    for delta in (0.0, 0.05):
        assert 1 in active_sets(WalkState(theta=th, theta0=th0), X, np.ones(3), delta)[0]


def test_active_sets_boundary_row():
    X = np.array([[3.0, 4.0]])
    th0 = np.zeros(2)
    # <theta - theta0, X_1> = -0.5 * ||X_1|| = -2.5
    th = np.array([-0.3, -0.4])
    for delta in (0.0, 0.01):
        assert list(active_sets(WalkState(theta=th, theta0=th0), X, np.array([0.5]), delta)[1]) == [0]


def test_projection_unconstrained_covariance():
    rng = np.random.default_rng(1)
    draws = np.array([project_gaussian(np.zeros((0, 20)), [], 20, rng) for _ in range(10**5)])
    C = draws.T @ draws / draws.shape[0]
    assert np.linalg.norm(C - np.eye(20), 2) <= 0.1


def test_projection_all_fixed_and_row():
    assert np.all(project_gaussian(np.zeros((0, 6)), np.arange(6), 6, 0) == 0)
    X1 = np.random.default_rng(2).standard_normal((1, 30))
    u = project_gaussian(X1, [3, 7], 30, 5)
    assert abs(u @ X1[0]) <= 1e-8 * np.linalg.norm(X1) * np.linalg.norm(u)
    assert u[3] == 0.0 and u[7] == 0.0


def test_projection_dependent_rows():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((2, 15))
    rows = np.vstack([A, A[0] + 2 * A[1]])
    u = project_gaussian(rows, [], 15, 4)
    assert np.max(np.abs(rows @ u)) <= 1e-8 * np.linalg.norm(u) * np.linalg.norm(rows)


@settings(max_examples=15)
@given(st.integers(0, 10**6), st.integers(0, 8), st.integers(0, 6))
def test_projection_norm_growth(seed, n_fixed, n_rows):
    # E||U||^2 = dim V; checked against the exact projector trace
    N = 12
    rng = np.random.default_rng(seed)
    fixed = rng.choice(N, n_fixed, replace=False)
    rows = rng.standard_normal((n_rows, N))
    free = np.setdiff1d(np.arange(N), fixed)
    dim = max(free.size - np.linalg.matrix_rank(rows[:, free]) if n_rows and free.size else free.size, 0)
    u = np.array([project_gaussian(rows, fixed, N, rng) for _ in range(2000)])
    mean_sq = np.mean(np.sum(u * u, axis=1))
    assert abs(mean_sq - dim) <= 5 * math.sqrt(2 * max(dim, 1) / 2000) + 1e-12


def test_stationary_when_all_fixed():
    th0 = np.array([1.0, -1.0, 1.0])
    X = np.random.default_rng(0).standard_normal((2, 3))
    s = edge_walk_run(X, np.ones(2), th0, _cfg(delta=0.05, gamma=0.01), seed=0)
    assert np.array_equal(s.theta, th0)
    assert s.stopped_early


@pytest.mark.parametrize("seed", range(20))
def test_discrepancy_preserved(seed):
    rng = np.random.default_rng(100 + seed)
    M, N = 30, 60
    X = rng.standard_normal((M, N))
    c = np.full(M, 1.0)
    th0 = rng.uniform(-0.5, 0.5, N)
    cfg = ColoringConfig.general(delta=0.02, gamma=0.02, retries=1)
    s = edge_walk_run(X, c, th0, cfg, seed=seed)
    disp = X @ (s.theta - th0)
    assert np.all(disp >= -c * np.linalg.norm(X, axis=1) - 1e-9)
    assert np.all(np.abs(s.theta) <= 1.0)


class _Recorder:
    """Observer checking monotone freezing and orthogonality on every accepted block."""

    def __init__(self, X):
        self.X = X
        self.prev_var = set()
        self.prev_disc = set()
        self.worst_orth = 0.0
        self.calls = 0

    def __call__(self, t0, free, U, c_var, c_disc):
        self.calls += 1
        assert self.prev_var <= set(c_var.tolist())
        assert self.prev_disc <= set(c_disc.tolist())
        assert not set(free.tolist()) & set(c_var.tolist())
        self.prev_var, self.prev_disc = set(c_var.tolist()), set(c_disc.tolist())
        if c_disc.size:
            rows = self.X[np.ix_(c_disc, free)]
            ip = np.abs(U @ rows.T)
            scale = np.linalg.norm(U, axis=1)[:, None] * np.linalg.norm(self.X[c_disc], axis=1)[None, :]
            self.worst_orth = max(self.worst_orth, float(np.max(ip / np.maximum(scale, 1e-300))))


def test_monotone_sets_and_orthogonality():
    rng = np.random.default_rng(5)
    M, N = 40, 50
    X = rng.standard_normal((M, N))
    rec = _Recorder(X)
    cfg = ColoringConfig.general(delta=0.02, gamma=0.03)
    s = edge_walk_run(X, np.full(M, 0.5), np.zeros(N), cfg, seed=1, observer=rec)
    assert rec.calls > 0 and len(rec.prev_disc) > 0
    assert rec.worst_orth <= 1e-8
    assert set(rec.prev_var) <= set(s.c_var.tolist())


def test_final_state_sets_match_thresholds():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((20, 40))
    c = np.full(20, 0.8)
    cfg = ColoringConfig.general(delta=0.02, gamma=0.03)
    s = edge_walk_run(X, c, np.zeros(40), cfg, seed=2)
    v, d = active_sets(s, X, c, cfg.delta)
    assert np.array_equal(v, s.c_var)
    assert np.array_equal(d, s.c_disc)


def test_martingale_tail_small():
    runs, N, T = 400, 10, 200
    cfg = ColoringConfig.general(delta=0.04, gamma=1e-3)
    v = np.ones(N) / math.sqrt(N)
    z = np.array([v @ edge_walk_run(np.zeros((0, N)), np.zeros(0), np.zeros(N), cfg, seed=s, T=T).theta
                  for s in range(runs)]) / cfg.gamma
    p = np.mean(z >= math.sqrt(T))
    assert p <= 2 * stats.norm.cdf(-1) + 3 * math.sqrt(p * (1 - p) / runs) + 1e-12


def test_config_defaults_and_delta_contract():
    cfg = ColoringConfig.general().resolve(1000)
    ln = math.log(1000)
    assert cfg.delta == pytest.approx(0.05 / ln)
    assert cfg.gamma == pytest.approx(cfg.delta / math.sqrt(ln))
    assert cfg.retries == math.ceil(10 * ln)
    assert cfg.steps() == math.ceil(16 / (3 * cfg.gamma ** 2))
    with pytest.raises(ValueError):
        ColoringConfig.general(delta=0.2).resolve(1000)
    with pytest.raises(ValueError):
        ColoringConfig.zero_margin(K1=2, K2=2, K3=2)
    z = ColoringConfig.zero_margin(gamma=0.1, delta=0.01)
    assert z.steps() == math.ceil(4.2 / 0.01) and z.required_fraction() == pytest.approx(1 / 1.3745)


def test_precondition_error():
    c = np.zeros(50)
    cfg = ColoringConfig.general().resolve(100)
    assert slack_sum(c, "general16_8", 16.0) == 50.0
    with pytest.raises(ScheduleError):
        check_precondition(c, 100, cfg)
    with pytest.raises(ScheduleError):
        partial_coloring(np.ones((50, 100)), c, np.zeros(100), cfg)


def test_unconstrained_success_rate():
    N = 200
    cfg = ColoringConfig.general(delta=0.015, gamma=0.05)
    ok = 0
    for s in range(50):
        res = partial_coloring(np.zeros((1, N)), np.array([np.inf]), np.zeros(N), cfg, seed=s)
        ok += res.success and res.fraction >= 0.5
    assert ok == 50


def test_zero_margin_shaped_round():
    # alpha=0.05 shaped: rows 5% of columns, free 5% of coordinates, tabulated first slack scalar
    from pdisc import schedules
    rng = np.random.default_rng(8)
    N, M = 100, 100
    X = rng.standard_normal((M, N))
    c = schedules.margin_zero_tables()["zero005"].row_slack(1, X, np.arange(N))
    cfg = ColoringConfig.zero_margin()
    res = partial_coloring(X, c, rng.uniform(-0.5, 0.5, N), cfg, seed=3)
    assert res.success and res.fraction >= 1 / 1.3745


def test_partial_coloring_unpacks_and_is_deterministic():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((10, 60))
    cfg = ColoringConfig.general(delta=0.02, gamma=0.05)
    a_theta, a_ok = partial_coloring(X, np.full(10, 3.0), np.zeros(60), cfg, seed=4)
    b_theta, b_ok = partial_coloring(X, np.full(10, 3.0), np.zeros(60), cfg, seed=4)
    assert a_ok == b_ok and np.array_equal(a_theta, b_theta)
