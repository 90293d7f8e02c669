import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from pdisc import analytics, schedules as sc
from pdisc.errors import DegenerateStateError, HorizonError, ScheduleError


def _expectation_closed_form(rho, kappa0, kappa, s):
    """E exp(-(max(rho G, kappa0) - kappa)^2 / s) by completing the square."""
    atom = stats.norm.cdf(kappa0 / rho) * math.exp(-((kappa0 - kappa) ** 2) / s)
    a = 1.0 / s + 1.0 / (2 * rho * rho)
    mu = (kappa / s) / a
    pref = math.exp(kappa * kappa / (s * s * a) - kappa * kappa / s) * math.sqrt(math.pi / a) / (rho * math.sqrt(2 * math.pi))
    return atom + pref * stats.norm.sf((kappa0 - mu) * math.sqrt(2 * a))


@pytest.mark.parametrize("rho,kappa0,kappa,s", [(0.98, 3.42, 0.0, 0.5), (0.7, -1.0, -3.0, 2.0),
                                                (0.999, -5.5, -6.0, 1e-3), (0.5, 0.3, -0.2, 40.0)])
def test_atom_split_matches_closed_form(rho, kappa0, kappa, s):
    assert sc.atom_split_expectation(rho, kappa0, kappa, s) == pytest.approx(
        _expectation_closed_form(rho, kappa0, kappa, s), rel=1e-8, abs=1e-14)


def test_expectation_nondecreasing_in_scale():
    s = np.geomspace(1e-3, 1e3, 40)
    vals = [sc.atom_split_expectation(0.9, -1.0, -2.0, x) for x in s]
    assert np.all(np.diff(vals) >= -1e-14)


def test_r_sequence():
    seq = sc.r_sequence(0.05, 3.42, 12)
    assert seq.R[0] == seq.R0
    assert seq.R0 < 0.0502
    np.testing.assert_allclose(seq.R[1:] / seq.R[:-1], 0.5)
    np.testing.assert_allclose(seq.R_tilde / seq.R, 9 * (np.log(1 / seq.R) + 1) ** 2, rtol=1e-14)
    np.testing.assert_allclose(seq.R_hat / seq.R, 11 * (np.log(1 / seq.R) + 1), rtol=1e-14)
    assert np.all((seq.R > 0) & (seq.R < 1))


def test_betas_and_kp():
    b = sc.neg_betas(200)
    assert b.sum() < 1
    assert b[0] == pytest.approx(0.1 * 2 ** -0.25)
    assert sc.default_kp(-6) == math.ceil(10 * math.log(math.log(6)))
    assert sc.round_count(1000) == math.ceil(2 * math.log(1000))


def _prop_inputs(seed=0):
    rng = np.random.default_rng(seed)
    M, N = 30, 200
    X = rng.standard_normal((M, N))
    theta = np.sign(X.sum(axis=0))  # large margins on every row
    return X, theta


def test_proportional_zero_betas():
    X, th = _prop_inputs()
    sched = sc.proportional_slack(th, X, [np.arange(200)] * 3, -20.0, 0.0, [0, 0, 0], 0.01)
    assert all(np.all(v == 0) for v in sched.vectors)


def test_proportional_budget_identity():
    X, th = _prop_inputs(1)
    M, N = X.shape
    kappa, delta = -20.0, 0.01
    rng = np.random.default_rng(2)
    sets = [np.arange(N), np.sort(rng.choice(N, 100, replace=False)), np.sort(rng.choice(N, 40, replace=False))]
    betas = sc.neg_betas(3)
    sched = sc.proportional_slack(th, X, sets, kappa, 0.0, betas, delta)
    spent = sum(c * np.linalg.norm(X[:, I], axis=1) for c, I in zip(sched.vectors, sets))
    num = X @ th - kappa * math.sqrt(N) - sc.rounding_allowance(delta, N, M)
    np.testing.assert_allclose(spent, betas.sum() * num, rtol=1e-12)
    assert np.all(spent <= X @ th - kappa * math.sqrt(N))


def test_proportional_errors():
    X, th = _prop_inputs()
    with pytest.raises(ScheduleError) as err:
        sc.proportional_round(-th, X, np.arange(200), 5.0, 0.1, 0.01)
    assert err.value.row is not None
    with pytest.raises(ValueError):
        sc.proportional_slack(th, X, [np.arange(200)], -1.0, 0.0, [0.1], 0.5)
    with pytest.raises(ValueError):
        sc.proportional_slack(th, X, [np.arange(200)] * 2, -1.0, 0.0, [0.6, 0.6], 0.01)


def test_schedule_json_round_trip():
    s = sc.proportional_schedule(-6.0, -5.0, 5)
    back = sc.SlackSchedule.from_json(s.to_json())
    assert back.to_json() == s.to_json()
    z = sc.margin_zero_tables()["zero010"].schedule(25)
    assert sc.SlackSchedule.from_json(z.to_json()).per_round[-1]["c_scalar"] == 31.25


def test_conditions_condition1_fails_above_threshold():
    rep = sc.verify_proportional_conditions(2.5, -1.0, 0.0, sc.neg_betas(5), 2, 5)
    assert not rep.ok and rep.worst_margins["condition1"] < 0


def test_conditions_condition4_tiny_beta():
    rep = sc.verify_proportional_conditions(0.05, -1.0, 0.0, np.full(4, 1e-6), 2, 4)
    assert rep.worst_margins["condition4"] < 0
    assert not rep.ok


def test_neg_constant_scan():
    kappa, K = -6.0, 30
    grid = np.geomspace(1e-14, 10.0, 151)
    C = sc.scan_neg_constant(kappa, 6.0, K, grid=grid)
    assert C > 0
    alpha = 0.5 * C / (stats.norm.cdf(kappa) * kappa * kappa)
    rep = sc.verify_proportional_conditions(alpha, kappa, kappa + 1.0, sc.neg_betas(K), sc.default_kp(kappa), K)
    assert rep.ok


def test_ode_closed_form_without_constraints():
    with pytest.raises(HorizonError):
        sc.ode_coloring_params(0.0, 2.0, 0.3)


def test_ode_degenerate_start():
    with pytest.raises(DegenerateStateError):
        sc.ode_coloring_params(1.0, 2.0, 1.0)


def test_ode_reference_point():
    od = sc.ode_coloring_params(1.008960, 2.0, 0.332645)
    assert 0 <= od.T2 <= od.T1
    assert od.T1 == pytest.approx(2.0577, abs=2e-3)
    assert od.p1 == pytest.approx(0.6648, abs=2e-3)
    assert od.p0 == pytest.approx(0.5086, abs=2e-3)
    # u is the exact solution of u' = 1 - u - v while positive: check against quadrature
    t, u, v = od.t_grid, od.u_grid, od.v_grid
    du = np.gradient(u, t)
    mid = slice(10, -10)
    np.testing.assert_allclose(du[mid], np.maximum(1 - u - v, 0)[mid], atol=1e-3)


@settings(max_examples=12, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.5, 4.0), st.floats(0.0, 0.6))
def test_ode_shape(alpha, c, r0):
    try:
        od = sc.ode_coloring_params(alpha, c, r0, step=1e-3)
    except (DegenerateStateError, HorizonError):
        return
    t = od.t_grid
    assert np.all(np.diff(od.v_grid) >= -1e-12)
    assert np.all(np.diff(od.u_grid) >= -1e-12)
    assert np.all(od.u_grid[t <= od.T1] <= 1 + 1e-12)
    assert 0 <= od.T2 <= od.T1
    assert 0 <= od.p1 <= 1 and 0 <= od.p0 <= 1


def test_effective_stage2():
    st2 = sc.effective_stage2(0.1, 2.31)
    assert st2["alpha0"] == pytest.approx(1.008960, abs=5e-4)
    assert st2["r0"] == pytest.approx(0.332645, abs=5e-4)
    op = analytics.solve_order_params(0.1, 2.31)
    assert st2["r"] == pytest.approx(2 * stats.norm.cdf(-op.t))
    assert st2["rho"] ** 2 >= st2["r"]


def test_tables_verbatim():
    t = sc.margin_zero_tables()
    assert t["zero005"].c_scalar(1) == 6.440850
    assert t["zero005"].c_scalar(20) == 15.562490
    assert t["zero005"].c_scalar(25) == 31.25
    assert t["zero010"].c_scalar(1) == 2.00


def test_alpha005_drift_and_inequalities():
    t = sc.margin_zero_tables()["zero005"]
    direct = sum(t.c_scalar(k) * math.sqrt((1 - 0.9498) * (1 - 1 / 1.3745) ** (k - 1)) for k in range(1, 401))
    assert t.drift_bound() == pytest.approx(direct, rel=1e-12)
    assert t.drift_bound() < 3.39
    rows = t.round_inequalities()
    assert len(rows) == 20 and all(r["holds"] for r in rows)
    for r in rows:
        assert r["lhs"] == pytest.approx(2 * 0.05 * stats.norm.cdf(-t.c_scalar(r["k"]) / math.sqrt(4.2)))


def test_alpha010_survival_reading():
    t = sc.margin_zero_tables()["zero010"]
    recs = t.ode_check()
    assert all("error" not in r for r in recs)
    # the tabulated fraction sits just above the computed surviving fraction
    assert max(abs(r["survival_gap"]) for r in recs) < 0.011
    assert sum(r["survival_reading_gt"] for r in recs) >= 19
    assert sum(r["p0_table_lt"] for r in recs) >= 19
    assert t.drift_bound() < 2.0


def test_row_normalized_slack():
    X = np.random.default_rng(0).standard_normal((4, 9))
    I = np.array([0, 3, 5])
    c = sc.row_normalized_slack(2.0, X, I)
    np.testing.assert_allclose(c * np.linalg.norm(X[:, I], axis=1), 2.0 * math.sqrt(3))


def test_adaptive_scalar_meets_precondition():
    for M, n in [(27, 1), (27, 26), (200, 5)]:
        c = sc.adaptive_zero_scalar(M, n)
        total = 2 * M * special.ndtr(-c / math.sqrt(sc.K1_ZERO))
        assert total <= n / sc.K2_ZERO + 1e-12


def test_refined_rounds_use_ode_certificate():
    t = sc.margin_zero_tables()["zero010"]
    rows = t.round_inequalities()
    assert not any(r["applies"] for r in rows[: t.refined_rounds])
    for r in rows:
        assert r["rhs"] == pytest.approx(t.predicted_free_fraction(r["k"]) / t.K2)
    assert all(r["applies"] for r in sc.margin_zero_tables()["zero005"].round_inequalities())
