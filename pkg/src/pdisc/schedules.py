"""Slack schedules for the rounding stage.

Three families:

* proportional: c_j^(k) = beta_k (<theta_hat, X_j> - kappa sqrt N - 4 sqrt(delta N log M)) / ||(X_j)_I||,
  validated by four scalar conditions built from the LP order parameters;
* tabulated margin-zero scalars c^(k), normalized per row as c^(k) sqrt|I| / ||(X_j)_I||;
* the ODE description of the walk (u, v, T1, T2, p0, p1) used by the refined
  margin-zero partial-coloring bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import analytics
from .errors import DegenerateStateError, HorizonError, InfeasibleError, ScheduleError

K1_GENERAL = 16.0
K2_GENERAL = 8.0
K1_ZERO, K2_ZERO, K3_ZERO = 4.2, 30.0, 1.3745


def round_count(N: int) -> int:
    return math.ceil(2.0 * math.log(max(N, 2)))


# ---------------------------------------------------------------- R sequences

@dataclass(frozen=True)
class RSequence:
    R0: float
    R: np.ndarray  # R_k, k = 1..K
    R_hat: np.ndarray
    R_tilde: np.ndarray

    @property
    def K(self) -> int:
        return self.R.size


def r_sequence(alpha: float, kappa0: float, K: int) -> RSequence:
    """R_k = 2^(1-k) R0 with R0 = 1 - 2 Phi(-t(alpha, kappa0))."""
    op = analytics.solve_order_params(alpha, kappa0).require()
    R0 = 1.0 - op.tight_prediction
    k = np.arange(1, K + 1)
    R = R0 * np.power(2.0, 1 - k)
    L = np.log(1.0 / R) + 1.0
    return RSequence(R0, R, 11.0 * R * L, 9.0 * R * L * L)


def neg_betas(K: int, beta0: float = 0.1) -> np.ndarray:
    """beta_k = beta0 2^(-k/4); their sum stays below beta0 / (2^(1/4) - 1)."""
    return beta0 * np.power(2.0, -np.arange(1, K + 1) / 4.0)


def default_kp(kappa: float) -> int:
    return max(1, math.ceil(10.0 * math.log(math.log(max(abs(kappa), 3.0)))))


# ------------------------------------------------------------ slack schedules

@dataclass
class SlackSchedule:
    variant: str
    kappa0: float
    constants: dict
    per_round: list  # [{"k": k, "c_scalar": ..} or {"k": k, "beta": ..}]
    vectors: list = field(default_factory=list)  # realized c^(k) in R^M, optional

    def to_json(self) -> str:
        return json.dumps({"variant": self.variant, "kappa0": self.kappa0,
                           "constants": self.constants, "per_round": self.per_round},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SlackSchedule":
        d = json.loads(text)
        return cls(d["variant"], d["kappa0"], d["constants"], d["per_round"])


def _check_delta(delta: float, M: int):
    bound = 0.1 / math.log(max(M, 3))
    if not 0 < delta <= bound + 1e-15:
        raise ValueError(f"delta={delta} must lie in (0, 0.1/log(max(M,3))] = (0, {bound:.6g}]")


def rounding_allowance(delta: float, N: int, M: int) -> float:
    """4 sqrt(delta N log M): the margin reserved for the final randomized rounding."""
    return 4.0 * math.sqrt(delta * N * math.log(max(M, 2)))


def proportional_round(theta_hat, X, I, kappa: float, beta: float, delta: float) -> np.ndarray:
    """Slack vector of one round for the free columns I."""
    X = np.asarray(X, dtype=np.float64)
    M, N = X.shape
    num = X @ np.asarray(theta_hat, dtype=np.float64) - kappa * math.sqrt(N) - rounding_allowance(delta, N, M)
    bad = np.flatnonzero(num < 0)
    if bad.size:
        j = int(bad[np.argmin(num[bad])])
        raise ScheduleError(
            f"row {j} has negative slack numerator {num[j]:.6g}: the kappa0 - kappa margin is exhausted",
            row=j, diagnostics={"numerator": float(num[j]), "negative_rows": int(bad.size)})
    norms = np.linalg.norm(X[:, np.asarray(I, dtype=np.int64)], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(norms > 0, beta * num / norms, np.inf)
    return np.where(beta == 0, 0.0, c)


def proportional_slack(theta_hat, X, active_sets, kappa: float, kappa0: float, betas, delta: float) -> SlackSchedule:
    """c_j^(k) for every round, given the realized free sets I_0, I_1, ..."""
    betas = np.asarray(betas, dtype=np.float64)
    if np.any(betas < 0) or betas.sum() >= 1:
        raise ValueError("betas must be nonnegative with sum < 1")
    if kappa0 <= kappa:
        raise ValueError("kappa0 must exceed kappa")
    X = np.asarray(X, dtype=np.float64)
    _check_delta(delta, X.shape[0])
    vecs = [proportional_round(theta_hat, X, I, kappa, float(b), delta)
            for I, b in zip(active_sets, betas)]
    return SlackSchedule("proportional", float(kappa0),
                         {"kappa": kappa, "delta": delta, "K1": K1_GENERAL, "K2": K2_GENERAL},
                         [{"k": k + 1, "beta": float(b)} for k, b in enumerate(betas)], vecs)


def proportional_schedule(kappa: float, kappa0: float, K: int, beta0: float = 0.1) -> SlackSchedule:
    betas = neg_betas(K, beta0)
    return SlackSchedule("proportional", float(kappa0), {"kappa": kappa, "beta0": beta0,
                                                         "K1": K1_GENERAL, "K2": K2_GENERAL},
                         [{"k": k + 1, "beta": float(b)} for k, b in enumerate(betas)])


def atom_split_expectation(rho: float, kappa0: float, kappa: float, scale: float) -> float:
    """E exp(-(Y - kappa)^2 / scale) for Y = max(rho G, kappa0).

    The atom at kappa0 (mass Phi(kappa0/rho)) is exact; the continuous part is
    integrated with adaptive quadrature.
    """
    atom = special.ndtr(kappa0 / rho) * math.exp(-((kappa0 - kappa) ** 2) / scale)
    f = lambda y: math.exp(-((y - kappa) ** 2) / scale - 0.5 * (y / rho) ** 2) / (rho * math.sqrt(2 * math.pi))
    # the integrand is a Gaussian bump; split at its peak so quad sees it
    peak = max(kappa0, (2 * kappa * rho * rho / scale) / (2 * rho * rho / scale + 1))
    width = rho / math.sqrt(2 * rho * rho / scale + 1)
    pts = [kappa0] + [p for p in (peak, peak + 8 * width, peak + 40 * width) if p > kappa0]
    cont = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        cont += integrate.quad(f, a, b, epsabs=0, epsrel=1e-12, limit=200)[0]
    cont += integrate.quad(f, pts[-1], np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
    return float(atom + cont)


@dataclass
class ConditionReport:
    ok: bool
    worst_margins: dict
    per_round: list

    def to_dict(self) -> dict:
        return {"ok": self.ok, "worst_margins": self.worst_margins, "per_round": self.per_round}


def verify_proportional_conditions(alpha: float, kappa: float, kappa0: float, betas, K_p: int, K: int,
                                   K1: float = K1_GENERAL, K2: float = K2_GENERAL) -> ConditionReport:
    """Evaluate the four scalar conditions; margins are (left minus right), positive = satisfied."""
    betas = np.asarray(betas, dtype=np.float64)[:K]
    thr = analytics.feasibility_threshold(kappa0)
    c1 = thr - alpha
    worst = {"condition1": c1, "condition2": math.inf, "condition3": math.inf, "condition4": math.inf}
    rows = []
    op = analytics.solve_order_params(alpha, kappa0)
    if not op.feasible:
        worst = {k: (v if k == "condition1" else -math.inf) for k, v in worst.items()}
        return ConditionReport(False, worst, rows)
    seq = r_sequence(alpha, kappa0, K)
    gap2 = (kappa0 - kappa) ** 2
    for k in range(1, K + 1):
        b2 = betas[k - 1] ** 2
        Rk, Rh, Rt = seq.R[k - 1], seq.R_hat[k - 1], seq.R_tilde[k - 1]
        rec = {"k": k}
        if k <= K_p:
            if b2 == 0:
                E = 1.0
            else:
                E = atom_split_expectation(op.rho, kappa0, kappa, K1 * Rk / b2)
            rec["condition2"] = (Rk / (K2 * E) if E > 0 else math.inf) - alpha
            rec["condition4"] = b2 * gap2 / K1 - 3.0 * Rk
        else:
            expo = b2 * gap2 / (K1 * Rh)
            rec["condition3"] = (math.exp(expo) if expo < 700 else math.inf) * Rk / K2 - alpha
            rec["condition4"] = b2 * gap2 / (2.0 * K1) - Rt
        for key in ("condition2", "condition3", "condition4"):
            if key in rec:
                worst[key] = min(worst[key], rec[key])
        rows.append(rec)
    ok = all(v > 0 for v in worst.values())
    return ConditionReport(ok, worst, rows)


def scan_neg_constant(kappa: float, c0: float, K: int, beta0: float = 0.1, K_p: int | None = None,
                      grid=None) -> float:
    """Largest C on a log grid for which every condition holds at alpha = C/(Phi(kappa) kappa^2)."""
    K_p = default_kp(kappa) if K_p is None else K_p
    kappa0 = kappa + c0 / abs(kappa)
    betas = neg_betas(K, beta0)
    scale = 1.0 / (special.ndtr(kappa) * kappa * kappa)
    grid = np.geomspace(1e-4, 10.0, 41) if grid is None else np.asarray(grid)
    best = 0.0
    for C in grid:
        if verify_proportional_conditions(C * scale, kappa, kappa0, betas, K_p, K).ok:
            best = max(best, float(C))
    return best


# ------------------------------------------------------------- ODE parameters

@dataclass
class OdeParams:
    alpha: float
    r0: float
    c_law: list
    T1: float
    T2: float
    p0: float
    p1: float
    u_T1: float
    t_grid: np.ndarray = field(repr=False, default=None)
    u_grid: np.ndarray = field(repr=False, default=None)
    v_grid: np.ndarray = field(repr=False, default=None)

    def u(self, t):
        return np.interp(t, self.t_grid, self.u_grid)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("alpha", "r0", "c_law", "T1", "T2", "p0", "p1", "u_T1")}


def _v_func(alpha: float, c: np.ndarray):
    zero = float(np.mean(c == 0))

    def v(t):
        t = np.asarray(t, dtype=np.float64)
        out = np.empty(t.shape)
        pos = t > 0
        if np.any(pos):
            s = np.sqrt(t[pos])
            out[pos] = 2 * alpha * special.ndtr(-c[None, :] / s[:, None]).mean(axis=1)
        out[~pos] = 0.0
        return out if out.ndim else float(out)
    return v, 2 * alpha * zero


def ode_coloring_params(alpha: float, c_law, r0: float, step: float = 1e-4, horizon: float = 1e3,
                        chunk: int = 20000) -> OdeParams:
    """u(0)=r0, u' = max(1-u-v, 0), v(t) = 2 alpha E Phi(-c/sqrt t), by RK4 with a fixed step.

    T1 is the first time u = 1 - v (bisection inside the crossing step); T2 is the
    last grid time t <= T1 with u(t) + int_t^T1 (1 - u(t) - v(s)) ds >= 1.
    """
    if not 0.0 <= r0 <= 1.0:
        raise ValueError("r0 must lie in [0, 1]")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    c = np.atleast_1d(np.asarray(c_law, dtype=np.float64)).ravel()
    if np.any(c < 0):
        raise ValueError("slack law must be supported on [0, inf)")
    v, v_inf = _v_func(alpha, c)
    if alpha == 0 or np.all(np.isinf(c)):
        raise HorizonError("v vanishes identically, so u never meets 1 - v (T1 = +inf)")

    h = step
    ts, us, vs, V = [0.0], [r0], [0.0], [0.0]
    t, u = 0.0, r0
    T1 = None
    if u >= 1.0 - v(0.0):
        T1 = 0.0
    n_done = 0
    while T1 is None:
        if t >= horizon:
            raise HorizonError(f"u did not reach 1 - v by t = {horizon}")
        half = t + h * np.arange(1, 2 * chunk + 1) / 2.0
        vals = v(half)
        for i in range(chunk):
            vm, v1 = vals[2 * i], vals[2 * i + 1]
            v0 = vs[-1]
            k1 = max(1 - u - v0, 0.0)
            k2 = max(1 - (u + 0.5 * h * k1) - vm, 0.0)
            k3 = max(1 - (u + 0.5 * h * k2) - vm, 0.0)
            k4 = max(1 - (u + h * k3) - v1, 0.0)
            u_new = u + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            if u_new >= 1.0 - v1:
                T1, u_T1 = _bisect_crossing(t, u, h, v)
                break
            t = t + h
            u = u_new
            ts.append(t)
            us.append(u)
            vs.append(v1)
            V.append(V[-1] + h * (v0 + 4 * vm + v1) / 6.0)
            n_done += 1
            if t >= horizon:
                break
    t_grid = np.asarray(ts)
    u_grid = np.asarray(us)
    v_grid = np.asarray(vs)
    V_grid = np.asarray(V)
    if T1 == 0.0:
        u_T1 = r0
        V_T1 = 0.0
    else:
        dt = T1 - t_grid[-1]
        V_T1 = V_grid[-1] + dt * (v_grid[-1] + 4 * float(v(t_grid[-1] + dt / 2)) + float(v(T1))) / 6.0
        t_grid = np.append(t_grid, T1)
        u_grid = np.append(u_grid, u_T1)
        v_grid = np.append(v_grid, float(v(T1)))
        V_grid = np.append(V_grid, V_T1)
    G = u_grid + (T1 - t_grid) * (1.0 - u_grid) - (V_T1 - V_grid)
    ok = np.flatnonzero(G >= 1.0 - 1e-12)
    if ok.size == 0:
        raise DegenerateStateError(
            "r0 + int_0^T1 (1 - r0 - v) < 1: T2 is undefined for these parameters")
    i = int(ok[-1])
    if i + 1 < t_grid.size and G[i] != G[i + 1]:
        # linear refinement of the last crossing of G = 1
        w = (G[i] - 1.0) / (G[i] - G[i + 1])
        T2 = float(t_grid[i] + w * (t_grid[i + 1] - t_grid[i]))
        u_T2 = float(u_grid[i] + w * (u_grid[i + 1] - u_grid[i]))
    else:
        T2, u_T2 = float(t_grid[i]), float(u_grid[i])
    p1 = u_T2
    if 1.0 - u_T2 <= 1e-14:
        raise DegenerateStateError("u(T2) = 1, so p0 = (u(T1) - u(T2)) / (1 - u(T2)) is undefined")
    p0 = (u_T1 - u_T2) / (1.0 - u_T2)
    law = float(c[0]) if c.size == 1 else c.tolist()
    return OdeParams(float(alpha), float(r0), law, float(T1), T2, float(p0), float(p1), float(u_T1),
                     t_grid, u_grid, v_grid)


def _rk4(t, u, h, v):
    vm, v1, v0 = float(v(t + h / 2)), float(v(t + h)), float(v(t))
    k1 = max(1 - u - v0, 0.0)
    k2 = max(1 - (u + 0.5 * h * k1) - vm, 0.0)
    k3 = max(1 - (u + 0.5 * h * k2) - vm, 0.0)
    k4 = max(1 - (u + h * k3) - v1, 0.0)
    return u + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _bisect_crossing(t, u, h, v, iters=60):
    lo, hi = 0.0, h
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _rk4(t, u, mid, v) >= 1.0 - float(v(t + mid)):
            hi = mid
        else:
            lo = mid
    return t + hi, _rk4(t, u, hi, v)


# ---------------------------------------------------- effective stage-2 input

def effective_stage2(alpha: float, kappa0: float) -> dict:
    """rho and r = 2 Phi(-t) of the LP, then alpha0 = alpha/(1-r) and r0 = (rho^2 - r)/(1-r)."""
    op = analytics.solve_order_params(alpha, kappa0)
    if not op.feasible:
        raise InfeasibleError(f"order parameters not solvable at alpha={alpha}, kappa0={kappa0}")
    r = op.tight_prediction
    if r >= 1.0:
        raise DegenerateStateError("every coordinate is predicted tight (r = 1)")
    return {"rho": op.rho, "t": op.t, "r": r, "alpha0": alpha / (1 - r),
            "r0": (op.rho ** 2 - r) / (1 - r)}


# ------------------------------------------------------- margin-zero tables

_C005 = (6.440850, 7.184010, 7.864960, 8.496780, 9.088580, 9.646970, 10.176940, 10.682360,
         11.166300, 11.631250, 12.079250, 12.512010, 12.930960, 13.337330, 13.732170,
         14.116410, 14.490850, 14.856160, 15.212970, 15.562490)
_C010 = (2.00, 2.60, 2.60, 3.10, 3.20, 3.50, 3.70, 3.90, 4.20, 4.80, 5.00, 5.00, 6.00, 6.00,
         7.00, 7.00, 8.00, 8.00, 9.00, 9.00)
_KEEP_010 = (0.34, 0.31, 0.41, 0.35, 0.40, 0.39, 0.40, 0.40, 0.39, 0.32, 0.34, 0.36, 0.27, 0.30,
           0.22, 0.25, 0.19, 0.22, 0.17, 0.19)
_P0_010 = (0.50, 0.55, 0.58, 0.58, 0.59, 0.60, 0.60, 0.60, 0.61, 0.60, 0.61, 0.61, 0.61, 0.61,
           0.61, 0.61, 0.61, 0.61, 0.61, 0.61)


def row_normalized_slack(c_scalar: float, X, I) -> np.ndarray:
    """c_j = c sqrt|I| / ||(X_j)_I||, absorbing the fluctuation of the restricted row norms."""
    I = np.asarray(I, dtype=np.int64)
    norms = np.linalg.norm(np.asarray(X)[:, I], axis=1)
    with np.errstate(divide="ignore"):
        return np.where(norms > 0, c_scalar * math.sqrt(I.size) / norms, np.inf)


@dataclass(frozen=True)
class ZeroMarginTable:
    """Tabulated slack scalars c^(k) with the constants used to certify them.

    For the refined table, ``keep[k-1]`` is the fraction of the round-k free set
    that is still free after round k, and ``p0[k-1]`` the normalized squared norm
    handed to round k+1.  The ODE quantities relate to them as
    keep = 1 - p1(alpha_k, c^(k), p0^(k-1)) with alpha_k = alpha / ((1-R_tight) prod_{i<k} keep_i).
    """

    name: str
    alpha: float
    kappa0: float
    R_tight: float  # certified lower bound on the LP tight fraction
    c: tuple
    K1: float = K1_ZERO
    K2: float = K2_ZERO
    K3: float = K3_ZERO
    keep: tuple | None = None
    p0: tuple | None = None
    r0: float | None = None
    alpha0: float | None = None

    @property
    def uses_ode(self) -> bool:
        return self.keep is not None

    @property
    def refined_rounds(self) -> int:
        return len(self.keep) if self.uses_ode else 0

    def c_scalar(self, k: int) -> float:
        if k < 1:
            raise ValueError("rounds are numbered from 1")
        return self.c[k - 1] if k <= len(self.c) else k * k / 20.0

    def row_slack(self, k: int, X, I) -> np.ndarray:
        return row_normalized_slack(self.c_scalar(k), X, I)

    def predicted_free_fraction(self, k: int) -> float:
        """Upper bound on N_{k-1}/N used by the drift and precondition checks."""
        base = 1.0 - self.R_tight
        if not self.uses_ode:
            return base * (1 - 1 / self.K3) ** (k - 1)
        n = len(self.keep)
        prod = float(np.prod(self.keep[:min(k - 1, n)]))
        extra = max(0, k - 1 - n)
        return base * prod * (1 - 1 / self.K3) ** extra

    def aspect_ratio(self, k: int) -> float:
        return self.alpha / self.predicted_free_fraction(k)

    def drift_bound(self, k_max: int = 400) -> float:
        """sum_k c^(k) sqrt(predicted N_{k-1}/N): worst total margin loss per row."""
        return float(sum(self.c_scalar(k) * math.sqrt(self.predicted_free_fraction(k))
                         for k in range(1, k_max + 1)))

    def round_inequalities(self, rounds: int = 20) -> list:
        """2 alpha Phi(-c^(k)/sqrt K1) against (predicted N_{k-1}/N)/K2.

        Without refined rounds the prediction is (1 - R_tight)(1 - 1/K3)^(k-1).
        Refined rounds are certified by ``ode_check`` instead; their rows carry
        ``applies=False`` and only matter if a round falls back to the
        zero-margin variant.
        """
        out = []
        for k in range(1, rounds + 1):
            lhs = 2 * self.alpha * special.ndtr(-self.c_scalar(k) / math.sqrt(self.K1))
            rhs = self.predicted_free_fraction(k) / self.K2
            out.append({"k": k, "lhs": float(lhs), "rhs": float(rhs), "holds": bool(lhs < rhs),
                        "applies": not (self.uses_ode and k <= self.refined_rounds)})
        return out

    def ode_check(self) -> list:
        """Recompute (p0, p1) of each refined round and compare with the table.

        Both readings of the tabulated fraction are reported: as the frozen
        fraction p1 itself and as the surviving fraction 1 - p1, each compared in
        both directions.
        """
        if not self.uses_ode:
            raise ValueError(f"table {self.name} has no refined rounds")
        out = []
        prev_p0 = self.r0
        for k in range(1, len(self.keep) + 1):
            a_k = self.aspect_ratio(k)
            tab, tab0 = self.keep[k - 1], self.p0[k - 1]
            rec = {"k": k, "alpha_k": a_k, "c": self.c[k - 1], "r0": prev_p0,
                   "table_fraction": tab, "table_p0": tab0}
            try:
                od = ode_coloring_params(a_k, self.c[k - 1], prev_p0)
                rec.update(
                    p1=od.p1, p0=od.p0, T1=od.T1, T2=od.T2,
                    frozen_reading_gt=tab > od.p1, frozen_reading_lt=tab < od.p1,
                    survival_reading_gt=tab > 1 - od.p1, survival_reading_lt=tab < 1 - od.p1,
                    p0_table_lt=tab0 < od.p0, p0_table_gt=tab0 > od.p0,
                    survival_gap=tab - (1 - od.p1), p0_gap=od.p0 - tab0)
            except (DegenerateStateError, HorizonError) as exc:
                rec.update(error=str(exc))
            out.append(rec)
            prev_p0 = tab0
        return out

    def schedule(self, K: int) -> SlackSchedule:
        return SlackSchedule(self.name, self.kappa0,
                             {"K1": self.K1, "K2": self.K2, "K3": self.K3, "R_tight": self.R_tight},
                             [{"k": k, "c_scalar": self.c_scalar(k)} for k in range(1, K + 1)])


def margin_zero_tables() -> dict:
    """The alpha=0.05 table (zero-margin bound every round) and the alpha=0.1 table
    (ODE-refined bound for rounds 1..20, zero-margin bound after)."""
    return {
        "zero005": ZeroMarginTable("zero005", 0.05, 3.42, 0.9498, _C005),
        "zero010": ZeroMarginTable("zero010", 0.10, 2.31, 0.9, _C010, keep=_KEEP_010, p0=_P0_010,
                                   r0=0.332645, alpha0=1.008960),
    }


def adaptive_zero_scalar(M: int, n: int, K1: float = K1_ZERO, K2: float = K2_ZERO,
                         safety: float = 0.5) -> float:
    """Smallest c with 2 M Phi(-c/sqrt K1) = safety * n / K2 (0 if no slack is needed)."""
    target = safety * n / (2.0 * K2 * max(M, 1))
    if target >= 0.5:
        return 0.0
    return float(-math.sqrt(K1) * special.ndtri(target))
