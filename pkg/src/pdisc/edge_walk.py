"""Edge-walk partial coloring with one-sided discrepancy constraints.

A discrete Gaussian walk theta_t = theta_{t-1} + gamma U_t inside the cube,
where U_t is a standard Gaussian on the subspace orthogonal to every coordinate
that has nearly reached +-1 and every row that has nearly used up its slack:

    c_var  = {i : |theta_i| >= 1 - delta}
    c_disc = {j : <theta - theta0, X_j> <= (-c_j + delta) ||X_j||}

Simulation is blockwise but exact: while the active sets do not change the
projector is fixed, so a block of steps is drawn at once and truncated at the
first step that changes a set (or would leave the feasible region).  Steps that
would leave the cube, or push a row past -c_j ||X_j||, are shrunk by halving
gamma for that step only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, special

from .core import WALK_STREAM, stream
from .errors import ScheduleError

VARIANTS = ("general16_8", "zero_margin", "ode")
_RANK_TOL = 1e-10
_MIN_BLOCK = 8
_MAX_BLOCK = 1024


def _log_n(N: int) -> float:
    return math.log(max(N, 3))


@dataclass(frozen=True)
class ColoringConfig:
    gamma: float | None = None
    delta: float | None = None
    variant: str = "general16_8"
    K1: float = 16.0
    K2: float = 8.0
    K3: float = 2.0
    T1: float | None = None  # ode variant: run T1/gamma^2 steps
    target_fraction: float | None = None  # ode variant success threshold
    retries: int | None = None
    max_halvings: int = 20

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "ode" and (self.T1 is None or self.T1 < 0):
            raise ValueError("the ode variant needs a nonnegative T1")
        if self.variant == "zero_margin" and 1 / self.K1 + 1 / self.K2 + 1 / self.K3 > 0.999:
            raise ValueError("zero_margin needs 1/K1 + 1/K2 + 1/K3 <= 0.999")

    @classmethod
    def general(cls, **kw) -> "ColoringConfig":
        return cls(variant="general16_8", K1=16.0, K2=8.0, K3=2.0, **kw)

    @classmethod
    def zero_margin(cls, K1: float = 4.2, K2: float = 30.0, K3: float = 1.3745, **kw) -> "ColoringConfig":
        return cls(variant="zero_margin", K1=K1, K2=K2, K3=K3, **kw)

    @classmethod
    def ode(cls, T1: float, target_fraction: float | None = None, **kw) -> "ColoringConfig":
        return cls(variant="ode", T1=T1, target_fraction=target_fraction, **kw)

    def resolve(self, N: int) -> "ColoringConfig":
        """Fill in N-dependent defaults and enforce delta <= 0.1/log N."""
        ln = _log_n(N)
        delta = 0.05 / ln if self.delta is None else float(self.delta)
        if not 0 < delta <= 0.1 / ln + 1e-15:
            raise ValueError(f"delta={delta} violates 0 < delta <= 0.1/log(max(N,3)) = {0.1 / ln:.6g}")
        gamma = delta / math.sqrt(ln) if self.gamma is None else float(self.gamma)
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        retries = math.ceil(10 * ln) if self.retries is None else int(self.retries)
        return replace(self, gamma=gamma, delta=delta, retries=max(retries, 1))

    def steps(self) -> int:
        g2 = self.gamma ** 2
        if self.variant == "general16_8":
            return math.ceil(16.0 / (3.0 * g2))
        if self.variant == "zero_margin":
            return math.ceil(self.K1 / g2)
        return math.ceil(self.T1 / g2)

    def required_fraction(self) -> float:
        if self.variant == "general16_8":
            return 0.5
        if self.variant == "zero_margin":
            return 1.0 / self.K3
        return 0.0 if self.target_fraction is None else self.target_fraction

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class WalkState:
    theta: np.ndarray
    theta0: np.ndarray
    step: int = 0
    c_var: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    c_disc: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    halvings: int = 0  # total gamma halvings spent on backtracking
    rejected_steps: int = 0  # steps dropped after max_halvings
    stopped_early: bool = False  # V_t = {0} before T steps
    trace: list = field(default_factory=list)  # (t, |c_var|, |c_disc|, ||theta||^2)

    def near_tight_fraction(self, delta: float) -> float:
        return float(np.mean(np.abs(self.theta) >= 1.0 - delta)) if self.theta.size else 1.0


def active_sets(state: WalkState, X, c, delta: float):
    """(c_var, c_disc) recomputed exactly from theta."""
    X = np.asarray(X, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    c_var = np.flatnonzero(np.abs(state.theta) >= 1.0 - delta)
    if X.shape[0] == 0:
        return c_var, np.zeros(0, dtype=np.int64)
    disp = X @ (state.theta - state.theta0)
    c_disc = np.flatnonzero(disp <= (-c + delta) * np.linalg.norm(X, axis=1))
    return c_var, c_disc


def project_gaussian(X_active, fixed, N: int, seed=None) -> np.ndarray:
    """Standard Gaussian on {u : u_i = 0 for i in fixed, <u, X_j> = 0 for active rows}.

    ``seed`` may be an int or a numpy Generator.  Dependent rows are dropped by a
    pivoted QR of the rows restricted to the free coordinates.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fixed = np.asarray(fixed, dtype=np.int64)
    free = np.ones(N, dtype=bool)
    free[fixed] = False
    u = np.zeros(N)
    nf = int(free.sum())
    if nf == 0:
        return u
    g = rng.standard_normal(nf)
    X_active = np.asarray(X_active, dtype=np.float64).reshape(-1, N)
    if X_active.shape[0]:
        Q = _orthonormal_columns(X_active[:, free].T)
        g = g - Q @ (Q.T @ g)
    u[free] = g
    return u


def _orthonormal_columns(A: np.ndarray) -> np.ndarray:
    """Orthonormal basis of range(A) by pivoted QR, dropping numerically dependent columns."""
    if A.size == 0 or A.shape[1] == 0:
        return np.zeros((A.shape[0], 0))
    Q, R, _ = linalg.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return np.zeros((A.shape[0], 0))
    rank = int(np.sum(d > _RANK_TOL * max(d[0], 1.0)))
    return Q[:, :rank]


class _Walker:
    """Mutable internals of one edge-walk run."""

    def __init__(self, X, c, theta0, cfg: ColoringConfig, rng, record_trace: bool, observer):
        self.X = X
        self.M, self.N = X.shape
        self.cfg = cfg
        self.rng = rng
        self.observer = observer
        self.record_trace = record_trace
        self.norms = np.linalg.norm(X, axis=1) if self.M else np.zeros(0)
        with np.errstate(invalid="ignore"):
            self.soft = np.where(np.isinf(c), -np.inf, (-c + cfg.delta) * self.norms)
            self.hard = np.where(np.isinf(c), -np.inf, -c * self.norms)
        self.theta = theta0.copy()
        self.state = WalkState(theta=self.theta, theta0=theta0.copy())
        self.disp = np.zeros(self.M)
        self.var = np.abs(self.theta) >= 1.0 - cfg.delta
        self.disc = self.disp <= self.soft
        self.free = np.flatnonzero(~self.var)
        self.rows = np.flatnonzero(~self.disc)
        self.basis = _orthonormal_columns(X[np.ix_(np.flatnonzero(self.disc), self.free)].T)
        self._rebuild_row_block()

    def _rebuild_row_block(self):
        self.XF = self.X[np.ix_(self.rows, self.free)]

    def dim(self) -> int:
        return self.free.size - self.basis.shape[1]

    def _record(self, t):
        if self.record_trace:
            self.state.trace.append((t, int(self.var.sum()), int(self.disc.sum()),
                                     float(self.theta @ self.theta)))

    def _refresh(self, new_var, new_disc):
        """Shrink the free set and extend the discrepancy basis after an event."""
        if new_var.size:
            self.var[new_var] = True
            keep = ~self.var[self.free]
            self.free = self.free[keep]
            self.basis = _orthonormal_columns(self.basis[keep])
        if new_disc.size:
            self.disc[new_disc] = True
            V = self.X[np.ix_(new_disc, self.free)].T
            if self.basis.shape[1]:
                for _ in range(2):
                    V = V - self.basis @ (self.basis.T @ V)
            Q = _orthonormal_columns(V)
            # keep only directions that are genuinely new
            if Q.shape[1] and self.basis.shape[1]:
                Q = Q - self.basis @ (self.basis.T @ Q)
                Q = _orthonormal_columns(Q)
            self.basis = np.hstack([self.basis, Q]) if self.basis.size else Q
        self.rows = np.flatnonzero(~self.disc)
        self._rebuild_row_block()

    def _violates(self, theta_f, disp_r):
        return bool(np.any(np.abs(theta_f) > 1.0) or np.any(disp_r < self.hard[self.rows]))

    def run(self, T: int) -> WalkState:
        cfg, gamma, delta = self.cfg, self.cfg.gamma, self.cfg.delta
        t, block = 0, _MIN_BLOCK
        self._record(0)
        while t < T:
            if self.dim() <= 0:
                self.state.stopped_early = True
                break
            L = min(block, T - t)
            Z = self.rng.standard_normal((L, self.free.size))
            if self.basis.shape[1]:
                Z -= (Z @ self.basis) @ self.basis.T
            W = Z @ self.XF.T
            P = self.theta[self.free] + gamma * np.cumsum(Z, axis=0)
            D = self.disp[self.rows] + gamma * np.cumsum(W, axis=0)
            hit = (np.abs(P) >= 1.0 - delta).any(axis=1)
            if self.rows.size:
                hit |= (D <= self.soft[self.rows]).any(axis=1)
            events = np.flatnonzero(hit)
            if events.size == 0:
                self._accept(P[-1], D[-1], t, Z)
                t += L
                block = min(2 * block, _MAX_BLOCK)
                self._record(t)
                continue
            ell = int(events[0])
            if ell:
                self._accept(P[ell - 1], D[ell - 1], t, Z[:ell])
            # the event step itself, shrunk if it leaves the feasible region
            base_f = self.theta[self.free].copy()
            base_d = self.disp[self.rows].copy()
            g = gamma
            cand_f, cand_d = P[ell], D[ell]
            halvings = 0
            while self._violates(cand_f, cand_d) and halvings < cfg.max_halvings:
                g *= 0.5
                halvings += 1
                cand_f = base_f + g * Z[ell]
                cand_d = base_d + g * W[ell]
            self.state.halvings += halvings
            if self._violates(cand_f, cand_d):
                self.state.rejected_steps += 1
            else:
                self._accept(cand_f, cand_d, t + ell, Z[ell:ell + 1] * (g / gamma))
            t += ell + 1
            new_var = self.free[np.abs(self.theta[self.free]) >= 1.0 - delta]
            new_disc = self.rows[self.disp[self.rows] <= self.soft[self.rows]]
            if new_var.size or new_disc.size:
                self._refresh(new_var, new_disc)
            self._record(t)
            block = max(_MIN_BLOCK, min(2 * (ell + 1), _MAX_BLOCK))
        self.state.step = t
        self.state.c_var = np.flatnonzero(self.var)
        self.state.c_disc = np.flatnonzero(self.disc)
        return self.state

    def _accept(self, theta_f, disp_r, t0, U):
        if self.observer is not None:
            self.observer(t0, self.free.copy(), U, np.flatnonzero(self.var), np.flatnonzero(self.disc))
        self.theta[self.free] = theta_f
        if self.rows.size:
            self.disp[self.rows] = disp_r


def edge_walk_run(X, c, theta0, cfg: ColoringConfig, seed=0, record_trace: bool = False,
                  observer=None, T: int | None = None) -> WalkState:
    """Run the edge walk for cfg.steps() steps (or ``T``); returns the final state.

    ``seed`` is an int or a numpy Generator.  ``observer(t0, free, U, c_var,
    c_disc)`` is called with every accepted block of (scaled) increments U,
    expressed on the free coordinates, before it is applied.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.shape != (X.shape[1],):
        raise ValueError("theta0 length must equal the number of columns of X")
    if np.any(np.abs(theta0) > 1.0 + 1e-12):
        raise ValueError("theta0 must lie in [-1, 1]^N")
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (X.shape[0],)).copy()
    if np.any(c < 0):
        raise ValueError("slack vector must be nonnegative")
    cfg = cfg.resolve(X.shape[1]) if cfg.gamma is None or cfg.delta is None or cfg.retries is None else cfg
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    walker = _Walker(X, c, np.clip(theta0, -1.0, 1.0), cfg, rng, record_trace, observer)
    return walker.run(cfg.steps() if T is None else int(T))


def slack_sum(c, variant: str, K1: float) -> float:
    """Left side of the variant's slack precondition."""
    c = np.asarray(c, dtype=np.float64)
    if variant == "general16_8":
        return float(np.sum(np.exp(-np.square(c) / K1)))
    if variant == "zero_margin":
        return float(2.0 * np.sum(special.ndtr(-c / math.sqrt(K1))))
    return 0.0


def check_precondition(c, N: int, cfg: ColoringConfig, round_index=None) -> float:
    """Raise ScheduleError when the slack sum exceeds N/K2; returns the sum otherwise."""
    total = slack_sum(c, cfg.variant, cfg.K1)
    if cfg.variant != "ode" and total > N / cfg.K2:
        c = np.asarray(c, dtype=np.float64)
        worst = int(np.argmin(c)) if c.size else None
        raise ScheduleError(
            f"slack sum {total:.6g} exceeds N/K2 = {N / cfg.K2:.6g} for variant {cfg.variant}",
            round_index=round_index, row=worst,
            diagnostics={"slack_sum": total, "bound": N / cfg.K2, "N": N, "M": int(c.size)})
    return total


@dataclass
class ColoringResult:
    theta: np.ndarray
    success: bool
    state: WalkState
    attempts: int
    fraction: float
    margins_ok: bool

    def __iter__(self):
        # allows ``theta, success = partial_coloring(...)``
        return iter((self.theta, self.success))


def partial_coloring(X, c, theta0, cfg: ColoringConfig, seed=0, round_index: int = 0,
                     record_trace: bool = False) -> ColoringResult:
    """Edge walk with the variant's precondition and up to cfg.retries fresh attempts.

    Success means every row kept <theta - theta0, X_j> >= -c_j ||X_j|| and the
    near-tight fraction reached the variant's target.  Attempt r draws from the
    walk stream keyed by (round_index, r).  Returns the first success, or else the
    attempt with the most near-tight coordinates.
    """
    X = np.asarray(X, dtype=np.float64)
    M, N = X.shape
    cfg = cfg.resolve(N) if cfg.gamma is None or cfg.delta is None or cfg.retries is None else cfg
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), (M,)).copy()
    check_precondition(c, N, cfg, round_index)
    need = cfg.required_fraction()
    norms = np.linalg.norm(X, axis=1)
    best = None
    for r in range(cfg.retries):
        rng = stream(seed, WALK_STREAM, round_index, r)
        st = edge_walk_run(X, c, theta0, cfg, rng, record_trace=record_trace)
        disp = X @ (st.theta - st.theta0) if M else np.zeros(0)
        with np.errstate(invalid="ignore"):
            ok_rows = bool(np.all(np.isinf(c) | (disp >= -c * norms - 1e-9 * (1 + norms))))
        frac = st.near_tight_fraction(cfg.delta)
        res = ColoringResult(st.theta.copy(), ok_rows and frac >= need, st, r + 1, frac, ok_rows)
        if res.success:
            return res
        if best is None or (res.margins_ok, res.fraction) > (best.margins_ok, best.fraction):
            best = res
    best.attempts = cfg.retries
    return best
