"""Stage one: the random-direction linear program over the cube.

    maximize <v, theta>  subject to  X theta / sqrt(N) >= kappa0,  -1 <= theta <= 1

solved by a dense bounded-variable dual simplex.  With A = X/sqrt(N) and surplus
variables s >= 0 the constraints read [A, -I] (theta, s) = kappa0.  The all-surplus
basis with theta_i = sign(v_i) at its bound is dual feasible from the start, so
the dual simplex only has to repair the violated rows; the answer is a vertex,
and coordinates left nonbasic sit exactly at +-1.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import analytics
from .core import DIRECTION_STREAM, Instance, margins, stream, wasserstein2
from .errors import InfeasibleError, PdiscError

TIGHT_TOL = 1e-8
_PRIMAL_TOL = 1e-9
_DUAL_TOL = 1e-9
_PIVOT_TOL = 1e-9
_REFACTOR_EVERY = 64
_STALL_LIMIT = 50


@dataclass
class LPOutput:
    theta_hat: np.ndarray
    tight_set: np.ndarray
    margin_vector: np.ndarray
    objective: float
    direction_seed: int | None
    kappa0: float
    dual_objective: float = math.nan
    multipliers: np.ndarray | None = None  # lambda >= 0, one per row
    basis: np.ndarray | None = None  # basic variables; index >= N means surplus of row index - N
    tight_rows: np.ndarray | None = None
    iterations: int = 0
    wall_ms: float = 0.0

    @property
    def N(self) -> int:
        return self.theta_hat.size

    @property
    def duality_gap(self) -> float:
        return abs(self.objective - self.dual_objective)

    def vertex_count(self) -> int:
        """Tight box constraints plus tight half-space rows."""
        rows = 0 if self.tight_rows is None else self.tight_rows.size
        return int(self.tight_set.size + rows)


def direction_vector(N: int, direction_seed: int) -> np.ndarray:
    return stream(direction_seed, DIRECTION_STREAM).standard_normal(N)


def solve_lp(inst: Instance, kappa0: float, direction_seed: int = 0,
             direction: np.ndarray | None = None, max_iter: int | None = None) -> LPOutput:
    """Vertex optimum of the LP; raises InfeasibleError with a Farkas row if none exists.

    ``direction`` overrides the seeded objective vector (used for scaling checks).
    """
    t0 = time.perf_counter()
    N, M = inst.N, inst.M
    v = direction_vector(N, direction_seed) if direction is None else np.asarray(direction, dtype=np.float64)
    if v.shape != (N,):
        raise ValueError(f"direction has shape {v.shape}, expected ({N},)")
    A = inst.X / math.sqrt(N)
    b = np.full(M, float(kappa0))
    theta, lam, basis, iters = _bounded_dual_simplex(A, b, v, max_iter=max_iter)
    marg = A @ theta
    tight = np.flatnonzero(np.abs(theta) >= 1.0 - TIGHT_TOL)
    nonbasic_rows = np.setdiff1d(np.arange(M), basis[basis >= N] - N)
    dual_obj = float(np.abs(v + A.T @ lam).sum() - kappa0 * lam.sum())
    return LPOutput(
        theta_hat=theta,
        tight_set=tight,
        margin_vector=marg,
        objective=float(v @ theta),
        direction_seed=None if direction is not None else direction_seed,
        kappa0=float(kappa0),
        dual_objective=dual_obj,
        multipliers=lam,
        basis=basis,
        tight_rows=nonbasic_rows,
        iterations=iters,
        wall_ms=1e3 * (time.perf_counter() - t0),
    )


def _bounded_dual_simplex(A, b, v, max_iter=None):
    """min -v.theta  s.t.  A theta - s = b, theta in [-1,1], s >= 0.

    Returns (theta, lambda, basis, iterations).  The basis inverse is kept
    explicitly with rank-one updates and refactorized periodically; basic values
    and reduced costs are recomputed from it every iteration so errors never
    accumulate.  Leaving row: dual steepest edge (infeasibility^2 over the squared
    norm of the B^-1 row), switching to the lowest index (Bland) after a stall.
    Entering column: long-step ratio test with bound flipping, ties broken by
    the largest pivot.
    """
    M, N = A.shape
    n = N + M
    sign = np.where(v >= 0, 1.0, -1.0)
    if M == 0:
        return sign.copy(), np.zeros(0), np.zeros(0, dtype=np.int64), 0
    cost = np.concatenate([-v, np.zeros(M)])
    lower = np.concatenate([-np.ones(N), np.zeros(M)])
    upper = np.concatenate([np.ones(N), np.full(M, np.inf)])

    def column(j):
        if j < N:
            return A[:, j]
        e = np.zeros(M)
        e[j - N] = -1.0
        return e

    def basis_matrix(bs):
        return np.column_stack([column(j) for j in bs])

    x = np.concatenate([sign, np.zeros(M)])
    basis = np.arange(N, n)
    is_basic = np.zeros(n, dtype=bool)
    is_basic[basis] = True
    Binv = -np.eye(M)
    max_iter = max_iter or 50 * n
    best_obj, stall, bland = -math.inf, 0, False

    for it in range(max_iter + 1):
        if it and it % _REFACTOR_EVERY == 0:
            Binv = np.linalg.inv(basis_matrix(basis))
        xn = np.where(is_basic, 0.0, x)
        rhs = b - (A @ xn[:N] - xn[N:])
        xB = Binv @ rhs
        x[basis] = xB
        lo_B, up_B = lower[basis], upper[basis]
        below = lo_B - xB
        above = xB - up_B
        infeas = np.maximum(np.maximum(below, above), 0.0)
        if infeas.max() <= _PRIMAL_TOL:
            y = Binv.T @ cost[basis]
            theta = np.clip(x[:N], -1.0, 1.0)
            return theta, np.maximum(y, 0.0), basis.copy(), it
        if it == max_iter:
            break
        obj = float(cost @ x)
        if obj > best_obj + 1e-12 * max(1.0, abs(obj)):
            best_obj, stall, bland = obj, 0, False
        else:
            # the dual simplex raises cost.x monotonically; stagnation means degeneracy
            stall += 1
            bland = bland or stall > _STALL_LIMIT
        if bland:
            cand = np.flatnonzero(infeas > _PRIMAL_TOL)
            r = int(cand[np.argmin(basis[cand])])
        else:
            # exact dual steepest edge: the weights are the squared rows of B^-1
            weights = np.einsum("ij,ij->i", Binv, Binv)
            r = int(np.argmax(infeas * infeas / weights))
        to_lower = below[r] > 0

        y = Binv.T @ cost[basis]
        d = np.concatenate([cost[:N] - A.T @ y, y])
        rho = Binv[r]
        alpha = np.concatenate([rho @ A, -rho])
        at_upper = (~is_basic) & (x >= upper - 0.5) & np.isfinite(upper)
        at_lower = (~is_basic) & ~at_upper
        if to_lower:
            elig = (at_lower & (alpha < -_PIVOT_TOL)) | (at_upper & (alpha > _PIVOT_TOL))
        else:
            elig = (at_lower & (alpha > _PIVOT_TOL)) | (at_upper & (alpha < -_PIVOT_TOL))
        cand = np.flatnonzero(elig)
        if cand.size == 0:
            raise InfeasibleError(
                "LP is infeasible: no entering variable can repair the violated row",
                certificate={
                    "row_combination": rho.copy(),
                    "basic_variable": int(basis[r]),
                    "violation": float(infeas[r]),
                    "status": "dual unbounded",
                })
        # long-step ratio test: pass breakpoints, flipping boxed variables to
        # their opposite bound while the row infeasibility still shrinks
        dd = np.where(at_lower[cand], np.maximum(d[cand], 0.0), np.maximum(-d[cand], 0.0))
        aa = np.abs(alpha[cand])
        ratio = dd / aa
        order = np.argsort(ratio, kind="stable")
        width = (upper - lower)[cand][order]
        slope = infeas[r] - np.cumsum(aa[order] * width)
        k = int(np.argmax(slope < 0)) if np.any(slope < 0) else -1
        if k < 0:
            raise InfeasibleError(
                "LP is infeasible: flipping every eligible bound cannot repair the violated row",
                certificate={
                    "row_combination": rho.copy(),
                    "basic_variable": int(basis[r]),
                    "violation": float(infeas[r]),
                    "status": "dual unbounded",
                })
        ties = order[k:][ratio[order[k:]] <= ratio[order[k]] + _DUAL_TOL / aa[order[k:]]]
        if bland:
            pick = ties[np.argmin(cand[ties])]
        else:
            pick = ties[np.argmax(aa[ties])]
        q = int(cand[pick])
        flips = cand[order[:k]]
        flips = flips[flips != q]
        x[flips] = np.where(at_lower[flips], upper[flips], lower[flips])

        aq = Binv @ column(q)
        piv = aq[r]
        leaving = int(basis[r])
        x[leaving] = lower[leaving] if to_lower else upper[leaving]
        Binv[r] /= piv
        mask = np.ones(M, dtype=bool)
        mask[r] = False
        Binv[mask] -= np.outer(aq[mask], Binv[r])
        is_basic[leaving] = False
        is_basic[q] = True
        basis[r] = q

    raise PdiscError(f"dual simplex did not converge in {max_iter} iterations")


def lp_diagnostics(out: LPOutput, alpha: float, kappa0: float, grid_size: int = 4096) -> dict:
    """Tight fraction, W2 of the margins to max(rho G, kappa0), and the minimum margin slack."""
    op = analytics.solve_order_params(alpha, kappa0).require()
    law = analytics.MarginLaw.from_order_params(op)
    return {
        "tight_fraction": out.tight_set.size / out.N,
        "predicted_tight_fraction": op.tight_prediction,
        "w2_to_margin_law": wasserstein2(out.margin_vector, law.quantile, grid_size),
        "min_margin": float(out.margin_vector.min() - kappa0) if out.margin_vector.size else math.inf,
    }


LP_CSV_COLUMNS = ("M", "N", "alpha", "kappa0", "seed", "direction_seed", "tight_fraction",
                  "w2", "min_margin", "objective", "wall_ms")


def lp_csv_row(inst: Instance, out: LPOutput, diag: dict) -> dict:
    return {
        "M": inst.M, "N": inst.N, "alpha": inst.alpha, "kappa0": out.kappa0,
        "seed": inst.seed, "direction_seed": out.direction_seed,
        "tight_fraction": diag["tight_fraction"], "w2": diag["w2_to_margin_law"],
        "min_margin": diag["min_margin"], "objective": out.objective, "wall_ms": out.wall_ms,
    }


def check_margins(inst: Instance, out: LPOutput) -> float:
    """Largest violation of X theta >= kappa0 sqrt(N) in unnormalized units."""
    m = margins(inst, out.theta_hat)
    return float(max(0.0, (out.kappa0 - m.min()) * math.sqrt(inst.N))) if m.size else 0.0
