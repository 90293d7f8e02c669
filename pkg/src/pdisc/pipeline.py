"""End-to-end solver: LP vertex, rounds of edge-walk partial coloring, randomized rounding."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .core import ROUNDING_STREAM, Instance, SolutionReport, stream, verify_solution
from .edge_walk import ColoringConfig, partial_coloring
from .errors import (DegenerateStateError, HorizonError, InfeasibleError, RegimeError,
                     RetryExhaustedError, ScheduleError)
from .lp import solve_lp
from . import schedules

REGIMES = ("neg", "zero005", "zero010", "pos", "proportional")


def randomized_round(theta, seed) -> np.ndarray:
    """chi_i = sign(theta_i) with probability (1 + |theta_i|)/2, independently; sign(0) = +1."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(np.abs(theta) > 1.0 + 1e-10):
        raise ValueError("theta must lie in [-1, 1]^N")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, ROUNDING_STREAM)
    s = np.where(theta >= 0, 1.0, -1.0)
    keep = rng.random(theta.size) < (1.0 + np.abs(theta)) / 2.0
    return np.where(keep, s, -s)


@dataclass(frozen=True)
class RegimeConfig:
    """How the pipeline picks kappa0 and the per-round slack vectors."""

    name: str
    kappa0: float | None = None  # default depends on the regime
    c0: float = 6.0  # neg: kappa0 = kappa + c0/|kappa|
    beta0: float = 0.1  # neg / proportional: beta_k = beta0 2^(-k/4)
    gamma: float | None = None
    delta: float | None = None
    retries: int | None = None
    max_rounds: int | None = None
    backoff_step: float = 0.02  # lower kappa0 by this much when the LP is infeasible
    max_backoff: int = 10
    ode_tolerance: float = 0.05  # refined rounds succeed at (table frozen fraction - tolerance)
    pos_safety: float = 0.5
    max_entries: float = 1e8  # M*N cap for the neg / proportional regimes
    stop_free: int | None = None  # go straight to rounding at this many free coordinates; None = ceil(log N)

    def __post_init__(self):
        if self.name not in REGIMES:
            raise ValueError(f"unknown regime {self.name!r}; expected one of {REGIMES}")
        if self.name == "proportional" and self.kappa0 is None:
            raise ValueError("the proportional regime needs an explicit kappa0")

    def resolve_kappa0(self, kappa: float) -> float:
        if self.kappa0 is not None:
            return float(self.kappa0)
        if self.name == "neg":
            if kappa >= 0:
                raise RegimeError("the neg regime needs kappa < 0")
            return kappa + self.c0 / abs(kappa)
        if self.name == "zero005":
            return schedules.margin_zero_tables()["zero005"].kappa0
        if self.name == "zero010":
            return schedules.margin_zero_tables()["zero010"].kappa0
        return kappa + 1.0  # pos

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoundRecord:
    k: int
    n_before: int
    n_after: int
    variant: str
    steps: int
    retries_used: int
    success: bool
    frozen_fraction: float
    target_fraction: float
    slack_sum: float
    max_budget: float  # max_j c_j ||(X_j)_I|| / sqrt N, the worst loss this round may cause
    min_margin: float  # min_j <theta, X_j>/sqrt N after the round
    halvings: int
    rejected_steps: int
    padded: int = 0  # frozen coordinates added to reach the predicted round size
    predicted_n: float | None = None
    ode: dict | None = None


@dataclass
class PipelineTrace:
    regime: dict
    kappa: float
    kappa0_requested: float
    kappa0_used: float
    backoff_steps: int
    seeds: dict
    lp: dict
    rounds: list = field(default_factory=list)
    free_before_rounding: int = 0
    chi: np.ndarray | None = None
    report: SolutionReport | None = None
    theta_final: np.ndarray | None = None
    timing: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return bool(self.report is not None and self.report.feasible)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "version": __version__,
            "regime": self.regime,
            "kappa": self.kappa,
            "kappa0_requested": self.kappa0_requested,
            "kappa0_used": self.kappa0_used,
            "backoff_steps": self.backoff_steps,
            "seeds": self.seeds,
            "lp": self.lp,
            "rounds": [asdict(r) for r in self.rounds],
            "free_before_rounding": self.free_before_rounding,
            "chi": None if self.chi is None else [int(x) for x in self.chi],
            "report": None if self.report is None else self.report.to_dict(),
        }
        if include_timing:
            d["timing"] = self.timing
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, default=_jsonable)

    def summary_row(self) -> dict:
        return {
            "kappa": self.kappa, "alpha": self.lp.get("alpha"), "N": self.lp.get("N"),
            "seed": self.seeds.get("instance"), "feasible": self.feasible,
            "min_margin": None if self.report is None else self.report.min_margin,
            "rounds_used": len(self.rounds), "wall_ms": self.timing.get("total_ms"),
        }


SUMMARY_COLUMNS = ("kappa", "alpha", "N", "seed", "feasible", "min_margin", "rounds_used", "wall_ms")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")


def _lp_with_backoff(inst, kappa0, cfg, direction_seed):
    last = None
    for i in range(cfg.max_backoff + 1):
        k0 = kappa0 - i * cfg.backoff_step
        try:
            return solve_lp(inst, k0, direction_seed=direction_seed), k0, i
        except InfeasibleError as exc:
            last = exc
    raise InfeasibleError(
        f"LP infeasible at kappa0 = {kappa0} and at {cfg.max_backoff} backed-off values down to "
        f"{kappa0 - cfg.max_backoff * cfg.backoff_step:.4g}",
        certificate=last.certificate)


def run_pipeline(inst: Instance, kappa: float, regime: RegimeConfig, direction_seed: int = 0,
                 walk_seed: int = 0) -> PipelineTrace:
    """LP at kappa0, then at most ceil(2 log N) partial-coloring rounds on the free columns,
    then randomized rounding and verification at kappa."""
    t_start = time.perf_counter()
    M, N = inst.M, inst.N
    X = inst.X
    if regime.name in ("neg", "proportional") and M * N > regime.max_entries:
        raise RegimeError(
            f"regime not desk-feasible: M*N = {M * N:.3g} exceeds the cap {regime.max_entries:.3g}")
    kappa0 = regime.resolve_kappa0(kappa)
    base = _base_config(regime, N, M)
    delta = base.delta
    out, k0, backoff = _lp_with_backoff(inst, kappa0, regime, direction_seed)
    theta = out.theta_hat.copy()
    trace = PipelineTrace(
        regime=regime.to_dict(), kappa=float(kappa), kappa0_requested=float(kappa0),
        kappa0_used=float(k0), backoff_steps=backoff,
        seeds={"instance": inst.seed, "direction": direction_seed, "walk": walk_seed},
        lp={"M": M, "N": N, "alpha": inst.alpha, "iterations": out.iterations,
            "tight_fraction": out.tight_set.size / N, "objective": out.objective,
            "min_margin": float(out.margin_vector.min()) if M else math.inf,
            "gamma": base.gamma, "delta": delta},
    )
    trace.timing["lp_ms"] = out.wall_ms
    K = schedules.round_count(N) if regime.max_rounds is None else regime.max_rounds
    tables = schedules.margin_zero_tables()
    free = np.flatnonzero(np.abs(theta) < 1.0 - delta)
    trace.lp["free_after_lp"] = int(free.size)
    stop_free = math.ceil(math.log(max(N, 3))) if regime.stop_free is None else regime.stop_free
    trace.lp["stop_free"] = int(stop_free)
    for k in range(1, K + 1):
        if free.size <= stop_free:
            break
        cols = _padded_columns(regime, k, free, theta, tables, N)
        XI = X[:, cols]
        try:
            cfg, c, extra = _round_setup(regime, k, X, cols, theta[cols], out.theta_hat, kappa, base, tables)
            res = partial_coloring(XI, c, theta[cols], cfg, seed=walk_seed, round_index=k)
        except ScheduleError as exc:
            exc.round_index = k
            exc.diagnostics = {**(exc.diagnostics or {}), "n_free": int(free.size)}
            raise
        norms = np.linalg.norm(XI, axis=1)
        finite = np.isfinite(c)
        budget = float(np.max(c[finite] * norms[finite])) / math.sqrt(N) if finite.any() else 0.0
        if not res.success:
            raise RetryExhaustedError(
                f"round {k}: no successful partial coloring in {res.attempts} attempts",
                round_index=k,
                diagnostics={"n_free": int(free.size), "best_fraction": res.fraction,
                             "target": cfg.required_fraction(), "margins_ok": res.margins_ok,
                             "variant": cfg.variant})
        theta[cols] = res.theta
        n_before = free.size
        free = free[np.abs(theta[free]) < 1.0 - delta]
        marg = X @ theta / math.sqrt(N)
        trace.rounds.append(RoundRecord(
            k=k, n_before=int(n_before), n_after=int(free.size), variant=cfg.variant,
            steps=int(res.state.step), retries_used=int(res.attempts), success=bool(res.success),
            frozen_fraction=float(res.fraction), target_fraction=float(cfg.required_fraction()),
            slack_sum=float(schedules_slack_sum(c, cfg)), max_budget=budget,
            min_margin=float(marg.min()) if M else math.inf, halvings=int(res.state.halvings),
            rejected_steps=int(res.state.rejected_steps), padded=int(cols.size - n_before), **extra))
    trace.free_before_rounding = int(free.size)
    trace.theta_final = theta.copy()
    chi = randomized_round(theta, stream(walk_seed, ROUNDING_STREAM))
    trace.chi = chi.astype(np.int8)
    trace.report = verify_solution(inst, chi, kappa)
    trace.timing["total_ms"] = 1e3 * (time.perf_counter() - t_start)
    return trace


def schedules_slack_sum(c, cfg: ColoringConfig) -> float:
    from .edge_walk import slack_sum
    return slack_sum(c, cfg.variant, cfg.K1)


def _base_config(regime: RegimeConfig, N: int, M: int) -> ColoringConfig:
    kw = dict(gamma=regime.gamma, delta=regime.delta, retries=regime.retries)
    if regime.name in ("neg", "proportional") and regime.delta is None:
        # the rounding allowance 4 sqrt(delta N log M) must fit inside (kappa0 - kappa) sqrt N
        kw["delta"] = min(0.05 / math.log(max(N, 3)), 0.1 / math.log(max(M, 3)))
    return ColoringConfig.general(**kw).resolve(N)


def _padded_columns(regime, k, free, theta, tables, N):
    """Free columns, topped up with frozen ones to the tabulated round size.

    The tabulated schedules are certified for a round of (predicted) size
    ceil(N * free fraction); when fewer coordinates are free, frozen coordinates
    (which the walk never moves) fill the round so its precondition is the
    certified one.
    """
    if regime.name not in tables:
        return free
    target = min(N, math.ceil(tables[regime.name].predicted_free_fraction(k) * N))
    if free.size >= target:
        return free
    frozen = np.setdiff1d(np.arange(N), free, assume_unique=True)
    return np.sort(np.concatenate([free, frozen[:target - free.size]]))


def _round_setup(regime, k, X, free, thetaI, theta_hat, kappa, base, tables):
    """(config, slack vector, extra record fields) for round k."""
    M, N = X.shape
    XI = X[:, free]
    n = free.size
    common = dict(gamma=base.gamma, delta=base.delta, retries=base.retries)
    I_cols = np.arange(n)
    extra = {}
    if regime.name in ("neg", "proportional"):
        beta = regime.beta0 * 2.0 ** (-k / 4.0)
        c = schedules.proportional_round(theta_hat, X, free, kappa, beta, base.delta)
        return ColoringConfig.general(**common), c, extra
    if regime.name == "pos":
        cs = schedules.adaptive_zero_scalar(M, n, safety=regime.pos_safety)
        c = schedules.row_normalized_slack(cs, XI, I_cols)
        extra["predicted_n"] = None
        return ColoringConfig.zero_margin(**common), c, extra
    table = tables[regime.name]
    c = table.row_slack(k, XI, I_cols)
    extra["predicted_n"] = table.predicted_free_fraction(k) * N
    if table.uses_ode and k <= table.refined_rounds:
        r0 = float(thetaI @ thetaI) / n
        target = max(0.0, 1.0 - table.keep[k - 1] - regime.ode_tolerance)
        try:
            od = schedules.ode_coloring_params(M / n, c, min(r0, 1.0))
            extra["ode"] = {**od.to_dict(), "c_law": "empirical", "alpha": M / n}
            return ColoringConfig.ode(od.T1, target_fraction=target, **common), c, extra
        except (DegenerateStateError, HorizonError) as exc:
            extra["ode"] = {"error": str(exc)}
    return ColoringConfig.zero_margin(**common), c, extra


