"""Scalar Gaussian functionals and the LP order parameters (rho, t, gamma).

Closed forms used throughout (G standard normal, phi/Phi its pdf/cdf):

    E[min(|G|, t)^2]       = 1 - 2 Phi(-t) - 2 t phi(t) + 2 t^2 Phi(-t)
    E[(|G| - t)_+]          = 2 (phi(t) - t Phi(-t))
    E[(kappa - rho G)_+^2]  = (rho^2 + kappa^2) Phi(kappa/rho) + kappa rho phi(kappa/rho)

The first follows from E[G^2 1{|G| <= t}] = (2 Phi(t) - 1) - 2 t phi(t) plus
t^2 P(|G| > t).  For t(rho) we solve the equivalent equation

    1 - rho^2 = w(t) := E[(1 - G^2/t^2) 1{|G| <= t}]
              = (2 Phi(t) - 1)(1 - 1/t^2) + 2 phi(t)/t,

switching to the power series
w(t) = 2 t phi(0) sum_n (-t^2/2)^n / n! * 2 / ((2n+1)(2n+3)) for small t, where
the closed form cancels catastrophically.  All closed forms are cross-checked
against adaptive quadrature in the test-suite.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, special

from .errors import InfeasibleError

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
RHO_LO = 1e-6
RHO_HI = 1.0 - 1e-9
_SERIES_T = 0.5


def norm_cdf(x):
    return special.ndtr(x)


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) * INV_SQRT_2PI


def norm_ppf(p):
    return special.ndtri(p)


def _cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) * INV_SQRT_2PI


def clip_gap(t: float) -> float:
    """w(t) = 1 - E[min(|G|/t, 1)^2]; increases from 0 at t=0 to 1 at t=inf."""
    if t <= 0.0:
        return 0.0
    if math.isinf(t):
        return 1.0
    if t < _SERIES_T:
        x = -0.5 * t * t
        term, total = 1.0, 0.0
        for n in range(40):
            contrib = term * 2.0 / ((2 * n + 1) * (2 * n + 3))
            total += contrib
            if abs(contrib) < 1e-18 * abs(total):
                break
            term *= x / (n + 1)
        return 2.0 * t * INV_SQRT_2PI * total
    two_cdf_m1 = 1.0 - 2.0 * _cdf(-t)
    return two_cdf_m1 * (1.0 - 1.0 / (t * t)) + 2.0 * _pdf(t) / t


def min_sq(t: float) -> float:
    """E[min(|G|, t)^2].

    Split at |G| = t.  Integrating g^2 phi(g) by parts gives
    E[G^2; |G| < t] = (1 - 2 Phi(-t)) - 2 t phi(t), and the clipped part adds
    t^2 P(|G| >= t) = 2 t^2 Phi(-t).  Small t uses the series of ``clip_gap`` to
    avoid cancellation.
    """
    if t <= 0.0:
        return 0.0
    if math.isinf(t):
        return 1.0
    if t < _SERIES_T:
        return t * t * (1.0 - clip_gap(t))
    tail = _cdf(-t)
    return 1.0 - 2.0 * tail - 2.0 * t * _pdf(t) + 2.0 * t * t * tail


def excess(t: float) -> float:
    """E[(|G| - t)_+]."""
    if math.isinf(t):
        return 0.0
    return 2.0 * (_pdf(t) - t * _cdf(-t))


def hinge_sq(kappa: float, rho: float) -> float:
    """E[(kappa - rho G)_+^2]."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho == 0.0:
        return max(kappa, 0.0) ** 2
    z = kappa / rho
    return (rho * rho + kappa * kappa) * _cdf(z) + kappa * rho * _pdf(z)


def gaussian_moments(kind: str, *args: float) -> float:
    """Dispatch for the scalar Gaussian functionals by name."""
    if kind == "cdf":
        return _cdf(args[0])
    if kind == "pdf":
        return _pdf(args[0])
    if kind == "inv_cdf":
        return float(special.ndtri(args[0]))
    if kind == "min_sq":
        return min_sq(args[0])
    if kind == "excess":
        return excess(args[0])
    if kind == "hinge_sq":
        return hinge_sq(args[0], args[1])
    raise ValueError(f"unknown moment kind {kind!r}")


def t_of_rho(rho: float) -> float:
    """Unique t >= 0 with rho^2 = E[min(|G|/t, 1)^2]; 0 at rho=1 and +inf at rho=0."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if rho == 0.0:
        return math.inf
    if rho == 1.0:
        return 0.0
    r2 = rho * rho
    if r2 < 0.5:
        # h(t) = min_sq(t)/t^2 = rho^2, better conditioned when rho is small
        f = lambda s: math.log(min_sq(math.exp(s))) - 2.0 * s - math.log(r2)
    else:
        gap = (1.0 - rho) * (1.0 + rho)
        f = lambda s: math.log(clip_gap(math.exp(s))) - math.log(gap)
    lo, hi = -60.0, 40.0
    s = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return math.exp(s)


def rho_sq_residual(rho: float, t: float) -> float:
    """|rho^2 - E[min(|G|/t, 1)^2]|, the defining residual of t(rho)."""
    if math.isinf(t):
        return rho * rho
    if t == 0.0:
        return abs(rho * rho - 1.0)
    return abs(rho * rho - (1.0 - clip_gap(t)))


def phi_of_rho(rho: float, t: float | None = None) -> float:
    """phi(rho) = inf_t {rho^2 t/2 + E[min(|G|,t)^2]/(2t) + E[(|G|-t)_+]}."""
    if rho == 0.0:
        return 0.0
    if rho == 1.0:
        return SQRT_2_OVER_PI
    if t is None:
        t = t_of_rho(rho)
    return 0.5 * rho * rho * t + min_sq(t) / (2.0 * t) + excess(t)


def dphi(rho: float, t: float | None = None) -> float:
    """phi'(rho) = rho t(rho) (envelope theorem); equals 1 at rho=0."""
    if rho == 0.0:
        return 1.0
    if t is None:
        t = t_of_rho(rho)
    return rho * t


def feasibility_threshold(kappa: float) -> float:
    """sup_rho phi(rho)^2 / E[(kappa - rho G)_+^2]; +inf for kappa<0, 2 at kappa=0."""
    if kappa < 0:
        return math.inf
    if kappa == 0:
        return 2.0

    def ratio(rho):
        return phi_of_rho(rho) ** 2 / hinge_sq(kappa, rho)

    grid = np.linspace(0.005, 1.0, 200)
    vals = np.array([ratio(r) for r in grid])
    i = int(np.argmax(vals))
    if i == grid.size - 1:
        return float(vals[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda r: -ratio(r), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    return float(max(-res.fun, vals[i]))


def is_feasible(alpha: float, kappa: float) -> bool:
    return 0 < alpha < feasibility_threshold(kappa)


@dataclass(frozen=True)
class OrderParams:
    alpha: float
    kappa: float
    feasible: bool
    rho: float | None = None
    t: float | None = None
    gamma: float | None = None
    objective: float | None = None

    @property
    def tight_prediction(self) -> float:
        """2 Phi(-t): predicted fraction of LP coordinates at +-1."""
        return 2.0 * _cdf(-self.t)

    def require(self) -> "OrderParams":
        if not self.feasible:
            raise InfeasibleError(
                f"alpha={self.alpha} is above the LP feasibility threshold at kappa={self.kappa}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def foc_gap(rho: float, alpha: float, kappa: float) -> float:
    """phi(rho) phi'(rho)/rho - alpha Phi(kappa/rho); zero at the order parameter."""
    t = t_of_rho(rho)
    return phi_of_rho(rho, t) * t - alpha * _cdf(kappa / rho)


def maximin_value(rho: float, gamma: float, alpha: float, kappa: float) -> float:
    """-gamma sqrt(alpha E[(kappa-rho G)_+^2]) + sqrt(1+gamma^2) phi(rho)."""
    return -gamma * math.sqrt(alpha * hinge_sq(kappa, rho)) + math.sqrt(1 + gamma * gamma) * phi_of_rho(rho)


def objective_F(rho: float, alpha: float, kappa: float) -> float:
    return phi_of_rho(rho) ** 2 - alpha * hinge_sq(kappa, rho)


def solve_order_params(alpha: float, kappa: float) -> OrderParams:
    """Fixed point of the LP maximin problem at aspect ratio alpha and margin kappa."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not is_feasible(alpha, kappa):
        return OrderParams(alpha, kappa, feasible=False)
    g = lambda r: foc_gap(r, alpha, kappa)
    lo, hi = RHO_LO, RHO_HI
    glo, ghi = g(lo), g(hi)
    if glo <= 0:
        # F increasing only on an interior window: locate a point where the gap is positive
        grid = np.linspace(lo, hi, 400)
        pos = [r for r in grid if g(r) > 0]
        if not pos:
            return OrderParams(alpha, kappa, feasible=False)
        lo = pos[-1]
    if ghi >= 0:
        rho = hi
    else:
        rho = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    t = t_of_rho(rho)
    a = phi_of_rho(rho, t)
    b = math.sqrt(alpha * hinge_sq(kappa, rho))
    if a <= b:
        return OrderParams(alpha, kappa, feasible=False)
    gamma = b / math.sqrt(a * a - b * b)
    return OrderParams(alpha, kappa, True, rho, t, gamma, math.sqrt(a * a - b * b))


@dataclass(frozen=True)
class MarginLaw:
    """Law of max(rho G, kappa): an atom of mass Phi(kappa/rho) at kappa plus a Gaussian tail."""

    rho: float
    kappa: float

    @property
    def atom_mass(self) -> float:
        return _cdf(self.kappa / self.rho)

    def quantile(self, p):
        return margin_law_quantile(self, p)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.maximum(self.rho * rng.standard_normal(size), self.kappa)

    @classmethod
    def from_order_params(cls, op: OrderParams) -> "MarginLaw":
        op.require()
        return cls(op.rho, op.kappa)


def margin_law_quantile(law: MarginLaw, p):
    """kappa for p <= Phi(kappa/rho), rho * Phi^{-1}(p) otherwise; vectorized in p."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any((arr <= 0) | (arr >= 1)):
        raise ValueError("quantile levels must lie in (0, 1)")
    out = np.where(arr <= law.atom_mass, law.kappa, law.rho * special.ndtri(arr))
    return float(out) if out.ndim == 0 else out


def lambert_b(c: float) -> float:
    """Solution b of 3 b e^b = c."""
    return float(np.real(special.lambertw(c / 3.0)))
