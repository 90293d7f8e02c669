"""First- and reweighted second-moment bounds on the storage capacity.

Desk values of alpha_low are computed by this module; the underlying theory
gives admissibility criteria only, so every reported alpha_low is labelled as
computed rather than quoted.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .analytics import _cdf, _pdf, hinge_sq

_GL_NODES = 400
_UPPER_SPAN = 40.0


def alpha_up(kappa: float) -> float:
    """First-moment bound for kappa<0, the (2/pi)/E[(kappa-G)_+^2] bound for kappa>=0."""
    if kappa < 0:
        return alpha_up_first_moment(kappa)
    return alpha_up_gordon(kappa)


def alpha_up_first_moment(kappa: float) -> float:
    return -math.log(2.0) / math.log1p(-float(special.ndtr(kappa)))


def alpha_up_gordon(kappa: float) -> float:
    return (2.0 / math.pi) / hinge_sq(kappa, 1.0)


def c_star(kappa: float) -> float:
    """Unique c > 0 with c (1 - Phi(kappa + c)) = phi(kappa + c), for kappa < 0."""
    if kappa >= 0:
        raise ValueError("c_star is defined for kappa < 0 only")
    # scaled by 1/phi(kappa+c) so the root survives when c is ~exp(-kappa^2/2)
    f = lambda c: c * _mills(kappa + c) - 1.0
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    return optimize.brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def _mills(x: float) -> float:
    """(1 - Phi(x)) / phi(x), stable for large positive x."""
    return float(special.erfcx(x / math.sqrt(2.0)) * math.sqrt(math.pi / 2.0))


def c_star_residual(kappa: float, c: float) -> float:
    return c * (1.0 - _cdf(kappa + c)) - _pdf(kappa + c)


@functools.lru_cache(maxsize=8)
def _gl(n: int = _GL_NODES):
    return np.polynomial.legendre.leggauss(n)


def e_at_zero(kappa: float, c: float) -> float:
    """e(0) = (E[f(G)])^2 = (exp(c^2/2) (1 - Phi(kappa + c)))^2."""
    return (math.exp(0.5 * c * c) * float(special.ndtr(-(kappa + c)))) ** 2


def e_increment(kappa: float, q, c: float | None = None, nodes: int = 200):
    """e(q) - e(0), vectorized over q.

    Gaussian interpolation gives the linear ODE e'(s) = c^2 e(s) + B(s) + C(s),
    where B collects the cross terms with the jump of f at kappa and C is the
    bivariate density at (kappa, kappa).  Hence

        e(q) - e(0) = e(0) expm1(c^2 q) + exp(c^2 q) int_0^q exp(-c^2 s) (B + C) ds,

    integrated by Gauss-Legendre after s = sin(theta), which absorbs the
    1/sqrt(1-s^2) singularity of C.  Working with the increment keeps full
    relative precision when e(q) - e(0) is of order Phi(kappa).
    """
    if c is None:
        c = c_star(kappa)
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    if np.any(np.abs(q) > 1):
        raise ValueError("q must lie in [-1, 1]")
    xg, wg = _gl(nodes)
    top = np.arcsin(q)[:, None]
    th = 0.5 * top * (xg[None, :] + 1.0)
    w = 0.5 * top * wg[None, :]
    s, cs = np.sin(th), np.cos(th)
    phik = _pdf(kappa)
    arg = -kappa * cs / (1.0 + s) - c * cs
    log_b = (-c * kappa + math.log(2 * c * phik) - c * s * kappa + 0.5 * c * c * cs * cs
             + special.log_ndtr(arg)) if c > 0 else None
    b_term = -np.exp(log_b) * cs if c > 0 else 0.0
    with np.errstate(divide="ignore"):
        c_term = np.exp(-2 * c * kappa - math.log(2 * math.pi) - kappa * kappa / (1.0 + s))
    integral = np.sum(w * np.exp(-c * c * s) * (b_term + c_term), axis=1)
    e0 = e_at_zero(kappa, c)
    out = e0 * np.expm1(c * c * q) + np.exp(c * c * q) * integral
    return out


def e_of_q(kappa: float, q: float, c: float | None = None) -> float:
    """e(q) = E_q[f(G1) f(G2)] with f(x) = exp(-c* x) 1{x >= kappa}."""
    if abs(q) > 1:
        raise ValueError("q must lie in [-1, 1]")
    if c is None:
        c = c_star(kappa)
    return e_at_zero(kappa, c) + float(e_increment(kappa, q, c)[0])


def e_of_q_direct(kappa: float, q: float, c: float | None = None, nodes: int = _GL_NODES) -> float:
    """e(q) by one-dimensional quadrature over G1 with the G2 expectation in closed form.

    Conditioning on G1 = x, G2 ~ N(qx, 1-q^2) and the inner expectation is
    exp(-c q x + c^2 s^2/2) Phi((q x - c s^2 - kappa)/s) with s^2 = 1-q^2.  The
    outer integral over x >= kappa is Gauss-Legendre on [kappa, kappa + 40].
    Independent of :func:`e_increment`; used to cross-check it.
    """
    if abs(q) > 1:
        raise ValueError("q must lie in [-1, 1]")
    if c is None:
        c = c_star(kappa)
    if q == 1.0:
        return math.exp(2 * c * c) * float(special.ndtr(-(kappa + 2 * c)))
    if q == -1.0:
        return max(float(special.ndtr(-kappa) - special.ndtr(kappa)), 0.0)
    s2 = (1.0 - q) * (1.0 + q)
    s = math.sqrt(s2)
    xg, wg = _gl(nodes)
    a, b = kappa, kappa + _UPPER_SPAN
    x = 0.5 * (b - a) * xg + 0.5 * (b + a)
    log_outer = -c * x - 0.5 * x * x - 0.5 * math.log(2 * math.pi)
    log_inner = -c * q * x + 0.5 * c * c * s2 + special.log_ndtr((q * x - c * s2 - kappa) / s)
    return float(0.5 * (b - a) * np.sum(wg * np.exp(log_outer + log_inner)))


def entropy(x):
    """Binary entropy in nats with Ent(0) = Ent(1) = 0."""
    x = np.asarray(x, dtype=np.float64)
    out = -special.xlogy(x, x) - special.xlogy(1.0 - x, 1.0 - x)
    return float(out) if out.ndim == 0 else out


@dataclass
class OverlapFunctional:
    """Tabulated e(q) on a grid, reused across every alpha of the bisection."""

    kappa: float
    c_star: float
    q: np.ndarray
    de: np.ndarray  # e(q) - e(0)
    e0: float
    e_dd0: float

    @classmethod
    def build(cls, kappa: float, q_grid: int = 2001) -> "OverlapFunctional":
        c = c_star(kappa)
        q = np.linspace(-1.0, 1.0, q_grid)
        q[q_grid // 2] = 0.0
        return cls(kappa, c, q, e_increment(kappa, q, c), e_at_zero(kappa, c),
                   e_second_derivative(kappa, c))

    @property
    def e(self) -> np.ndarray:
        return self.e0 + self.de

    def log_ratio(self, q) -> np.ndarray:
        """log(e(q)/e(0)) without cancellation."""
        return np.log1p(e_increment(self.kappa, q, self.c_star) / self.e0)

    def __call__(self, q: float) -> float:
        return e_of_q(self.kappa, q, self.c_star)

    def psi(self, q, alpha: float):
        q = np.asarray(q, dtype=np.float64)
        out = (alpha * (math.log(self.e0) + self.log_ratio(q.ravel()).reshape(q.shape))
               + entropy((1 + q) / 2) + math.log(2))
        return float(out) if out.ndim == 0 else out

    def e_at(self, q):
        q = np.asarray(q, dtype=np.float64)
        out = self.e0 + e_increment(self.kappa, q.ravel(), self.c_star).reshape(q.shape)
        return float(out) if out.ndim == 0 else out


def e_second_derivative(kappa: float, c: float | None = None) -> float:
    """e''(0) by central second differences, Richardson-extrapolated over h = 1e-3, 5e-4."""
    if c is None:
        c = c_star(kappa)

    def d2(h):
        return float(np.sum(e_increment(kappa, [h, -h], c))) / (h * h)

    coarse, fine = d2(1e-3), d2(5e-4)
    return (4 * fine - coarse) / 3


def psi(q: float, alpha: float, kappa: float, c: float | None = None) -> float:
    """Psi(q; alpha) = alpha log e(q) + Ent((1+q)/2) + log 2."""
    if c is None:
        c = c_star(kappa)
    log_e = math.log(e_at_zero(kappa, c)) + math.log1p(float(e_increment(kappa, q, c)[0]) / e_at_zero(kappa, c))
    return alpha * log_e + entropy((1 + q) / 2) + math.log(2)


def psi_second_derivative_at_zero(alpha: float, e0: float, e_dd0: float) -> float:
    """Psi''(0; alpha) = alpha e''(0)/e(0) - 1, using e'(0) = 0."""
    return alpha * e_dd0 / e0 - 1.0


def _psi_gap(ov: OverlapFunctional, alpha: float) -> np.ndarray:
    """Psi(q; alpha) - Psi(0; alpha) on the tabulated grid."""
    return alpha * np.log1p(ov.de / ov.e0) + entropy((1 + ov.q) / 2) - math.log(2)


def _admissible(ov: OverlapFunctional, alpha: float, gap: float = 1e-9) -> tuple[bool, float]:
    """Unique maximum at q=0 with a strict gap, plus a negative second derivative."""
    if psi_second_derivative_at_zero(alpha, ov.e0, ov.e_dd0) >= 0:
        return False, math.nan
    diff = _psi_gap(ov, alpha)
    far = np.abs(ov.q) >= 2.0 / ov.q.size
    i = int(np.argmax(np.where(far, diff, -np.inf)))
    best = diff[i]
    # golden-section refinement around the grid argmax
    lo = ov.q[max(i - 1, 0)]
    hi = ov.q[min(i + 1, ov.q.size - 1)]
    if lo < hi:
        f = lambda q: -(alpha * float(ov.log_ratio(q)[0]) + entropy((1 + q) / 2) - math.log(2))
        res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        if abs(res.x) >= 2.0 / ov.q.size:
            best = max(best, -res.fun)
    return bool(best <= -gap), float(ov.q[i])


def alpha_low(kappa: float, q_grid: int = 2001, alpha_tol: float = 1e-6,
              overlap: OverlapFunctional | None = None) -> float:
    """Largest alpha whose Psi(.; alpha) is uniquely maximized at 0 with Psi''(0) < 0.

    ``alpha_tol`` is relative to alpha_up(kappa).
    """
    if kappa >= 0:
        raise ValueError("alpha_low is offered for kappa < 0 only")
    ov = overlap or OverlapFunctional.build(kappa, q_grid)
    lo, hi = 0.0, alpha_up(kappa) * 1.5
    floor = 1e-6
    if not _admissible(ov, floor)[0]:
        raise RuntimeError(f"no admissible alpha above {floor} at kappa={kappa}")
    lo = floor
    while _admissible(ov, hi)[0]:
        lo, hi = hi, hi * 2
    tol = alpha_tol * alpha_up(kappa)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _admissible(ov, mid)[0]:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class CapacityReport:
    kappa: float
    alpha_up: float
    alpha_low: float | None = None
    c_star: float | None = None
    psi_check: dict = field(default_factory=dict)
    alpha_up_other_branch: float | None = None

    def row(self) -> dict:
        return {
            "kappa": self.kappa,
            "alpha_up": self.alpha_up,
            "alpha_low": "" if self.alpha_low is None else self.alpha_low,
            "c_star": "" if self.c_star is None else self.c_star,
            # lower bounds come from our own admissibility scan, not from a published table
            "alpha_low_source": "" if self.alpha_low is None else "derived",
        }


def capacity_report(kappa: float, q_grid: int = 2001, alpha_tol: float = 1e-6,
                    with_lower: bool = True) -> CapacityReport:
    rep = CapacityReport(kappa, alpha_up(kappa))
    if kappa == 0:
        rep.alpha_up_other_branch = alpha_up_first_moment(0.0)
    if kappa < 0 and with_lower:
        ov = OverlapFunctional.build(kappa, q_grid)
        rep.c_star = ov.c_star
        rep.alpha_low = alpha_low(kappa, q_grid, alpha_tol, overlap=ov)
        rep.psi_check = {
            "argmax_q": float(ov.q[int(np.argmax(_psi_gap(ov, rep.alpha_low)))]),
            "psi_second_deriv_at_0": psi_second_derivative_at_zero(rep.alpha_low, ov.e0, ov.e_dd0),
        }
    return rep
