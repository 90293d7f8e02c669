"""First-moment exponent for m-tuples with pairwise overlaps in a window, and the
bivariate Gaussian lower-tail bound it relies on, with an importance-sampling check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import stream

OGP_STREAM = 4
A_CUTOFF = -2.0  # joint_tail_bound is only claimed for A <= A_CUTOFF


@dataclass(frozen=True)
class OgpQuery:
    m: int
    beta: float
    eta: float
    alpha: float
    kappa: float
    iota: float = 0.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not 0 < self.eta < self.beta < 1:
            raise ValueError(f"need 0 < eta < beta < 1, got eta={self.eta}, beta={self.beta}")
        if self.iota < 0:
            raise ValueError("iota must be nonnegative")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


def binary_entropy(x: float) -> float:
    """-x log x - (1-x) log(1-x) in nats, continuous at 0 and 1."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("entropy argument must lie in [0, 1]")
    return float(special.entr(x) + special.entr(1.0 - x))


def constraint_log_prob(m: int, beta: float, kappa: float) -> float:
    """log(1 - m Phi(kappa) + 2 m (m-1) Phi(kappa) Phi(-|kappa| sqrt((1-beta)/2))).

    Phi(kappa) is carried in log space so that very negative kappa does not underflow.
    """
    log_p = special.log_ndtr(kappa)
    p = math.exp(log_p)
    pair = special.ndtr(-abs(kappa) * math.sqrt((1.0 - beta) / 2.0))
    inner = -m + 2.0 * m * (m - 1) * pair
    arg = 1.0 + p * inner
    if arg <= 0:
        raise ValueError(
            f"log argument {arg:.3g} <= 0: m={m} is too large for kappa={kappa} in this bound")
    return float(math.log1p(p * inner))


def ogp_exponent(q: OgpQuery) -> float:
    """Per-N growth rate of the expected number of admissible m-tuples; negative = empty whp."""
    ent = binary_entropy((1.0 + q.beta - q.eta) / 2.0)
    return float(math.log(2.0) + (q.m - 1) * ent + q.m * q.iota
                 + q.alpha * constraint_log_prob(q.m, q.beta, q.kappa))


def ogp_alpha_root(m: int, beta: float, eta: float, kappa: float, iota: float = 0.0) -> float:
    """alpha at which the exponent crosses zero (it is affine in alpha)."""
    base = ogp_exponent(OgpQuery(m, beta, eta, 0.0, kappa, iota))
    slope = constraint_log_prob(m, beta, kappa)
    if slope >= 0:
        return math.inf
    return base / -slope


def ogp_constant_scan(kappa: float, max_power: int = 60) -> dict:
    """Smallest power of two C1 with negative exponent at the large-|kappa| parameters

    beta = 1 - 9 L/kappa^2, eta = L/kappa^2, m = floor(kappa^2), alpha = C1 L / (kappa^2 Phi(kappa)),
    where L = log(|kappa|)^2.
    """
    L = math.log(abs(kappa)) ** 2
    k2 = kappa * kappa
    beta, eta, m = 1.0 - 9.0 * L / k2, L / k2, int(math.floor(k2))
    phi = math.exp(special.log_ndtr(kappa))
    for p in range(-10, max_power + 1):
        C1 = 2.0 ** p
        alpha = C1 * L / (k2 * phi)
        e = ogp_exponent(OgpQuery(m, beta, eta, alpha, kappa))
        if e < 0:
            return {"C1": C1, "alpha": alpha, "exponent": e, "m": m, "beta": beta, "eta": eta}
    raise ValueError(f"no C1 <= 2^{max_power} makes the exponent negative at kappa={kappa}")


def joint_tail_bound(A: float, q: float) -> float:
    """4 Phi(A) (1 - Phi(|A| sqrt((1-q)/2))): bound on P(G <= A, G' <= A) at correlation q."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("correlation q must lie in [0, 1]")
    if A > A_CUTOFF:
        raise ValueError(f"A={A} > {A_CUTOFF}: the bound is only claimed for sufficiently negative A")
    return float(4.0 * special.ndtr(A) * special.ndtr(-abs(A) * math.sqrt((1.0 - q) / 2.0)))


@dataclass(frozen=True)
class TailEstimate:
    estimate: float
    std_error: float
    draws: int
    bound: float

    @property
    def dominated(self) -> bool:
        return self.estimate <= self.bound + 3.0 * self.std_error


def joint_tail_mc(A: float, q: float, draws: int = 10**6, seed: int = 0, chunk: int = 10**6) -> TailEstimate:
    """P(G <= A, G' <= A) for standard normals with correlation q.

    G is drawn from its law conditioned on G <= A (inverse CDF), and the event for
    G' = q G + sqrt(1-q^2) Z is integrated out exactly, so the estimator is
    Phi(A) * mean(Phi((A - q G)/sqrt(1 - q^2))).  Chunks use independent seeded
    streams and are merged in order.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("correlation q must lie in [0, 1]")
    pA = float(special.ndtr(A))
    bound = joint_tail_bound(A, q)
    if q == 1.0:
        return TailEstimate(pA, 0.0, draws, bound)
    s = math.sqrt(1.0 - q * q)
    total, total_sq, n = 0.0, 0.0, 0
    for i in range(math.ceil(draws / chunk)):
        size = min(chunk, draws - n)
        u = stream(seed, OGP_STREAM, i).random(size)
        # inverse CDF of G given G <= A, computed in log space for very negative A
        g = special.ndtri(np.clip(u, 1e-300, 1.0) * pA)
        w = special.ndtr((A - q * g) / s)
        total += float(w.sum())
        total_sq += float(np.square(w).sum())
        n += size
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return TailEstimate(pA * mean, pA * math.sqrt(var / n), n, bound)


OGP_CSV_COLUMNS = ("kappa", "alpha", "m", "beta", "eta", "iota", "exponent")


def ogp_grid(kappas, alphas, ms, betas, etas, iotas=(0.0,)) -> list:
    rows = []
    for kappa in kappas:
        for alpha in alphas:
            for m in ms:
                for beta in betas:
                    for eta in etas:
                        for iota in iotas:
                            try:
                                e = ogp_exponent(OgpQuery(int(m), beta, eta, alpha, kappa, iota))
                            except ValueError:
                                e = math.nan
                            rows.append({"kappa": kappa, "alpha": alpha, "m": int(m), "beta": beta,
                                         "eta": eta, "iota": iota, "exponent": e})
    return rows
