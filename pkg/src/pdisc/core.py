"""Instances, margins, solution checks and shared empirical utilities.

Random streams
--------------
Every stochastic stage draws from its own PCG64 generator seeded through
``numpy.random.SeedSequence(entropy=seed, spawn_key=(tag, *keys))``.  The tag
separates the instance matrix (0), the LP direction (1), the edge-walk (2) and
the final rounding (3), so any stage can be replayed without replaying the
others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SizeError

INSTANCE_STREAM = 0
DIRECTION_STREAM = 1
WALK_STREAM = 2
ROUNDING_STREAM = 3

MAGIC = "PDISC1"
MAX_ENTRIES = 2**31  # 16 GiB of float64; anything above is refused up front


def stream(seed: int, tag: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, tag, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=(tag, *keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Instance:
    """A random perceptron instance: M Gaussian rows in dimension N, margin kappa."""

    X: np.ndarray
    kappa: float
    seed: int | None = None
    M: int = field(init=False)
    N: int = field(init=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise SizeError("X must be a 2-d matrix")
        if not np.all(np.isfinite(X)):
            raise ValueError("X has non-finite entries")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "M", X.shape[0])
        object.__setattr__(self, "N", X.shape[1])
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def alpha(self) -> float:
        return self.M / self.N

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.X, axis=1)


def generate_instance(M: int, N: int, kappa: float, seed: int) -> Instance:
    """Draw X with i.i.d. N(0,1) entries from the instance stream of ``seed``."""
    M, N = int(M), int(N)
    if M < 1 or N < 1:
        raise SizeError(f"M and N must be positive, got M={M}, N={N}")
    if M * N > MAX_ENTRIES:
        raise SizeError(f"M*N = {M * N} exceeds the {MAX_ENTRIES} entry limit")
    X = stream(seed, INSTANCE_STREAM).standard_normal((M, N))
    return Instance(X, kappa, seed)


def margins(inst: Instance, theta) -> np.ndarray:
    """Normalized margins <X_i, theta>/sqrt(N), one per row."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (inst.N,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({inst.N},)")
    return inst.X @ theta / math.sqrt(inst.N)


@dataclass
class SolutionReport:
    feasible: bool
    min_margin: float
    violated_rows: list[int]
    binary: bool

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "min_margin": self.min_margin,
            "violated_rows": list(self.violated_rows),
            "binary": self.binary,
        }


def verify_solution(inst: Instance, chi, kappa: float) -> SolutionReport:
    chi = np.asarray(chi, dtype=np.float64)
    m = margins(inst, chi)
    violated = np.flatnonzero(m < kappa)
    return SolutionReport(
        feasible=violated.size == 0,
        min_margin=float(m.min() - kappa),
        violated_rows=[int(i) for i in violated],
        binary=bool(np.all(np.abs(chi) == 1.0)),
    )


def wasserstein2(samples, quantile, grid_size: int = 4096) -> float:
    """W2 between the empirical law of ``samples`` and a law given by its quantile.

    Both quantile functions are evaluated at the midpoints of a uniform grid of
    ``grid_size`` cells on (0, 1); ``quantile`` must accept an array of levels.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("wasserstein2 needs at least one sample")
    p = (np.arange(grid_size) + 0.5) / grid_size
    idx = np.minimum(np.ceil(p * x.size).astype(np.int64) - 1, x.size - 1)
    q = np.asarray(quantile(p), dtype=np.float64)
    return float(math.sqrt(np.mean((x[idx] - q) ** 2)))


def empirical_quantile(samples):
    """Left-continuous quantile function of the empirical law of ``samples``."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())

    def q(p):
        p = np.asarray(p, dtype=np.float64)
        idx = np.clip(np.ceil(p * x.size).astype(np.int64) - 1, 0, x.size - 1)
        return x[idx]

    return q


def save_instance(inst: Instance, path, include_matrix: bool = True) -> None:
    """Write the ``PDISC1`` header, optionally followed by X as little-endian float64."""
    header = f"{MAGIC}\n{inst.M}\n{inst.N}\n{inst.kappa!r}\n{inst.seed}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if include_matrix:
            fh.write(inst.X.astype("<f8").tobytes(order="C"))


def load_instance(path) -> Instance:
    data = Path(path).read_bytes()
    lines = data.split(b"\n", 5)
    if len(lines) < 6 or lines[0] != MAGIC.encode():
        raise ValueError(f"{path}: not a {MAGIC} instance file")
    M, N = int(lines[1]), int(lines[2])
    kappa = float(lines[3])
    seed = None if lines[4] == b"None" else int(lines[4])
    payload = lines[5]
    if not payload:
        if seed is None:
            raise ValueError(f"{path}: header-only file without a seed")
        inst = generate_instance(M, N, kappa, seed)
        return inst
    if len(payload) != 8 * M * N:
        raise ValueError(f"{path}: expected {8 * M * N} matrix bytes, found {len(payload)}")
    X = np.frombuffer(payload, dtype="<f8").reshape(M, N).astype(np.float64)
    return Instance(X, kappa, seed)
