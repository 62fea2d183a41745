"""McKean-Vlasov forward dynamics as an interacting particle system.

The baseline process started at ``(0, x0)`` is simulated with N interacting
particles whose empirical measure stands in for the law of the process.  That
cloud is then frozen and used to drive conditional processes started at an
arbitrary ``(t, x)``; conditional paths do not interact with one another.

Coefficients follow the signature ``b(t, x_prime, x)`` where ``x_prime`` is
the independent-copy argument being averaged over.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import rng
from .errors import ConfigError, SimulationDivergedError
from .io import read_csv, write_csv

_CHUNK = 2_000_000


def cloud_average(func, t: float, cloud: np.ndarray, x: np.ndarray, *extra) -> np.ndarray:
    """``out[k] = mean_j func(t, cloud[j], x[k], *extra_k)`` by chunked broadcasting.

    ``extra`` holds per-``x`` arrays (broadcast along the cloud axis).
    """
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    extra = [np.broadcast_to(np.asarray(e, dtype=float), x.shape).ravel() for e in extra]
    out = np.empty_like(flat)
    step = max(1, _CHUNK // max(1, cloud.size))
    cp = cloud[None, :]
    for s in range(0, flat.size, step):
        sl = slice(s, s + step)
        args = [e[sl, None] for e in extra]
        out[sl] = np.mean(np.broadcast_to(func(t, cp, flat[sl, None], *args), (flat[sl].size, cloud.size)), axis=1)
    return out.reshape(x.shape)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"step count M must be an integer >= 1, got {self.M}")

    @property
    def h(self) -> float:
        return self.T / self.M

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.T / self.M

    def t(self, m: int) -> float:
        return m * self.T / self.M

    def index_of(self, t: float) -> int:
        m = round(t * self.M / self.T)
        if abs(self.t(m) - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"time {t} is not a grid node of {self}")
        return m


@dataclass(frozen=True)
class CoefficientModel:
    """Drift ``b(t, x', x)`` and diffusion ``sigma(t, x', x)``, NumPy-broadcastable.

    ``b_mean``/``sigma_mean`` optionally give the cloud average
    ``(t, cloud, x) -> mean_j b(t, cloud_j, x)`` in closed form; otherwise it
    is computed by brute-force averaging.
    """

    b: Callable
    sigma: Callable
    lipschitz_k: float | None = None
    growth_c: float | None = None
    b_mean: Callable | None = None
    sigma_mean: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def mean_b(self, t, cloud, x):
        if self.b_mean is not None:
            return np.broadcast_to(self.b_mean(t, cloud, np.asarray(x, dtype=float)), np.shape(x)).astype(float)
        return cloud_average(self.b, t, cloud, x)

    def mean_sigma(self, t, cloud, x):
        if self.sigma_mean is not None:
            return np.broadcast_to(self.sigma_mean(t, cloud, np.asarray(x, dtype=float)), np.shape(x)).astype(float)
        return cloud_average(self.sigma, t, cloud, x)

    def spot_check(self, T: float = 1.0, n: int = 512, seed: int = 0, scale: float = 5.0) -> None:
        """Sampled check of the asserted Lipschitz constant; raises ConfigError on violation."""
        if self.lipschitz_k is None:
            return
        g = np.random.default_rng(seed)
        t = g.uniform(0, T, n)
        p1, x1, p2, x2 = (g.uniform(-scale, scale, n) for _ in range(4))
        bound = self.lipschitz_k * (np.abs(p1 - p2) + np.abs(x1 - x2)) * (1 + 1e-6)
        problems = []
        for label, fn in (("drift", self.b), ("diffusion", self.sigma)):
            gap = np.abs(np.broadcast_to(fn(t, p1, x1), (n,)) - np.broadcast_to(fn(t, p2, x2), (n,)))
            if (gap > bound + 1e-12).any():
                problems.append(f"{label} of model {self.name!r} violates lipschitz_k={self.lipschitz_k}")
        if problems:
            raise ConfigError(problems)


def linear_coefficients(drift=(0.0, 0.0, 0.0), diffusion=(0.0, 0.0, 0.0), name: str = "linear") -> CoefficientModel:
    """Model with ``b = a1*x' + a2*x + a0`` and ``sigma = s1*x' + s2*x + s0``.

    Cloud averages are exact: ``a1 * mean(cloud) + a2 * x + a0``.
    """
    a1, a2, a0 = map(float, drift)
    s1, s2, s0 = map(float, diffusion)

    def b(t, xp, x):
        return a1 * xp + a2 * x + a0

    def sigma(t, xp, x):
        return s1 * xp + s2 * x + s0

    def b_mean(t, cloud, x):
        return a1 * float(np.mean(cloud)) + a2 * x + a0

    def sigma_mean(t, cloud, x):
        return s1 * float(np.mean(cloud)) + s2 * x + s0

    k = max(abs(a1) + abs(s1), abs(a2) + abs(s2))
    return CoefficientModel(
        b, sigma, lipschitz_k=k, growth_c=None, b_mean=b_mean, sigma_mean=sigma_mean,
        name=name, params={"drift": [a1, a2, a0], "diffusion": [s1, s2, s0]},
    )


@dataclass(frozen=True)
class BaselineLaw:
    """Frozen interacting-particle cloud of the baseline process.

    ``X`` has shape (M+1, N) and ``dW`` shape (M, N).
    """

    grid: TimeGrid
    X: np.ndarray
    dW: np.ndarray
    seed: int
    x0: float
    model_name: str = "custom"

    def __post_init__(self):
        self.X.setflags(write=False)
        self.dW.setflags(write=False)

    @property
    def N(self) -> int:
        return self.X.shape[1]

    def slice(self, m: int) -> np.ndarray:
        return self.X[m]

    def save(self, path) -> Path:
        """Write ``m,i,X,dW`` rows plus a ``.meta.json`` sidecar."""
        path = Path(path)
        M, N = self.grid.M, self.N
        m_idx = np.repeat(np.arange(M + 1), N)
        i_idx = np.tile(np.arange(N), M + 1)
        dW = np.vstack([self.dW, np.zeros((1, N))])  # no increment after the last node
        write_csv(path, ["m", "i", "X", "dW"], [m_idx, i_idx, self.X.ravel(), dW.ravel()])
        meta = {"seed": self.seed, "N": N, "M": M, "T": self.grid.T, "x0": self.x0, "model": self.model_name}
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "BaselineLaw":
        path = Path(path)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        cols = read_csv(path)
        M, N = int(meta["M"]), int(meta["N"])
        X = cols["X"].reshape(M + 1, N)
        dW = cols["dW"].reshape(M + 1, N)[:M]
        return cls(TimeGrid(float(meta["T"]), M), X.copy(), dW.copy(), int(meta["seed"]), float(meta["x0"]), meta["model"])


def _check_finite(row: np.ndarray, m: int) -> None:
    bad = ~np.isfinite(row)
    if bad.any():
        i = int(np.argmax(bad))
        raise SimulationDivergedError(m, i, float(row[i]))


def simulate_baseline(model: CoefficientModel, x0: float, grid: TimeGrid, N: int, seed: int) -> BaselineLaw:
    """Euler-Maruyama for the N-particle system with empirical-measure interaction."""
    if N < 2:
        raise ValueError(f"need at least 2 particles, got N={N}")
    h = grid.h
    X = np.empty((grid.M + 1, N))
    X[0] = x0
    dW = rng.brownian_increments(seed, rng.BASELINE_STREAM, grid.M, N, h)
    for m in range(grid.M):
        t = grid.t(m)
        xm = X[m]
        X[m + 1] = xm + model.mean_b(t, xm, xm) * h + model.mean_sigma(t, xm, xm) * dW[m]
        _check_finite(X[m + 1], m + 1)
    return BaselineLaw(grid, X, dW, int(seed), float(x0), model.name)


def mean_coeffs(law: BaselineLaw, model: CoefficientModel, t_index: int, x):
    """Cloud-averaged drift and diffusion at node ``t_index`` evaluated at state(s) ``x``."""
    if not 0 <= t_index <= law.grid.M:
        raise IndexError(f"t_index {t_index} outside grid 0..{law.grid.M}")
    t = law.grid.t(t_index)
    cloud = law.X[t_index]
    return model.mean_b(t, cloud, x), model.mean_sigma(t, cloud, x)


@dataclass(frozen=True)
class ConditionalPaths:
    """K independent paths from ``(t_start, x)``; row r is grid node ``t_start + r``."""

    t_start: int
    x: float
    X: np.ndarray
    dW: np.ndarray
    stream: int


def simulate_conditional(
    law: BaselineLaw,
    model: CoefficientModel,
    t_start: int,
    x: float,
    K: int,
    seed: int,
    stream: int | None = None,
) -> ConditionalPaths:
    """Euler scheme for the conditional process driven by the frozen baseline law.

    The default stream is derived from ``(t_start, x)`` and is disjoint from the
    baseline stream.  Pass an explicit ``stream`` to share increments across
    starting points (common random numbers).
    """
    grid = law.grid
    if not 0 <= t_start < grid.M:
        raise ValueError(f"t_start must lie in [0, M), got {t_start}")
    if K < 1:
        raise ValueError("need at least one conditional path")
    if stream is None:
        stream = rng.stream_id("conditional", int(t_start), float(x))
    steps = grid.M - t_start
    h = grid.h
    dW = rng.brownian_increments(seed, stream, steps, K, h, first_step=t_start)
    X = np.empty((steps + 1, K))
    X[0] = x
    for r in range(steps):
        bbar, sbar = mean_coeffs(law, model, t_start + r, X[r])
        X[r + 1] = X[r] + bbar * h + sbar * dW[r]
        _check_finite(X[r + 1], t_start + r + 1)
    return ConditionalPaths(int(t_start), float(x), X, dW, int(stream))


def moment_check(X: np.ndarray, p: float = 2.0) -> float:
    """Empirical ``E[sup_m |X_m|^p]`` for paths stored as rows=time, columns=sample."""
    if p < 2:
        raise ValueError("moment order must be >= 2")
    X = np.asarray(X.X if isinstance(X, (BaselineLaw, ConditionalPaths)) else X, dtype=float)
    return float(np.mean(np.max(np.abs(X), axis=0) ** p))
