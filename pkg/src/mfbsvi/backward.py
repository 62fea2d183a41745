"""Backward regression Monte Carlo for the penalized mean-field BSDE.

The solve is a cascade.  Stage 1 runs the coupled recursion along the
baseline particle cloud, where the mean-field arguments of the driver are
averages over the cloud's own values.  Stage 2 freezes those values and solves
a classical (non mean-field) equation on independent conditional paths from
any ``(t, x)``; its value at the start node is ``u(t, x)``.

Per backward step, with ``E_m`` the regression estimate of the conditional
expectation given the state::

    z_m  = E_m[Y_{m+1} dW_m] / h
    F_m  = driver averaged over the cloud, evaluated at y = E_m[Y_{m+1}]
    arg  = E_m[Y_{m+1}] + h F_m
    penalized:  Y_m = solution of Y + h grad(phi_eps)(Y) = arg,  U_m = grad(phi_eps)(Y_m)
    proximal:   Y_m = J_h(arg),                                  U_m = (arg - Y_m) / h
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .convex import ConvexObstacle, Zero
from .errors import ConfigError, InfeasibleTerminalError, MFBSVIError, SimulationDivergedError
from .field import FieldSolution
from .forward import BaselineLaw, CoefficientModel, simulate_conditional
from .io import write_csv
from .regression import BASES, fit_condexp

SCHEMES = ("penalized", "proximal")
DOMAIN_TOL = 1e-8
_CHUNK = 2_000_000


def _pair_average(f, t, xp, yp, x, y, z):
    """``out[k] = mean_j f(t, xp[j], x[k], yp[j], y[k], z[k])`` by chunked broadcasting."""
    x = np.asarray(x, dtype=float)
    y = np.broadcast_to(np.asarray(y, dtype=float), x.shape)
    z = np.broadcast_to(np.asarray(z, dtype=float), x.shape)
    out = np.empty(x.shape)
    step = max(1, _CHUNK // max(1, xp.size))
    xpp, ypp = xp[None, :], yp[None, :]
    for s in range(0, x.size, step):
        sl = slice(s, s + step)
        vals = f(t, xpp, x[sl, None], ypp, y[sl, None], z[sl, None])
        out[sl] = np.mean(np.broadcast_to(vals, (x[sl].size, xp.size)), axis=1)
    return out


@dataclass(frozen=True)
class DriverModel:
    """Driver ``f(t, x', x, y', y, z)`` and terminal function ``h(x', x)``.

    Primed arguments belong to the independent copy that gets averaged out.
    ``f_mean(t, xp_cloud, yp_cloud, x, y, z)`` and ``h_mean(xp_cloud, x)`` are
    optional exact cloud averages; without them averages are brute force.
    """

    f: Callable
    h: Callable
    lipschitz_c: float | None = None
    monotone_in_yprime: bool = False
    f_mean: Callable | None = None
    h_mean: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def mean_f(self, t, xp, yp, x, y, z):
        x = np.asarray(x, dtype=float)
        if self.f_mean is not None:
            return np.broadcast_to(self.f_mean(t, xp, yp, x, y, z), x.shape).astype(float)
        return _pair_average(self.f, t, xp, yp, x, y, z)

    def mean_h(self, xp, x):
        x = np.asarray(x, dtype=float)
        if self.h_mean is not None:
            return np.broadcast_to(self.h_mean(xp, x), x.shape).astype(float)
        return _pair_average(lambda t, a, b, c, d, e: self.h(a, b), 0.0, xp, xp, x, 0.0, 0.0)

    def spot_check(self, T: float = 1.0, n: int = 512, seed: int = 0, scale: float = 5.0) -> None:
        """Sampled checks of the Lipschitz constant and of monotonicity in y'."""
        g = np.random.default_rng(seed)
        t = g.uniform(0, T, n)
        a = [g.uniform(-scale, scale, n) for _ in range(5)]
        b = [g.uniform(-scale, scale, n) for _ in range(5)]
        problems = []
        if self.lipschitz_c is not None:
            gap = np.abs(np.broadcast_to(self.f(t, *a[:2], *a[2:]), (n,)) - np.broadcast_to(self.f(t, *b[:2], *b[2:]), (n,)))
            dist = sum(np.abs(p - q) for p, q in zip(a, b))
            if (gap > self.lipschitz_c * dist * (1 + 1e-6) + 1e-12).any():
                problems.append(f"driver {self.name!r} violates lipschitz_c={self.lipschitz_c}")
        if self.monotone_in_yprime:
            lo, hi = np.minimum(a[2], b[2]), np.maximum(a[2], b[2])
            f_lo = np.broadcast_to(self.f(t, a[0], a[1], lo, a[3], a[4]), (n,))
            f_hi = np.broadcast_to(self.f(t, a[0], a[1], hi, a[3], a[4]), (n,))
            if (f_hi < f_lo - 1e-12).any():
                problems.append(f"driver {self.name!r} is not nondecreasing in y'")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class SchemeParams:
    eps: float = 0.01
    scheme: str = "penalized"
    basis_degree: int = 3
    ridge: float = 1e-8
    basis: str = "bins"
    n_bins: int = 50

    def __post_init__(self):
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.basis_degree < 1:
            raise ValueError("basis_degree must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.basis not in BASES:
            raise ValueError(f"basis must be one of {BASES}, got {self.basis!r}")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")


@dataclass
class BackwardSolution:
    """Sampled ``(Y, Z, U)``; row r is grid node ``t_start + r``, column a particle or path.

    ``states`` are the forward states the solution was regressed on.
    ``Y0_stderr`` is the Monte Carlo standard error of the pathwise estimator
    ``Y_M + h * sum_r (F_r - U_r)`` whose sample mean equals ``Y0``.
    """

    Y: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    F: np.ndarray
    states: np.ndarray
    t_start: int
    Y0: float
    Y0_stderr: float
    params: SchemeParams

    def to_csv(self, path) -> Path:
        R, n = self.Y.shape
        m = np.repeat(np.arange(self.t_start, self.t_start + R), n)
        i = np.tile(np.arange(n), R)
        return write_csv(path, ["m", "i", "Y", "Z", "U"], [m, i, self.Y.ravel(), self.Z.ravel(), self.U.ravel()])


def _terminal_subgradient(phi: ConvexObstacle, params: SchemeParams, YT: np.ndarray) -> np.ndarray:
    if params.scheme == "penalized":
        return np.asarray(phi.yosida_grad(params.eps, YT), dtype=float)
    lo, hi = phi.subdiff_arrays(YT)
    return np.clip(0.0, lo, hi)


def _check_terminal(phi: ConvexObstacle, YT: np.ndarray) -> None:
    d = phi.distance_to_domain(YT)
    if (d > DOMAIN_TOL).any():
        k = int(np.argmax(d))
        raise InfeasibleTerminalError(
            f"terminal value {YT[k]!r} lies outside Dom(phi)={phi.domain} (distance {d[k]:.3g})"
        )


def _recursion(states, dW, t_start, h, YT, driver_at, phi, params) -> BackwardSolution:
    """Shared backward sweep.

    ``driver_at(m, x, ey, z, y_next)`` returns the averaged driver at node m,
    where ``y_next`` is the row of Y just solved at node m+1.
    """
    _check_terminal(phi, YT)
    R, n = states.shape
    Y = np.empty((R, n))
    Z = np.zeros((R, n))  # Z at the terminal node is undefined; kept at 0
    U = np.empty((R, n))
    F = np.zeros((R, n))
    Y[-1] = YT
    U[-1] = _terminal_subgradient(phi, params, YT)
    pathwise = np.array(YT, dtype=float)
    for r in range(R - 2, -1, -1):
        m = t_start + r
        x = states[r]
        ey = fit_condexp(x, Y[r + 1], params.basis, params.basis_degree, params.ridge, params.n_bins).predict(x)
        # centering is a control variate: E[ey * dW | x] = 0, and constant Y gives z = 0 up to rounding
        z_target = (Y[r + 1] - ey) * dW[r] / h
        z = fit_condexp(x, z_target, params.basis, params.basis_degree, params.ridge, params.n_bins).predict(x)
        Fm = driver_at(m, x, ey, z, Y[r + 1])
        arg = ey + h * Fm
        if params.scheme == "penalized":
            y = phi.penalty_step(params.eps, h, arg)
            u = phi.yosida_grad(params.eps, y)
        else:
            y = phi.resolvent(h, arg)
            u = (arg - y) / h
        bad = ~(np.isfinite(y) & np.isfinite(z) & np.isfinite(u))
        if bad.any():
            i = int(np.argmax(bad))
            raise SimulationDivergedError(m, i, float(y[i]))
        Y[r], Z[r], U[r], F[r] = y, z, u, Fm
        pathwise += h * (Fm - u)
    stderr = float(np.std(pathwise, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return BackwardSolution(Y, Z, U, F, states, t_start, float(np.mean(Y[0])), stderr, params)


def solve_baseline_bsde(
    law: BaselineLaw,
    model: CoefficientModel,
    driver: DriverModel,
    phi: ConvexObstacle,
    params: SchemeParams,
) -> BackwardSolution:
    """Stage 1: the coupled mean-field recursion along the baseline cloud.

    The mean-field slot y' is realized by the cloud's own Y at the next node.
    ``model`` is accepted for interface symmetry; the cloud already encodes it.
    """
    grid = law.grid
    X = np.asarray(law.X)
    YT = driver.mean_h(X[-1], X[-1])

    def driver_at(m, x, ey, z, y_next):
        return driver.mean_f(grid.t(m), X[m], y_next, x, ey, z)

    return _recursion(X, np.asarray(law.dW), 0, grid.h, YT, driver_at, phi, params)


def solve_conditional_bsde(
    law: BaselineLaw,
    baseline: BackwardSolution,
    model: CoefficientModel,
    driver: DriverModel,
    phi: ConvexObstacle,
    t_start: int,
    x: float,
    K: int,
    params: SchemeParams,
    seed: int | None = None,
    stream: int | None = None,
) -> BackwardSolution:
    """Stage 2: classical penalized equation on K conditional paths from ``(t_start, x)``.

    The frozen driver is ``f~(s, x, y, z) = mean_j f(s, X_s^j, x, Y_{s+1}^j, y, z)``
    with the baseline cloud and stage-1 values, and the terminal value is
    ``h~(x) = mean_j h(X_T^j, x)``.
    """
    if baseline.t_start != 0 or baseline.Y.shape != law.X.shape:
        raise ValueError("baseline solution must come from solve_baseline_bsde on the same law")
    grid = law.grid
    seed = law.seed if seed is None else seed
    paths = simulate_conditional(law, model, t_start, x, K, seed, stream=stream)
    XT = np.asarray(law.X[-1])
    YT = driver.mean_h(XT, paths.X[-1])
    Yb = baseline.Y

    def driver_at(m, xs, ey, z, y_next):
        return driver.mean_f(grid.t(m), law.X[m], Yb[m + 1], xs, ey, z)

    return _recursion(paths.X, paths.dW, t_start, grid.h, YT, driver_at, phi, params)


def build_u_field(
    law: BaselineLaw,
    baseline: BackwardSolution,
    model: CoefficientModel,
    driver: DriverModel,
    phi: ConvexObstacle,
    t_nodes,
    x_nodes,
    K: int,
    params: SchemeParams,
    seed: int | None = None,
    threads: int = 1,
) -> FieldSolution:
    """Tabulate ``u(t, x) = Y_t^{t,x}`` by repeated stage-2 solves.

    ``t_nodes`` are grid indices.  Rows at the terminal index are filled with
    ``h~(x)`` exactly.  Each node draws from its own stream, so the table does
    not depend on ``threads``.  Failing nodes are recorded and set to NaN.
    """
    grid = law.grid
    t_nodes = [int(m) for m in t_nodes]
    x_nodes = np.asarray(x_nodes, dtype=float)
    jobs = [(k, j, m, float(xv)) for k, m in enumerate(t_nodes) for j, xv in enumerate(x_nodes)]
    u = np.full((len(t_nodes), x_nodes.size), np.nan)
    se = np.zeros_like(u)
    failures = []

    def run(job):
        k, j, m, xv = job
        if m == grid.M:
            return job, float(driver.mean_h(np.asarray(law.X[-1]), np.array([xv]))[0]), 0.0, None
        try:
            sol = solve_conditional_bsde(law, baseline, model, driver, phi, m, xv, K, params, seed=seed)
        except MFBSVIError as exc:
            return job, math.nan, math.nan, str(exc)
        return job, sol.Y0, sol.Y0_stderr, None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    for (k, j, m, xv), val, err, msg in results:
        u[k, j], se[k, j] = val, err
        if msg is not None:
            failures.append((grid.t(m), xv, msg))
    t_vals = np.array([grid.t(m) for m in t_nodes])
    return FieldSolution(t_vals, x_nodes, u, "probabilistic", se, failures)


@dataclass(frozen=True)
class ComparisonReport:
    violations: int
    total: int
    fraction: float
    min_gap: float
    mean_gap: np.ndarray
    passed: bool


def comparison_harness(
    law: BaselineLaw,
    model: CoefficientModel,
    driver1: DriverModel,
    driver2: DriverModel,
    params: SchemeParams,
    phi: ConvexObstacle | None = None,
    max_fraction: float = 0.01,
) -> ComparisonReport:
    """Check ``Y^1 >= Y^2`` pathwise when data 1 dominates data 2.

    Both problems share the law (hence the Brownian increments).  A violation
    is a sample with ``Y^1 - Y^2 < -3 * stderr_m``, where ``stderr_m`` is the
    standard error of the mean gap at node m.
    """
    phi = Zero() if phi is None else phi
    if not isinstance(phi, Zero):
        raise ConfigError("comparison is only defined for the mean-field equation without obstacle (phi = Zero)")
    if not (driver1.monotone_in_yprime or driver2.monotone_in_yprime):
        raise ConfigError("comparison needs one driver flagged monotone_in_yprime")
    for d in (driver1, driver2):
        if d.monotone_in_yprime:
            d.spot_check(T=law.grid.T)
    XT = np.asarray(law.X[-1])
    if (driver1.mean_h(XT, XT) < driver2.mean_h(XT, XT) - 1e-12).any():
        raise ConfigError("terminal data are not ordered: need xi_1 >= xi_2")
    g = np.random.default_rng(0)
    smp = [g.uniform(-5, 5, 1024) for _ in range(5)]
    t = g.uniform(0, law.grid.T, 1024)
    if (np.broadcast_to(driver1.f(t, *smp), (1024,)) < np.broadcast_to(driver2.f(t, *smp), (1024,)) - 1e-12).any():
        raise ConfigError("drivers are not ordered: need f_1 >= f_2")
    s1 = solve_baseline_bsde(law, model, driver1, phi, params)
    s2 = solve_baseline_bsde(law, model, driver2, phi, params)
    D = s1.Y - s2.Y
    n = D.shape[1]
    stderr = np.std(D, axis=1, ddof=1) / np.sqrt(n)
    viol = D < -3.0 * stderr[:, None] - 1e-12
    frac = float(viol.mean())
    return ComparisonReport(int(viol.sum()), int(D.size), frac, float(D.min()), D.mean(axis=1), frac <= max_fraction)
