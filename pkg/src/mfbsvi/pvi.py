"""Finite-difference oracle for the nonlocal parabolic variational inequality.

Backward marching from the terminal row, one level at a time:

1. linear part: ``(I - h*theta*A) u* = u_next + h*(1-theta)*A u_next + h*F_nl``
   with ``A = a/2 D^2 + b D`` (central differences, ``a`` the squared
   cloud-averaged diffusion, ``b`` the cloud-averaged drift) and the nonlocal
   driver ``F_nl`` evaluated explicitly from ``u_next``;
2. obstacle part, nodewise: the implicit penalty step (``penalized`` form) or
   the resolvent with parameter h (``prox`` form).

Lateral boundaries use linear extrapolation (zero second derivative),
eliminated into the first and last interior rows so the solve stays
tridiagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .backward import DOMAIN_TOL, DriverModel
from .convex import ConvexObstacle
from .errors import InfeasibleTerminalError, StepDivergedError
from .field import FieldSolution
from .forward import BaselineLaw, CoefficientModel, TimeGrid

FORMS = ("penalized", "prox")
BLOWUP_FACTOR = 1e3


@dataclass(frozen=True)
class SpaceGrid:
    """``J`` interior nodes on ``[x_lo, x_hi]``; the two endpoints are boundary nodes."""

    x_lo: float
    x_hi: float
    J: int

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError("need x_lo < x_hi")
        if self.J < 8:
            raise ValueError(f"need at least 8 interior nodes, got J={self.J}")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.J + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.x_lo + self.dx * np.arange(self.J + 2)

    @property
    def probe_region(self) -> tuple[float, float]:
        """Interior region after removing a 20% margin on each side."""
        w = self.x_hi - self.x_lo
        return self.x_lo + 0.2 * w, self.x_hi - 0.2 * w

    def check_probes(self, xs) -> None:
        lo, hi = self.probe_region
        xs = np.asarray(xs, dtype=float)
        if ((xs < lo - 1e-12) | (xs > hi + 1e-12)).any():
            raise ValueError(f"probe points must lie in [{lo}, {hi}] (20% margins of the box)")


def _cloud_at(law: BaselineLaw, t: float) -> np.ndarray:
    m = int(np.floor(t / law.grid.h + 1e-9))
    return np.asarray(law.X[min(max(m, 0), law.grid.M)])


def terminal_condition(law: BaselineLaw, driver: DriverModel, grid: SpaceGrid, phi: ConvexObstacle | None = None):
    """``u(T, x_j) = mean_i h(X_T^i, x_j)`` on every node, checked against Dom(phi)."""
    row = driver.mean_h(np.asarray(law.X[-1]), grid.nodes)
    if not np.isfinite(row).all():
        raise InfeasibleTerminalError("terminal row contains non-finite values")
    if phi is not None:
        d = phi.distance_to_domain(row)
        if (d > DOMAIN_TOL).any():
            j = int(np.argmax(d))
            raise InfeasibleTerminalError(f"terminal value {row[j]!r} at x={grid.nodes[j]} lies outside Dom(phi)")
    return row


def _operator(a, b, dx):
    """Sub/main/super diagonals of A on interior nodes 1..J, boundaries eliminated."""
    lower = 0.5 * a / dx**2 - 0.5 * b / dx
    diag = -a / dx**2
    upper = 0.5 * a / dx**2 + 0.5 * b / dx
    lower, diag, upper = lower[1:-1].copy(), diag[1:-1].copy(), upper[1:-1].copy()
    # u_0 = 2 u_1 - u_2 and u_{J+1} = 2 u_J - u_{J-1}
    diag[0] += 2.0 * lower[0]
    upper[0] -= lower[0]
    diag[-1] += 2.0 * upper[-1]
    lower[-1] -= upper[-1]
    return lower, diag, upper


def _apply(lower, diag, upper, u):
    """A u on the interior given the full row u (boundary values ignored)."""
    ui = u[1:-1]
    out = diag * ui
    out[1:] += lower[1:] * ui[:-1]
    out[:-1] += upper[:-1] * ui[1:]
    return out


def _extrapolate(interior):
    return np.concatenate([[2 * interior[0] - interior[1]], interior, [2 * interior[-1] - interior[-2]]])


def assemble_step(
    law: BaselineLaw,
    model: CoefficientModel,
    driver: DriverModel,
    phi: ConvexObstacle,
    u_next: np.ndarray,
    m: int,
    grid: SpaceGrid,
    eps: float,
    theta: float = 1.0,
    form: str = "penalized",
    tgrid: TimeGrid | None = None,
) -> np.ndarray:
    """One backward level: return ``u_m`` from ``u_{m+1} = u_next``."""
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}, got {form!r}")
    if form == "penalized" and not eps > 0:
        raise ValueError("penalized form needs eps > 0")
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    u_next = np.asarray(u_next, dtype=float)
    if not np.isfinite(u_next).all():
        raise StepDivergedError(m + 1, "non-finite input row")
    tgrid = law.grid if tgrid is None else tgrid
    h, t = tgrid.h, tgrid.t(m)
    x, dx = grid.nodes, grid.dx
    cloud = _cloud_at(law, t)
    bbar = model.mean_b(t, cloud, x)
    sbar = model.mean_sigma(t, cloud, x)
    a = sbar * sbar
    du = np.gradient(u_next, dx)
    # off-grid values of the explicit level, clamped to the boundary values outside the box
    y_cloud = np.interp(cloud, x, u_next)
    F = driver.mean_f(t, cloud, y_cloud, x, u_next, du * sbar)
    lower, diag, upper = _operator(a, bbar, dx)
    rhs = u_next[1:-1] + h * F[1:-1]
    if theta < 1.0:
        rhs = rhs + h * (1.0 - theta) * _apply(lower, diag, upper, u_next)
    ab = np.zeros((3, grid.J))
    ab[0, 1:] = -h * theta * upper[:-1]
    ab[1] = 1.0 - h * theta * diag
    ab[2, :-1] = -h * theta * lower[1:]
    u_star = _extrapolate(solve_banded((1, 1), ab, rhs))
    if form == "penalized":
        u = np.asarray(phi.penalty_step(eps, h, u_star), dtype=float)
    else:
        u = np.asarray(phi.resolvent(h, u_star), dtype=float)
    bound = BLOWUP_FACTOR * (1.0 + np.max(np.abs(u_next)))
    if not np.isfinite(u).all() or np.max(np.abs(u)) > bound:
        raise StepDivergedError(m, f"|u|_inf exceeded {bound:.3g}")
    return u


def solve_pvi(
    law: BaselineLaw,
    model: CoefficientModel,
    driver: DriverModel,
    phi: ConvexObstacle,
    tgrid: TimeGrid,
    xgrid: SpaceGrid,
    eps: float,
    form: str = "prox",
    theta: float = 1.0,
) -> FieldSolution:
    """March the whole field backward from ``T``; rows are all time nodes of ``tgrid``."""
    if abs(tgrid.T - law.grid.T) > 1e-12:
        raise ValueError("time grid horizon must match the baseline law")
    U = np.empty((tgrid.M + 1, xgrid.J + 2))
    U[-1] = terminal_condition(law, driver, xgrid, phi)
    for m in range(tgrid.M - 1, -1, -1):
        U[m] = assemble_step(law, model, driver, phi, U[m + 1], m, xgrid, eps, theta, form, tgrid)
    XT = np.asarray(law.X[-1])
    return FieldSolution(tgrid.nodes, xgrid.nodes, U, "pde-oracle", terminal=lambda x: driver.mean_h(XT, x))
