"""Randomized check of the Moreau-Yosida inequalities on the built-in obstacles."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .convex import (
    ConvexObstacle,
    Custom,
    IndicatorInterval,
    PiecewiseLinearConvex,
    PowerAbs,
    Quadratic,
    Zero,
)

EPS_CHOICES = (1.0, 0.1, 0.01)
TOL_CLOSED = 1e-9
TOL_NUMERIC = 1e-7
IDENTITY_TOL = 1e-10
MONOTONE_TOL = 1e-12


def builtin_obstacles() -> dict[str, ConvexObstacle]:
    return {
        "zero": Zero(),
        "indicator[0,inf)": IndicatorInterval(0.0, np.inf),
        "indicator[-1,2]": IndicatorInterval(-1.0, 2.0),
        "quadratic(c=2)": Quadratic(2.0),
        "power_abs(p=1)": PowerAbs(1.0),
        "power_abs(p=1.5)": PowerAbs(1.5),
        "power_abs(p=3)": PowerAbs(3.0),
        "piecewise_linear": PiecewiseLinearConvex([-1.0, 0.0, 2.0], [-3.0, -0.5, 1.0, 4.0]),
        "custom(cosh-1)": Custom(lambda u: np.cosh(u) - 1.0, np.sinh),
    }


def _is_numeric(phi: ConvexObstacle) -> bool:
    return isinstance(phi, Custom) or (isinstance(phi, PowerAbs) and phi.numeric)


@dataclass(frozen=True)
class PropertyResult:
    obstacle: str
    prop: str
    worst: float  # most negative slack (<= 0 means violated beyond tolerance)
    passed: bool


def check_obstacle(name: str, phi: ConvexObstacle, n: int = 10_000, seed: int = 0) -> list[PropertyResult]:
    """Evaluate every property on ``n`` random ``(u, v, eps, delta)`` samples.

    Slack is ``rhs - lhs + tol`` for inequalities ``lhs <= rhs``.
    """
    g = np.random.default_rng(seed)
    u = g.uniform(-10, 10, n)
    v = g.uniform(-10, 10, n)
    eps = g.choice(EPS_CHOICES, n)
    dlt = g.choice(EPS_CHOICES, n)
    tol = TOL_NUMERIC if _is_numeric(phi) else TOL_CLOSED

    # vectorize over heterogeneous eps by grouping
    def per_eps(fn, e, x):
        out = np.empty_like(x)
        for val in EPS_CHOICES:
            sel = e == val
            if sel.any():
                out[sel] = fn(val, x[sel])
        return out

    J_u = per_eps(phi.resolvent, eps, u)
    J_v = per_eps(phi.resolvent, eps, v)
    env_u = per_eps(phi.moreau_env, eps, u)
    g_eu = per_eps(phi.yosida_grad, eps, u)
    g_ev = per_eps(phi.yosida_grad, eps, v)
    g_dv = per_eps(phi.yosida_grad, dlt, v)
    phi_u = phi.value(u)
    phi_J = phi.value(J_u)
    lo_J, hi_J = phi.subdiff_arrays(J_u)

    slacks = {}
    slacks["(i) lipschitz gradient"] = np.abs(u - v) / eps - np.abs(g_eu - g_ev) + tol
    fin = np.isfinite(phi_u)
    slacks["(ii) envelope below phi"] = np.where(fin, np.where(fin, phi_u, 0.0) - env_u, 0.0) + tol
    slacks["(iii) gradient in dphi(J u)"] = np.minimum(g_eu - lo_J, hi_J - g_eu) + tol
    slacks["(iv) resolvent nonexpansive"] = np.abs(u - v) - np.abs(J_u - J_v) + tol
    slacks["(v) 0 <= env <= grad*u"] = np.minimum(env_u, g_eu * u - env_u) + tol
    lhs = (g_eu - g_dv) * (u - v)
    rhs = -(eps + dlt) * g_eu * g_dv
    slacks["(vi) cross-parameter monotonicity"] = lhs - rhs + tol
    ident = (u - J_u) ** 2 / (2 * eps) + phi_J
    slacks["envelope identity"] = IDENTITY_TOL - np.abs(env_u - ident)

    # monotonicity of dphi on points of Dom(dphi), using a finite selection of each interval
    lo_u, hi_u = phi.subdiff_arrays(u)
    lo_v, hi_v = phi.subdiff_arrays(v)
    ok = ~(np.isnan(lo_u) | np.isnan(lo_v))
    w1, w2 = g.uniform(0, 1, n), g.uniform(0, 1, n)

    def pick(lo, hi, w):
        lo_f = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0) - 100.0)
        hi_f = np.where(np.isfinite(hi), hi, lo_f + 100.0)
        return lo_f + w * (hi_f - lo_f)

    s_u, s_v = pick(lo_u, hi_u, w1), pick(lo_v, hi_v, w2)
    mono = np.where(ok, (s_u - s_v) * (u - v), 0.0)
    slacks["dphi monotone"] = mono + MONOTONE_TOL

    out = []
    for prop, s in slacks.items():
        s = np.where(np.isnan(s), -np.inf, s)
        worst = float(np.min(s))
        out.append(PropertyResult(name, prop, worst, worst >= 0.0))
    return out


def run_property_suite(n: int = 10_000, seed: int = 0) -> tuple[list[PropertyResult], float]:
    start = time.perf_counter()
    results = []
    for k, (name, phi) in enumerate(builtin_obstacles().items()):
        results.extend(check_obstacle(name, phi, n, seed + k))
    return results, time.perf_counter() - start
