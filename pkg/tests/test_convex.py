import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from mfbsvi import convex as cx
from mfbsvi.convex import (
    Custom,
    IndicatorInterval,
    PiecewiseLinearConvex,
    PowerAbs,
    Quadratic,
    Zero,
    obstacle_from_dict,
)
from mfbsvi.errors import InvalidObstacleError
from mfbsvi.properties import builtin_obstacles, run_property_suite


def grid_prox(phi, eps, u, lo=-5.0, hi=5.0, step=1e-4):
    """Brute-force minimizer and minimum of (u - v)**2 / (2 eps) + phi(v)."""
    v = np.arange(lo, hi + step / 2, step)
    # minimizers often sit on a domain endpoint or a kink, so include those exactly
    special = [x for x in phi.domain if math.isfinite(x)] + list(getattr(phi, "breakpoints", [])) + [0.0]
    v = np.union1d(v, special)
    obj = (u - v) ** 2 / (2 * eps) + phi.value(v)
    k = int(np.argmin(obj))
    return v[k], obj[k]


# -- evaluation and subdifferential -------------------------------------------------

def test_eval_examples():
    assert cx.evaluate(IndicatorInterval(0, math.inf), -1.0) == math.inf
    assert cx.evaluate(Quadratic(1.0), 2.0) == 2.0
    assert cx.evaluate(Zero(), 7.3) == 0.0


@pytest.mark.parametrize("phi", list(builtin_obstacles().values()), ids=list(builtin_obstacles()))
def test_eval_at_zero_is_exactly_zero(phi):
    assert phi.value(0.0) == 0.0


def test_subdiff_examples():
    s = cx.subdiff_interval(IndicatorInterval(0, math.inf), 0.0)
    assert (s.lo, s.hi) == (-math.inf, 0.0)
    s = cx.subdiff_interval(Quadratic(1.0), 3.0)
    assert (s.lo, s.hi) == (3.0, 3.0)
    s = cx.subdiff_interval(PowerAbs(1.0), 0.0)
    assert (s.lo, s.hi) == (-1.0, 1.0)


def test_subdiff_empty_outside_domain():
    s = IndicatorInterval(0, 1).subdiff(-0.5)
    assert s.empty
    assert 0.0 not in s


@pytest.mark.parametrize("phi", list(builtin_obstacles().values()), ids=list(builtin_obstacles()))
def test_subgradient_inequality_on_samples(phi):
    g = np.random.default_rng(3)
    us = g.uniform(-4, 4, 40)
    vs = g.uniform(-6, 6, 400)
    phi_v = phi.value(vs)
    for u in us:
        s = phi.subdiff(u)
        if s.empty:
            continue
        for gu in (s.lo, s.hi, s.selection()):
            if not math.isfinite(gu):
                continue
            lhs = gu * (vs - u) + phi.value(u)
            tol = 1e-7 * (1 + np.abs(lhs))
            assert (lhs <= phi_v + tol).all()


# -- resolvent, envelope, gradient ---------------------------------------------------

def test_resolvent_examples():
    assert cx.resolvent(IndicatorInterval(0, math.inf), 0.5, -2.0) == 0.0
    assert cx.resolvent(Zero(), 0.3, 4.0) == 4.0
    v, _ = grid_prox(Quadratic(1.0), 1.0, 2.0)
    assert v == pytest.approx(1.0, abs=1e-4)
    assert cx.resolvent(Quadratic(1.0), 1.0, 2.0) == pytest.approx(v, abs=1e-4)


def test_moreau_env_examples():
    assert cx.moreau_env(IndicatorInterval(0, math.inf), 0.5, -2.0) == pytest.approx(4.0)
    assert cx.moreau_env(Zero(), 1.0, 5.0) == 0.0
    _, m = grid_prox(Quadratic(1.0), 1.0, 2.0)
    assert m == pytest.approx(1.0, abs=1e-7)
    assert cx.moreau_env(Quadratic(1.0), 1.0, 2.0) == pytest.approx(m, abs=1e-7)


def test_yosida_grad_examples():
    assert cx.yosida_grad(IndicatorInterval(0, math.inf), 0.5, -2.0) == pytest.approx(-4.0)
    assert cx.yosida_grad(Quadratic(1.0), 1.0, 2.0) == pytest.approx(1.0)
    assert cx.yosida_grad(Zero(), 0.1, 9.0) == 0.0


@pytest.mark.parametrize(
    "phi",
    [Quadratic(2.0), PowerAbs(1.0), PowerAbs(1.5), PowerAbs(3.0), IndicatorInterval(-1, 2),
     PiecewiseLinearConvex([-1.0, 0.0, 2.0], [-3.0, -0.5, 1.0, 4.0]), Custom(lambda u: np.cosh(u) - 1, np.sinh)],
    ids=lambda p: repr(p),
)
@pytest.mark.parametrize("eps", [1.0, 0.1])
def test_resolvent_matches_grid_minimization(phi, eps):
    for u in (-3.7, -0.4, 0.0, 0.25, 1.3, 4.2):
        v, m = grid_prox(phi, eps, u)
        assert phi.resolvent(eps, u) == pytest.approx(v, abs=2e-4)
        assert phi.moreau_env(eps, u) == pytest.approx(m, abs=1e-6)


def test_numeric_prox_failure_is_reported():
    # a selection that is not monotone defeats the bracket
    bad = Custom(lambda u: 0.5 * u * u, lambda u: np.full_like(u, np.nan), validate=False)
    with pytest.raises(Exception):
        bad.resolvent(0.1, 1.0)


# -- implicit penalty step ------------------------------------------------------------

def bisect_penalty(phi, eps, h, v):
    lo, hi = -abs(v) - 10.0, abs(v) + 10.0
    return brentq(lambda y: y + h * phi.yosida_grad(eps, y) - v, lo, hi, xtol=1e-14, rtol=1e-15)


def test_penalty_step_examples():
    ind = IndicatorInterval(0, math.inf)
    assert cx.implicit_penalty_step(ind, 0.01, 0.01, -1.0) == pytest.approx(bisect_penalty(ind, 0.01, 0.01, -1.0), abs=1e-12)
    assert cx.implicit_penalty_step(ind, 0.01, 0.01, -1.0) == pytest.approx(-0.5, abs=1e-12)
    assert cx.implicit_penalty_step(Zero(), 0.1, 0.1, 3.0) == 3.0
    q = Quadratic(1.0)
    assert cx.implicit_penalty_step(q, 1.0, 1.0, 3.0) == pytest.approx(bisect_penalty(q, 1.0, 1.0, 3.0), abs=1e-12)
    assert cx.implicit_penalty_step(q, 1.0, 1.0, 3.0) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("phi", list(builtin_obstacles().values()), ids=list(builtin_obstacles()))
def test_penalty_step_residual(phi):
    tol = 1e-7 if isinstance(phi, Custom) or (isinstance(phi, PowerAbs) and phi.numeric) else 1e-12
    v = np.linspace(-8, 8, 33)
    for eps, h in [(0.01, 0.01), (0.1, 0.02), (1.0, 0.5)]:
        y = phi.penalty_step(eps, h, v)
        resid = np.abs(y + h * phi.yosida_grad(eps, y) - v)
        assert (resid <= tol * (1 + np.abs(v))).all()


# -- property suite -------------------------------------------------------------------

def test_property_suite_all_green_and_fast():
    results, seconds = run_property_suite()
    failed = [f"{r.obstacle}: {r.prop} ({r.worst:.3g})" for r in results if not r.passed]
    assert not failed
    assert seconds < 5.0


_phis = list(builtin_obstacles().values())
_eps = st.sampled_from([1.0, 0.1, 0.01])
_x = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(_phis), _x, _x, _eps, _eps)
def test_yosida_properties_hypothesis(phi, u, v, eps, dlt):
    numeric = isinstance(phi, Custom) or (isinstance(phi, PowerAbs) and phi.numeric)
    tol = 1e-7 if numeric else 1e-9
    gu, gv, gdv = phi.yosida_grad(eps, u), phi.yosida_grad(eps, v), phi.yosida_grad(dlt, v)
    ju, jv = phi.resolvent(eps, u), phi.resolvent(eps, v)
    env = phi.moreau_env(eps, u)
    assert abs(gu - gv) <= abs(u - v) / eps + tol  # (i)
    if math.isfinite(phi.value(u)):
        assert env <= phi.value(u) + tol  # (ii)
    assert gu in phi.subdiff(ju) or abs(gu - phi.subdiff(ju).selection()) <= tol  # (iii)
    assert abs(ju - jv) <= abs(u - v) + tol  # (iv)
    assert -tol <= env <= gu * u + tol  # (v)
    assert (gu - gdv) * (u - v) >= -(eps + dlt) * gu * gdv - tol  # (vi)
    assert env == pytest.approx((u - ju) ** 2 / (2 * eps) + phi.value(ju), abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(_phis), _x, _x)
def test_subdifferential_monotone_hypothesis(phi, u, v):
    su, sv = phi.subdiff(u), phi.subdiff(v)
    if su.empty or sv.empty:
        return
    assert (su.selection() - sv.selection()) * (u - v) >= -1e-12


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(_phis), _x, _eps, st.sampled_from([0.01, 0.1]))
def test_penalty_step_matches_bisection_hypothesis(phi, v, eps, h):
    y = phi.penalty_step(eps, h, v)
    assert y == pytest.approx(bisect_penalty(phi, eps, h, v), abs=1e-8)


# -- construction, validation, serialization ----------------------------------------

def test_rejects_unnormalized_obstacles():
    with pytest.raises(InvalidObstacleError):
        Custom(lambda u: u * u + 1.0, lambda u: 2 * u)
    with pytest.raises(InvalidObstacleError):
        Custom(lambda u: (u - 1.0) ** 2 - 1.0, lambda u: 2 * (u - 1.0))
    with pytest.raises(InvalidObstacleError):
        IndicatorInterval(1.0, 2.0)
    with pytest.raises(InvalidObstacleError):
        PiecewiseLinearConvex([0.0], [1.0, 2.0])  # minimum is not at 0
    with pytest.raises((InvalidObstacleError, ValueError)):
        PowerAbs(0.5)


def test_rejects_nonconvex_custom():
    with pytest.raises(InvalidObstacleError):
        Custom(lambda u: np.sqrt(np.abs(u)), lambda u: np.sign(u))


def test_custom_nan_is_invalid():
    phi = Custom(lambda u: np.where(u > 5, np.nan, u * u / 2), lambda u: u, validate=False)
    with pytest.raises(InvalidObstacleError):
        phi.value(6.0)


@pytest.mark.parametrize(
    "phi",
    [Zero(), IndicatorInterval(0, math.inf), IndicatorInterval(-math.inf, 1.0), Quadratic(0.5), PowerAbs(1.5),
     PiecewiseLinearConvex([-1.0, 0.0, 2.0], [-3.0, -0.5, 1.0, 4.0])],
    ids=repr,
)
def test_serialization_round_trip(phi):
    import json

    spec = json.loads(json.dumps(phi.to_dict()))
    back = obstacle_from_dict(spec)
    u = np.linspace(-5, 5, 41)
    assert np.array_equal(back.value(u), phi.value(u))
    assert np.array_equal(back.resolvent(0.1, u), phi.resolvent(0.1, u))


def test_custom_not_serializable():
    with pytest.raises(TypeError):
        Custom(lambda u: u * u / 2, lambda u: u).to_dict()


def test_extended_real_arithmetic():
    assert cx.ext_add(math.inf, 3.0) == math.inf
    assert math.inf > 1e308
    with pytest.raises(ArithmeticError):
        cx.ext_add(math.inf, -math.inf)
    with pytest.raises(ArithmeticError):
        cx.ext_sub(math.inf, math.inf)


def test_pure_functions_thread_safe():
    from concurrent.futures import ThreadPoolExecutor

    phi = PowerAbs(1.5)
    u = np.linspace(-5, 5, 2001)
    ref = phi.resolvent(0.1, u)
    with ThreadPoolExecutor(4) as pool:
        outs = list(pool.map(lambda _: phi.resolvent(0.1, u), range(8)))
    assert all(np.array_equal(o, ref) for o in outs)
