import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mfbsvi.backward import (
    DriverModel,
    SchemeParams,
    build_u_field,
    comparison_harness,
    solve_baseline_bsde,
    solve_conditional_bsde,
)
from mfbsvi.convex import IndicatorInterval, Quadratic, Zero
from mfbsvi.errors import ConfigError, InfeasibleTerminalError
from mfbsvi.field import FieldSolution
from mfbsvi.forward import TimeGrid, linear_coefficients, simulate_baseline, simulate_conditional
from mfbsvi.presets import benchmark, linear_driver
from mfbsvi.regression import fit_condexp

BM = linear_coefficients((0, 0, 0), (0, 0, 1))


@pytest.fixture(scope="module")
def bm_law():
    return simulate_baseline(BM, 0.0, TimeGrid(1.0, 100), 10_000, seed=21)


@pytest.fixture(scope="module")
def bm1():
    b = benchmark("BM1")
    law = simulate_baseline(b.model, b.x0, TimeGrid(1.0, 50), 4000, seed=5)
    return b, law


# -- stage 1 ---------------------------------------------------------------------------

def test_cf1_closed_form(bm_law):
    b = benchmark("CF1")
    sol = solve_baseline_bsde(bm_law, b.model, b.driver, b.phi, SchemeParams())
    h = bm_law.grid.h
    assert abs(sol.Y0 - math.e) <= 3 * sol.Y0_stderr + 0.5 * h * math.e


def test_rf1_bachelier(bm_law):
    b = benchmark("RF1")
    sol = solve_baseline_bsde(bm_law, b.model, b.driver, b.phi, SchemeParams(scheme="proximal"))
    assert abs(sol.Y0 - 1 / math.sqrt(2 * math.pi)) <= 3 * sol.Y0_stderr + 0.02
    assert np.abs(sol.U).max() <= 0.02


def test_constant_terminal_is_inert(bm_law):
    drv = linear_driver(terminal_spec={"kind": "constant", "c": 1.7})
    for scheme in ("penalized", "proximal"):
        sol = solve_baseline_bsde(bm_law, BM, drv, Zero(), SchemeParams(scheme=scheme))
        assert np.allclose(sol.Y, 1.7, atol=1e-12)
        assert np.abs(sol.Z).max() <= 1e-12  # bin means of a constant are exact up to rounding
        assert (sol.U == 0).all()


def test_penalized_identity_exact(bm1):
    b, law = bm1
    p = SchemeParams(eps=0.05, scheme="penalized")
    sol = solve_baseline_bsde(law, b.model, b.driver, b.phi, p)
    assert np.array_equal(sol.U, b.phi.yosida_grad(p.eps, sol.Y))


def test_proximal_solution_feasible_with_subgradient_inequality():
    b = benchmark("BM1A")
    law = simulate_baseline(b.model, b.x0, TimeGrid(1.0, 50), 4000, seed=5)
    sol = solve_baseline_bsde(law, b.model, b.driver, b.phi, SchemeParams(scheme="proximal"))
    assert (b.phi.distance_to_domain(sol.Y) <= 1e-12).all()
    assert (sol.Y == 0).mean() > 0.1  # the obstacle binds
    vs = np.linspace(0, 5, 21)
    for v in vs:
        assert (sol.U * (v - sol.Y) + b.phi.value(sol.Y) <= b.phi.value(v) + 1e-12).all()


def test_regression_consistent_identity(bm1):
    b, law = bm1
    p = SchemeParams(eps=0.05)
    sol = solve_baseline_bsde(law, b.model, b.driver, b.phi, p)
    h = law.grid.h
    for m in (10, 30, 49):
        fit = fit_condexp(law.X[m], sol.Y[m + 1], p.basis, p.basis_degree, p.ridge, p.n_bins)
        rhs = fit(law.X[m]) + h * sol.F[m] - h * sol.U[m]
        assert np.allclose(sol.Y[m], rhs, atol=1e-12)


def test_schemes_agree_without_obstacle(bm1):
    b, law = bm1
    s1 = solve_baseline_bsde(law, b.model, b.driver, Zero(), SchemeParams(scheme="penalized"))
    s2 = solve_baseline_bsde(law, b.model, b.driver, Zero(), SchemeParams(scheme="proximal"))
    assert np.abs(s1.Y - s2.Y).max() <= 1e-12


def test_feasibility_rate_when_halving_eps():
    b = benchmark("BM1A")
    law = simulate_baseline(b.model, b.x0, TimeGrid(1.0, 50), 4000, seed=5)

    def msd(eps):
        sol = solve_baseline_bsde(law, b.model, b.driver, b.phi, SchemeParams(eps=eps))
        return np.mean(b.phi.distance_to_domain(sol.Y) ** 2)

    for eps in (0.1, 0.01):
        # halving eps at least halves the squared distance, within factor 2 slack
        assert msd(eps / 2) <= msd(eps)


def test_infeasible_terminal_rejected(bm_law):
    drv = linear_driver(terminal_spec={"kind": "linear", "x": 1.0})
    with pytest.raises(InfeasibleTerminalError):
        solve_baseline_bsde(bm_law, BM, drv, IndicatorInterval(0, math.inf), SchemeParams())


def test_stage1_deterministic(bm1):
    b, law = bm1
    a = solve_baseline_bsde(law, b.model, b.driver, b.phi, SchemeParams())
    c = solve_baseline_bsde(law, b.model, b.driver, b.phi, SchemeParams())
    assert np.array_equal(a.Y, c.Y) and np.array_equal(a.Z, c.Z)


def test_brute_force_driver_matches_closed_form(bm1):
    b, law = bm1
    fast = b.driver
    slow = DriverModel(fast.f, fast.h, name="brute")
    p = SchemeParams(scheme="proximal")
    s1 = solve_baseline_bsde(law, b.model, fast, b.phi, p)
    s2 = solve_baseline_bsde(law, b.model, slow, b.phi, p)
    assert np.allclose(s1.Y, s2.Y, atol=1e-10)


def test_poly_basis_still_available(bm_law):
    b = benchmark("CF1")
    sol = solve_baseline_bsde(bm_law, b.model, b.driver, b.phi, SchemeParams(basis="poly", ridge=0.0))
    assert sol.Y0 == pytest.approx(1.01**100, abs=1e-9)


def test_scheme_params_validation():
    with pytest.raises(ValueError):
        SchemeParams(eps=0.0)
    with pytest.raises(ValueError):
        SchemeParams(basis_degree=0)
    with pytest.raises(ValueError):
        SchemeParams(scheme="explicit")


def test_backward_csv(tmp_path, bm1):
    b, law = bm1
    sol = solve_baseline_bsde(law, b.model, b.driver, b.phi, SchemeParams())
    p = sol.to_csv(tmp_path / "bsde.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "m,i,Y,Z,U"
    assert len(lines) == 1 + sol.Y.size
    m, i, y = lines[5].split(",")[:3]
    assert float(y) == sol.Y[int(m), int(i)]


# -- stage 2 ---------------------------------------------------------------------------

def test_anchor_consistency(bm1):
    b, law = bm1
    p = SchemeParams(scheme="proximal")
    base = solve_baseline_bsde(law, b.model, b.driver, b.phi, p)
    cond = solve_conditional_bsde(law, base, b.model, b.driver, b.phi, 0, b.x0, 4000, p)
    assert abs(cond.Y0 - base.Y0) <= 3 * math.hypot(cond.Y0_stderr, base.Y0_stderr)


def test_plain_mc_oracle(bm1):
    b, law = bm1
    drv = linear_driver(yprime=0.5, const=0.3, terminal_spec=b.driver_spec["terminal"])
    p = SchemeParams()
    base = solve_baseline_bsde(law, b.model, drv, Zero(), p)
    m0, x, K = 10, 0.4, 3000
    cond = solve_conditional_bsde(law, base, b.model, drv, Zero(), m0, x, K, p)
    h = law.grid.h
    ftilde = sum(0.5 * base.Y[m + 1].mean() + 0.3 for m in range(m0, law.grid.M))
    XT = np.asarray(law.X[-1])
    # same paths: the fitted means telescope exactly
    paths = simulate_conditional(law, b.model, m0, x, K, law.seed)
    same = drv.mean_h(XT, paths.X[-1]).mean() + h * ftilde
    assert cond.Y0 == pytest.approx(same, abs=1e-10)
    # independent paths: agreement within Monte Carlo error
    other = simulate_conditional(law, b.model, m0, x, 20_000, law.seed, stream=999)
    vals = drv.mean_h(XT, other.X[-1])
    se = math.hypot(vals.std() / math.sqrt(vals.size), cond.Y0_stderr)
    assert abs(cond.Y0 - (vals.mean() + h * ftilde)) <= 3 * se


@pytest.mark.parametrize("M", [25, 50])
def test_deterministic_paths_match_ode(M):
    frozen = linear_coefficients((0, 0, 0), (0, 0, 0))
    law = simulate_baseline(frozen, 0.0, TimeGrid(1.0, M), 50, seed=0)
    drv = linear_driver(y=1.0, const=0.5, terminal_spec={"kind": "linear", "x": 1.0})
    base = solve_baseline_bsde(law, frozen, drv, Zero(), SchemeParams())
    x = 0.8
    cond = solve_conditional_bsde(law, base, frozen, drv, Zero(), 0, x, 10, SchemeParams())
    # dY/dt = -(Y + 0.5), Y(1) = x, integrated at 100x finer resolution
    ode = solve_ivp(lambda t, y: -(y + 0.5), (1.0, 0.0), [x], max_step=1.0 / (100 * M), rtol=1e-10, atol=1e-12)
    exact = ode.y[0, -1]
    assert exact == pytest.approx((x + 0.5) * math.e - 0.5, abs=1e-8)
    err = abs(cond.Y0 - exact)
    h = 1.0 / M
    assert err <= 2.0 * h * (x + 0.5) * math.e  # first-order explicit Euler bound
    assert err > 0.1 * h  # and genuinely first order, not an accident


def test_stage2_requires_stage1_on_same_law(bm1, bm_law):
    b, law = bm1
    base = solve_baseline_bsde(bm_law, BM, b.driver, b.phi, SchemeParams())
    with pytest.raises(ValueError):
        solve_conditional_bsde(law, base, b.model, b.driver, b.phi, 0, 0.0, 10, SchemeParams())


# -- field ------------------------------------------------------------------------------

def test_heat_field_and_terminal_row():
    law = simulate_baseline(BM, 0.0, TimeGrid(1.0, 20), 500, seed=3)
    b = benchmark("HEAT")
    base = solve_baseline_bsde(law, BM, b.driver, b.phi, SchemeParams())
    xs = np.array([-1.0, 0.0, 0.7])
    fld = build_u_field(law, base, BM, b.driver, b.phi, [5, 10, 20], xs, 4000, SchemeParams())
    assert fld.provenance == "probabilistic"
    assert np.array_equal(fld.u[-1], b.driver.mean_h(np.asarray(law.X[-1]), xs))
    for k, t in enumerate(fld.t[:-1]):
        exact = xs**2 + (1.0 - t)
        assert (np.abs(fld.u[k] - exact) <= 3 * fld.stderr[k] + law.grid.h).all()


def test_field_stderr_scaling():
    law = simulate_baseline(BM, 0.0, TimeGrid(1.0, 20), 500, seed=3)
    b = benchmark("BM1")
    base = solve_baseline_bsde(law, b.model, b.driver, b.phi, SchemeParams())
    xs = np.array([-0.5, 0.5])
    small = build_u_field(law, base, b.model, b.driver, b.phi, [4], xs, 2000, SchemeParams())
    big = build_u_field(law, base, b.model, b.driver, b.phi, [4], xs, 8000, SchemeParams())
    ratio = big.stderr / small.stderr
    assert ((ratio >= 0.4) & (ratio <= 0.6)).all()


def test_field_independent_of_threads(bm1):
    b, law = bm1
    base = solve_baseline_bsde(law, b.model, b.driver, b.phi, SchemeParams())
    xs = np.linspace(-1, 1, 4)
    one = build_u_field(law, base, b.model, b.driver, b.phi, [10, 25], xs, 500, SchemeParams(), threads=1)
    four = build_u_field(law, base, b.model, b.driver, b.phi, [10, 25], xs, 500, SchemeParams(), threads=4)
    assert np.array_equal(one.u, four.u) and np.array_equal(one.stderr, four.stderr)


def test_field_failures_recorded(bm1):
    b, law = bm1
    base = solve_baseline_bsde(law, b.model, b.driver, b.phi, SchemeParams())
    drv = linear_driver(terminal_spec={"kind": "linear", "x": 1.0})
    fld = build_u_field(law, base, b.model, drv, b.phi, [10], [-2.0], 50, SchemeParams())
    assert fld.failures and math.isnan(fld.u[0, 0])


def test_field_csv_round_trip(tmp_path):
    f = FieldSolution([0.0, 0.5], [-1.0, 0.0, 1.0], np.arange(6.0), "probabilistic", np.full(6, 0.1))
    back = FieldSolution.from_csv(f.to_csv(tmp_path / "f.csv"))
    assert np.array_equal(back.u, f.u) and np.array_equal(back.stderr, f.stderr)
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "t,x,u,stderr"


# -- comparison ------------------------------------------------------------------------

def _cf1():
    b = benchmark("CF1")
    return b, simulate_baseline(b.model, 0.0, TimeGrid(1.0, 50), 2000, seed=8)


def test_comparison_identical():
    b, law = _cf1()
    rep = comparison_harness(law, b.model, b.driver, b.driver, SchemeParams())
    assert rep.violations == 0 and rep.passed


def test_comparison_terminal_shift():
    b, law = _cf1()
    d2 = linear_driver(0.5, 0.5, terminal_spec={"kind": "linear", "x": 0.3, "const": 0.2})
    d1 = linear_driver(0.5, 0.5, terminal_spec={"kind": "linear", "x": 0.3, "const": 1.2})
    rep = comparison_harness(law, b.model, d1, d2, SchemeParams())
    assert rep.passed
    assert rep.min_gap > 0
    # Y^1 - Y^2 solves g' = -(alpha + beta) g with g(T) = 1
    t = law.grid.nodes
    h = law.grid.h
    assert np.allclose(rep.mean_gap, (1 + h) ** (law.grid.M - np.arange(law.grid.M + 1)), rtol=1e-10)
    assert np.exp(1.0 * (1 - t))[0] == pytest.approx(rep.mean_gap[0], rel=0.02)


def test_comparison_driver_shift():
    b, law = _cf1()
    d2 = linear_driver(0.5, 0.0, terminal_spec={"kind": "linear", "x": 1.0})
    d1 = linear_driver(0.5, 0.0, const=1.0, terminal_spec={"kind": "linear", "x": 1.0})
    rep = comparison_harness(law, b.model, d1, d2, SchemeParams())
    assert rep.passed and rep.violations == 0
    d2 = linear_driver(0.0, 0.0, terminal_spec={"kind": "linear", "x": 1.0})
    d1 = linear_driver(0.0, 0.0, const=1.0, terminal_spec={"kind": "linear", "x": 1.0})
    rep = comparison_harness(law, b.model, d1, d2, SchemeParams())
    assert np.allclose(rep.mean_gap, 1.0 - law.grid.nodes, atol=1e-12)


def test_comparison_preconditions():
    b, law = _cf1()
    with pytest.raises(ConfigError):
        comparison_harness(law, b.model, b.driver, b.driver, SchemeParams(), phi=Quadratic(1.0))
    anti = linear_driver(-0.5, 0.5)
    with pytest.raises(ConfigError):
        comparison_harness(law, b.model, anti, anti, SchemeParams())
    lo = linear_driver(0.5, 0.5, terminal_spec={"kind": "constant", "c": 0.0})
    with pytest.raises(ConfigError):
        comparison_harness(law, b.model, lo, b.driver, SchemeParams())
