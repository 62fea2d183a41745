"""Sub-runs driven by a RunConfig, and the report writer.

Each ``run_*`` function returns a :class:`SubRun` holding its tables in
memory; :func:`emit_report` is the only place that touches the output
directory.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .backward import BackwardSolution, build_u_field, solve_baseline_bsde
from .config import RunConfig
from .convex import Zero
from .errors import ConfigError, MFBSVIError
from .field import FieldSolution, field_error
from .forward import BaselineLaw, moment_check, simulate_baseline
from .io import sha256_file, write_csv, write_json
from .properties import run_property_suite
from .pvi import solve_pvi

NOISE_FLOOR_SIGMAS = 3.0
FEASIBILITY_RATIO = 0.7
PROPS_BUDGET_S = 5.0


class SubRunError(MFBSVIError):
    """A sub-run of a study failed; names the offending parameter."""

    def __init__(self, what: str, cause: Exception):
        self.what, self.cause = what, cause
        super().__init__(f"sub-run {what} failed: {cause}")


@dataclass
class SubRun:
    name: str
    tables: dict = field(default_factory=dict)  # file name -> (header, columns)
    writers: dict = field(default_factory=dict)  # file name -> callable(path) returning the path(s) written
    checks: dict = field(default_factory=dict)  # check name -> bool
    summary: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _timed(fn: Callable[..., SubRun]):
    def wrapper(*args, **kwargs) -> SubRun:
        start = time.perf_counter()
        out = fn(*args, **kwargs)
        out.seconds = time.perf_counter() - start
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def baseline_law(cfg: RunConfig) -> BaselineLaw:
    model = cfg.coefficient_model()
    model.spot_check(T=cfg.grids.T)
    return simulate_baseline(model, cfg.x0, cfg.time_grid(), cfg.grids.N, cfg.seed)


def _stage1(cfg: RunConfig, law: BaselineLaw, eps: float | None = None, form: str | None = None) -> BackwardSolution:
    return solve_baseline_bsde(law, cfg.coefficient_model(), cfg.driver_model(), cfg.phi(), cfg.scheme_params(eps, form))


@_timed
def run_props(cfg: RunConfig | None = None, n: int = 10_000) -> SubRun:
    """Moreau-Yosida property suite over every built-in obstacle."""
    seed = 0 if cfg is None else cfg.seed
    results, seconds = run_property_suite(n, seed)
    table = (
        ["obstacle", "property", "worst_slack", "passed"],
        [
            np.array([r.obstacle for r in results]),
            np.array([r.prop for r in results]),
            np.array([r.worst for r in results]),
            np.array([int(r.passed) for r in results]),
        ],
    )
    return SubRun(
        "props",
        tables={"props.csv": table},
        checks={"properties_hold": all(r.passed for r in results), "runtime_under_5s": seconds < PROPS_BUDGET_S},
        summary={"samples": n, "failures": [f"{r.obstacle}: {r.prop}" for r in results if not r.passed]},
    )


@_timed
def run_forward(cfg: RunConfig) -> SubRun:
    law = baseline_law(cfg)
    XT = np.asarray(law.X[-1])
    return SubRun(
        "forward",
        writers={"cloud.csv": lambda p: [law.save(p), p.with_suffix(".meta.json")]},
        summary={
            "mean_XT": float(XT.mean()),
            "var_XT": float(XT.var(ddof=1)),
            "moment_sup_p2": moment_check(law.X, 2.0),
        },
    )


@_timed
def run_bsde(cfg: RunConfig) -> SubRun:
    law = baseline_law(cfg)
    sol = _stage1(cfg, law)
    return SubRun(
        "bsde",
        writers={"backward.csv": sol.to_csv},
        summary={
            "Y0": sol.Y0,
            "Y0_stderr": sol.Y0_stderr,
            "max_abs_U": float(np.abs(sol.U[:-1]).max()) if sol.U.shape[0] > 1 else 0.0,
            "scheme": sol.params.scheme,
            "eps": sol.params.eps,
        },
    )


@_timed
def run_pvi(cfg: RunConfig) -> SubRun:
    law = baseline_law(cfg)
    fld = _pde_field(cfg, law)
    return SubRun(
        "pvi",
        writers={"field_pde.csv": fld.to_csv},
        summary={"u_t0_x0": fld.at(0.0, cfg.x0), "dx": cfg.space_grid().dx, "h": cfg.time_grid().h},
    )


def _pde_field(cfg: RunConfig, law: BaselineLaw) -> FieldSolution:
    return solve_pvi(
        law, cfg.coefficient_model(), cfg.driver_model(), cfg.phi(), cfg.time_grid(), cfg.space_grid(),
        eps=cfg.scheme.eps[-1], form=cfg.scheme.form, theta=cfg.scheme.theta,
    )


@_timed
def run_compare(cfg: RunConfig, threads: int = 1) -> SubRun:
    """Probabilistic field against the finite-difference oracle at the probe points."""
    tgrid, xgrid = cfg.time_grid(), cfg.space_grid()
    xs = cfg.probe_x()
    xgrid.check_probes(xs)
    try:
        t_idx = [tgrid.index_of(t) for t in cfg.probes.t]
    except ValueError as exc:
        raise ConfigError(f"probes.t: {exc}") from None
    law = baseline_law(cfg)
    model, driver, phi = cfg.coefficient_model(), cfg.driver_model(), cfg.phi()
    params = cfg.scheme_params()
    base = solve_baseline_bsde(law, model, driver, phi, params)
    pde = _pde_field(cfg, law)
    prob = build_u_field(law, base, model, driver, phi, t_idx, xs, cfg.grids.K, params, threads=threads)
    probes = list(itertools.product(prob.t, xs))
    rep = field_error(prob, pde, probes)
    errs = np.array([r[4] for r in rep.table])
    se = np.array([prob.stderr_at(t, x) for t, x in probes])
    if cfg.tolerance is None:
        tol = 5.0 * (tgrid.h + xgrid.dx**2) + NOISE_FLOOR_SIGMAS * float(se.max())
    else:
        tol = cfg.tolerance
    sup_err = rep.sup_err if np.isfinite(errs).all() else math.inf
    table = (
        ["t", "x", "u_prob", "u_pde", "abs_err", "stderr"],
        [np.array([r[k] for r in rep.table]) for k in range(5)] + [se],
    )
    return SubRun(
        "compare",
        tables={"compare.csv": table},
        writers={"field_prob.csv": prob.to_csv, "field_pde.csv": pde.to_csv},
        checks={"sup_err_within_tolerance": bool(sup_err <= tol)},
        summary={
            "sup_err": sup_err,
            "l2_err": rep.l2_err,
            "tolerance": tol,
            "baseline_Y0": base.Y0,
            "pde_u_t0_x0": pde.at(0.0, cfg.x0),
            "failures": [f"t={t} x={x}: {m}" for t, x, m in prob.failures],
        },
    )


def fit_loglog(x, y):
    """Least-squares slope of log y on log x and its standard error (NaN with < 3 points)."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    n = lx.size
    if n < 2:
        return math.nan, math.nan
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    if n < 3:
        return slope, math.nan
    resid = ly - ly.mean() - slope * (lx - lx.mean())
    return slope, float(np.sqrt(np.sum(resid**2) / (n - 2) / sxx))


@_timed
def run_convergence_epsilon(cfg: RunConfig) -> SubRun:
    """Distance of penalized solutions to the proximal reference as epsilon shrinks.

    The distance is ``max_m sqrt(mean_i |Y^eps_m - Y^prox_m|**2)``.  Rows within
    three standard errors of the reference ``Y0`` are flagged as noise floor
    and left out of the fit.  The same runs also record the mean squared
    distance of ``Y^eps`` to ``Dom(phi)`` at eps and eps/2.
    """
    eps_list = cfg.scheme.eps
    if len(eps_list) < 3:
        raise ConfigError("scheme.eps: the convergence study needs at least 3 epsilon values")
    law = baseline_law(cfg)
    phi = cfg.phi()
    try:
        ref = _stage1(cfg, law, eps_list[-1], "prox")
    except MFBSVIError as exc:
        raise SubRunError("prox reference", exc) from exc
    floor = NOISE_FLOOR_SIGMAS * ref.Y0_stderr

    def dom_msd(Y):
        return float(np.mean(np.asarray(phi.distance_to_domain(Y)) ** 2))

    rows = []
    for e in eps_list:
        try:
            s = _stage1(cfg, law, e, "penalized")
            s_half = _stage1(cfg, law, e / 2, "penalized")
        except MFBSVIError as exc:
            raise SubRunError(f"eps={e}", exc) from exc
        dist = float(np.sqrt(np.mean((s.Y - ref.Y) ** 2, axis=1)).max())
        d1, d2 = dom_msd(s.Y), dom_msd(s_half.Y)
        rows.append((e, dist, dist <= floor, d1, d2, d2 / d1 if d1 > 0 else math.nan, s.Y0))

    eps_a = np.array([r[0] for r in rows])
    dist_a = np.array([r[1] for r in rows])
    flag = np.array([r[2] for r in rows])
    inert = isinstance(phi, Zero) or bool((dist_a <= 1e-10).all())
    if inert:
        slope, slope_se, status = math.nan, math.nan, "not-applicable"
    else:
        keep = ~flag & (dist_a > 0)
        slope, slope_se = fit_loglog(eps_a[keep], dist_a[keep])
        status = "fitted" if np.isfinite(slope) else "insufficient-rows"
    ratios = np.array([r[5] for r in rows])
    checks = {}
    if status == "fitted":
        lo, hi = cfg.slope_band
        checks["slope_in_band"] = bool(lo <= slope <= hi)
    elif status == "insufficient-rows":
        checks["slope_in_band"] = False
    if np.isfinite(ratios).any():
        checks["feasibility_rate"] = bool((ratios[np.isfinite(ratios)] <= FEASIBILITY_RATIO).all())
    table = (
        ["eps", "distance", "noise_floor", "dom_msd", "dom_msd_half", "dom_ratio", "Y0"],
        [eps_a, dist_a, flag.astype(int)] + [np.array([r[k] for r in rows]) for k in (3, 4, 5, 6)],
    )
    return SubRun(
        "convergence",
        tables={"convergence.csv": table},
        checks=checks,
        summary={
            "slope": slope,
            "slope_stderr": slope_se,
            "slope_status": status,
            "noise_floor": floor,
            "ref_Y0": ref.Y0,
            "ref_Y0_stderr": ref.Y0_stderr,
        },
    )


COMMANDS = {
    "props": lambda cfg, threads: run_props(cfg),
    "forward": lambda cfg, threads: run_forward(cfg),
    "bsde": lambda cfg, threads: run_bsde(cfg),
    "pvi": lambda cfg, threads: run_pvi(cfg),
    "compare": lambda cfg, threads: run_compare(cfg, threads),
    "convergence": lambda cfg, threads: run_convergence_epsilon(cfg),
}


def run_suite(cfg: RunConfig, names, threads: int = 1) -> list[SubRun]:
    """Dispatch independent sub-runs concurrently; results keep the order of ``names``."""
    names = list(names)
    unknown = [n for n in names if n not in COMMANDS]
    if unknown:
        raise ConfigError(f"unknown sub-run(s): {unknown}; known: {sorted(COMMANDS)}")
    if threads <= 1 or len(names) == 1:
        return [COMMANDS[n](cfg, threads) for n in names]
    with ThreadPoolExecutor(max_workers=min(threads, len(names))) as pool:
        return list(pool.map(lambda n: COMMANDS[n](cfg, 1), names))


@dataclass(frozen=True)
class ReportManifest:
    run_id: str
    config_hash: str
    seed: int
    files: list  # [{"path", "sha256", "bytes"}]
    checks: dict
    timings: dict
    passed: bool
    path: Path


def _clean_json(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_json(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _clean_json(obj.item())
    return obj


def emit_report(results: list[SubRun], cfg: RunConfig, out_dir=None, overwrite: bool = False) -> ReportManifest:
    """Write every table, a summary and a manifest listing each file with its sha256.

    The manifest holds no data values, so two runs that differ only in the
    seed produce manifests that differ only in ``seed``, file hashes and
    timings.
    """
    if not results:
        raise ValueError("emit_report needs at least one completed sub-run")
    out = Path(cfg.output_dir if out_dir is None else out_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise ConfigError(f"output directory {out} is not empty; pass --overwrite to replace its contents")
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for sub in results:
        for name, (header, cols) in sub.tables.items():
            written.append(write_csv(out / name, header, cols))
        for name, writer in sub.writers.items():
            res = writer(out / name)
            written.extend(Path(p) for p in (res if isinstance(res, (list, tuple)) else [res]))
    summary = {sub.name: _clean_json(sub.summary) for sub in results}
    written.append(write_json(out / "summary.json", summary))
    files = [
        {"path": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size}
        for p in sorted(set(written), key=lambda p: p.name)
    ]
    checks = {f"{sub.name}.{k}": bool(v) for sub in results for k, v in sub.checks.items()}
    timings = {sub.name: round(sub.seconds, 6) for sub in results}
    chash = cfg.config_hash()
    names = "+".join(sub.name for sub in results)
    manifest = {
        "run_id": f"{names}-{chash[:12]}",
        "config_hash": chash,
        "config": cfg.model_dump(mode="json", exclude={"seed", "output_dir"}),
        "seed": cfg.seed,
        "files": files,
        "checks": checks,
        "passed": all(checks.values()),
        "timings": timings,
    }
    path = write_json(out / "manifest.json", manifest)
    return ReportManifest(manifest["run_id"], chash, cfg.seed, files, checks, timings, manifest["passed"], path)
