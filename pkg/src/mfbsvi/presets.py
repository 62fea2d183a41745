"""Named coefficient, driver and terminal presets plus the shipped benchmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backward import DriverModel
from .convex import ConvexObstacle, IndicatorInterval, Zero
from .forward import CoefficientModel, linear_coefficients


def _mean_relu(shift: np.ndarray, a_sorted: np.ndarray, suffix: np.ndarray) -> np.ndarray:
    """``mean_j max(shift + a_j, 0)`` for every entry of ``shift`` in O(log N) each."""
    n = a_sorted.size
    k = np.searchsorted(a_sorted, -shift, side="right")  # a_j > -shift for j >= k
    count = n - k
    return (suffix[k] + count * shift) / n


def _relu_tables(a: np.ndarray):
    a_sorted = np.sort(np.asarray(a, dtype=float))
    suffix = np.concatenate([np.cumsum(a_sorted[::-1])[::-1], [0.0]])
    return a_sorted, suffix


def terminal(kind: str = "constant", **p) -> tuple:
    """Return ``(h, h_mean, params)`` for a terminal-function preset.

    Kinds: ``constant`` (c), ``linear`` (xprime*x' + x*x + const),
    ``square`` ((x + weight*x')**2), ``capped_call``
    (clip(x + weight*x' - strike, 0, cap)).
    """
    if kind == "constant":
        c = float(p.get("c", 1.0))
        return (lambda xp, x: c + 0.0 * (xp + x)), (lambda xp, x: np.full(np.shape(x), c)), {"kind": kind, "c": c}
    if kind == "linear":
        a, b, c = float(p.get("xprime", 0.0)), float(p.get("x", 1.0)), float(p.get("const", 0.0))
        return (
            (lambda xp, x: a * xp + b * x + c),
            (lambda xp, x: a * float(np.mean(xp)) + b * x + c),
            {"kind": kind, "xprime": a, "x": b, "const": c},
        )
    if kind == "square":
        w = float(p.get("weight", 0.0))

        def h_mean(xp, x):
            m1, m2 = float(np.mean(xp)), float(np.mean(xp * xp))
            return x * x + 2.0 * w * x * m1 + w * w * m2

        return (lambda xp, x: (x + w * xp) ** 2), h_mean, {"kind": kind, "weight": w}
    if kind == "capped_call":
        w = float(p.get("weight", 0.0))
        strike = float(p.get("strike", 0.0))
        cap = p.get("cap", math.inf)
        cap = math.inf if cap is None or cap == "inf" else float(cap)

        def h(xp, x):
            return np.clip(x + w * xp - strike, 0.0, cap)

        def h_mean(xp, x):
            a_sorted, suffix = _relu_tables(w * np.asarray(xp))
            s = np.asarray(x, dtype=float) - strike
            out = _mean_relu(s, a_sorted, suffix)
            if math.isfinite(cap):
                out = out - _mean_relu(s - cap, a_sorted, suffix)
            return out

        return h, h_mean, {"kind": kind, "weight": w, "strike": strike, "cap": cap if math.isfinite(cap) else "inf"}
    raise KeyError(f"unknown terminal preset {kind!r}")


TERMINAL_KINDS = ("constant", "linear", "square", "capped_call")


def linear_driver(
    yprime: float = 0.0,
    y: float = 0.0,
    z: float = 0.0,
    const: float = 0.0,
    terminal_spec: dict | None = None,
    name: str = "linear",
) -> DriverModel:
    """Driver ``f = yprime*y' + y*y + z*z + const`` with a terminal preset.

    Its cloud average is exact: ``yprime*mean(y') + y*y + z*z + const``.
    """
    a, b, g, c = float(yprime), float(y), float(z), float(const)
    h, h_mean, hp = terminal(**(terminal_spec or {"kind": "constant", "c": 1.0}))

    def f(t, xp, x, yp, yy, zz):
        return a * yp + b * yy + g * zz + c

    def f_mean(t, xp, yp, x, yy, zz):
        return a * float(np.mean(yp)) + b * yy + g * zz + c

    return DriverModel(
        f, h, lipschitz_c=max(abs(a), abs(b), abs(g)) + 1.0, monotone_in_yprime=a >= 0,
        f_mean=f_mean, h_mean=h_mean, name=name,
        params={"yprime": a, "y": b, "z": g, "const": c, "terminal": hp},
    )


def model_from_spec(spec: dict) -> CoefficientModel:
    spec = dict(spec)
    kind = spec.pop("preset", "linear")
    if kind != "linear":
        raise KeyError(f"unknown model preset {kind!r}")
    return linear_coefficients(spec.get("drift", (0, 0, 0)), spec.get("diffusion", (0, 0, 0)))


def driver_from_spec(spec: dict) -> DriverModel:
    spec = dict(spec)
    kind = spec.pop("preset", "linear")
    if kind != "linear":
        raise KeyError(f"unknown driver preset {kind!r}")
    return linear_driver(
        spec.get("yprime", 0.0), spec.get("y", 0.0), spec.get("z", 0.0), spec.get("const", 0.0), spec.get("terminal")
    )


@dataclass(frozen=True)
class Benchmark:
    """A complete problem: dynamics, driver, obstacle, start point and horizon."""

    name: str
    model_spec: dict
    driver_spec: dict
    obstacle: dict
    x0: float = 0.0
    T: float = 1.0
    notes: str = ""
    box: tuple = (-3.0, 3.0)
    probes_x: tuple | None = None  # default: 9 evenly spaced points inside the probe region
    extra: dict = field(default_factory=dict)

    @property
    def model(self) -> CoefficientModel:
        return model_from_spec(self.model_spec)

    @property
    def driver(self) -> DriverModel:
        return driver_from_spec(self.driver_spec)

    @property
    def phi(self) -> ConvexObstacle:
        from .convex import obstacle_from_dict

        return obstacle_from_dict(self.obstacle)


BENCHMARKS: dict[str, Benchmark] = {
    # phi = Zero, f = y'/2 + y/2, xi = 1: Y_t = exp(T - t)
    "CF1": Benchmark(
        "CF1",
        {"preset": "linear", "drift": [0, 0, 0], "diffusion": [0, 0, 1]},
        {"preset": "linear", "yprime": 0.5, "y": 0.5, "terminal": {"kind": "constant", "c": 1.0}},
        {"kind": "zero"},
    ),
    # reflection at 0 that never binds: Y_0 = E[W_T^+] = sqrt(T / (2 pi))
    "RF1": Benchmark(
        "RF1",
        {"preset": "linear", "drift": [0, 0, 0], "diffusion": [0, 0, 1]},
        {"preset": "linear", "terminal": {"kind": "capped_call", "weight": 0.0, "strike": 0.0, "cap": "inf"}},
        {"kind": "indicator_interval", "a": 0.0, "b": "inf"},
    ),
    # u(t, x) = x**2 + (T - t)
    "HEAT": Benchmark(
        "HEAT",
        {"preset": "linear", "drift": [0, 0, 0], "diffusion": [0, 0, 1]},
        {"preset": "linear", "terminal": {"kind": "square", "weight": 0.0}},
        {"kind": "zero"},
        box=(-6.0, 6.0),
        # kept off the space nodes so interpolation error is visible
        probes_x=tuple(float(v) for v in np.linspace(-2.0, 2.0, 9) + 0.013),
    ),
    # full mean-field reflected problem
    "BM1": Benchmark(
        "BM1",
        {"preset": "linear", "drift": [0.25, -0.25, 0.0], "diffusion": [0, 0, 0.5]},
        {
            "preset": "linear", "yprime": 0.5, "y": -0.5,
            "terminal": {"kind": "capped_call", "weight": 0.1, "strike": 0.0, "cap": 2.0},
        },
        {"kind": "indicator_interval", "a": 0.0, "b": "inf"},
    ),
    # BM1 with a constant downward push so the reflection binds on a large set
    "BM1A": Benchmark(
        "BM1A",
        {"preset": "linear", "drift": [0.25, -0.25, 0.0], "diffusion": [0, 0, 0.5]},
        {
            "preset": "linear", "yprime": 0.5, "y": -0.5, "const": -0.5,
            "terminal": {"kind": "capped_call", "weight": 0.1, "strike": 0.0, "cap": 2.0},
        },
        {"kind": "indicator_interval", "a": 0.0, "b": "inf"},
    ),
}


def benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; known: {sorted(BENCHMARKS)}") from None
