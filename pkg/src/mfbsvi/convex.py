"""Scalar convex obstacles and their Moreau-Yosida machinery.

Every obstacle ``phi`` is a proper, lower-semicontinuous convex function
``R -> [0, +inf]`` normalized so that ``phi(y) >= phi(0) = 0``.  Infinite
values are IEEE ``inf``; no large-float stand-ins are used anywhere.

All operations accept scalars or NumPy arrays and broadcast elementwise.
Closed forms exist for ``Zero``, ``IndicatorInterval``, ``Quadratic``,
``PiecewiseLinearConvex`` and ``PowerAbs`` with ``p`` in {1, 2}; the
remaining cases go through a bisection on the monotone residual
``v - u + eps * s(v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidObstacleError, ProxFailureError

__all__ = [
    "ConvexObstacle",
    "Zero",
    "IndicatorInterval",
    "Quadratic",
    "PowerAbs",
    "PiecewiseLinearConvex",
    "Custom",
    "SubgradientInterval",
    "evaluate",
    "subdiff_interval",
    "resolvent",
    "moreau_env",
    "yosida_grad",
    "implicit_penalty_step",
    "obstacle_from_dict",
    "ext_add",
    "ext_sub",
]

PROX_TOL = 1e-12
PROX_MAX_ITER = 200
_NORMALIZATION_TOL = 1e-12


def ext_add(a: float, b: float) -> float:
    """Extended-real addition; ``inf + (-inf)`` is undefined and raises."""
    if math.isinf(a) and math.isinf(b) and (a > 0) != (b > 0):
        raise ArithmeticError("inf - inf is undefined on the extended real line")
    return a + b


def ext_sub(a: float, b: float) -> float:
    return ext_add(a, -b)


def _as_array(u):
    arr = np.asarray(u, dtype=float)
    return arr, arr.ndim == 0


def _ret(arr, scalar):
    return float(arr) if scalar else arr


@dataclass(frozen=True)
class SubgradientInterval:
    """The interval ``[phi'_-(u), phi'_+(u)]``; ``empty`` when u is outside Dom(dphi)."""

    lo: float
    hi: float
    empty: bool = False

    def __contains__(self, g: float) -> bool:
        return (not self.empty) and self.lo <= g <= self.hi

    def selection(self) -> float:
        """Minimal-norm element (projection of 0 onto the interval)."""
        if self.empty:
            raise ValueError("empty subdifferential has no selection")
        return float(min(max(0.0, self.lo), self.hi))


class ConvexObstacle:
    """Base class; subclasses implement ``_value``, ``_subdiff`` and ``_resolvent``."""

    kind: str = "abstract"
    domain: tuple[float, float] = (-math.inf, math.inf)

    # --- elementwise primitives (arrays in, arrays out) -------------------
    def _value(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _subdiff(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (lo, hi) arrays; NaN in both marks an empty subdifferential."""
        raise NotImplementedError

    def _resolvent(self, eps: float, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # --- public API --------------------------------------------------------
    def value(self, u):
        arr, scalar = _as_array(u)
        out = self._value(arr)
        if np.isnan(out).any():
            raise InvalidObstacleError(f"{self.kind} obstacle evaluated to NaN")
        return _ret(out, scalar)

    __call__ = value

    def subdiff(self, u) -> SubgradientInterval:
        lo, hi = self._subdiff(np.asarray(u, dtype=float))
        lo, hi = float(lo), float(hi)
        if math.isnan(lo):
            return SubgradientInterval(math.nan, math.nan, empty=True)
        return SubgradientInterval(lo, hi)

    def subdiff_arrays(self, u) -> tuple[np.ndarray, np.ndarray]:
        return self._subdiff(np.asarray(u, dtype=float))

    def resolvent(self, eps: float, u):
        """``J_eps u = (I + eps dphi)^{-1} u``, the proximal point of ``eps * phi``."""
        _check_eps(eps)
        arr, scalar = _as_array(u)
        return _ret(self._resolvent(float(eps), arr), scalar)

    def moreau_env(self, eps: float, u):
        _check_eps(eps)
        arr, scalar = _as_array(u)
        j = self._resolvent(float(eps), arr)
        out = (arr - j) ** 2 / (2.0 * eps) + self._value(j)
        return _ret(out, scalar)

    def yosida_grad(self, eps: float, u):
        _check_eps(eps)
        arr, scalar = _as_array(u)
        j = self._resolvent(float(eps), arr)
        return _ret((arr - j) / eps, scalar)

    def penalty_step(self, eps: float, h: float, v):
        """Solve ``y + h * grad(phi_eps)(y) = v`` for y.

        The Yosida approximation of the Yosida approximation satisfies
        ``(grad phi_eps)_h = grad phi_{eps+h}``, which yields the closed form
        ``y = (eps * v + h * J_{eps+h} v) / (eps + h)``.
        """
        _check_eps(eps)
        if not h > 0:
            raise ValueError(f"step h must be positive, got {h!r}")
        arr, scalar = _as_array(v)
        j = self._resolvent(float(eps + h), arr)
        # same as (eps*v + h*J)/(eps + h), written so that J = v returns v exactly
        return _ret(arr - h * (arr - j) / (eps + h), scalar)

    def in_domain(self, u, tol: float = 0.0):
        lo, hi = self.domain
        arr = np.asarray(u, dtype=float)
        return (arr >= lo - tol) & (arr <= hi + tol)

    def distance_to_domain(self, u):
        lo, hi = self.domain
        arr = np.asarray(u, dtype=float)
        return np.maximum(lo - arr, 0.0) + np.maximum(arr - hi, 0.0)

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} obstacles are not serializable")

    def validate(self, samples: np.ndarray | None = None) -> None:
        """Sampled checks of convexity and the normalization ``phi >= phi(0) = 0``."""
        if samples is None:
            samples = np.linspace(-10.0, 10.0, 401)
        lo, hi = self.domain
        samples = np.asarray(samples, dtype=float)
        samples = samples[(samples >= lo) & (samples <= hi)]
        samples = np.union1d(samples, [0.0])
        vals = self._value(samples)
        if np.isnan(vals).any():
            raise InvalidObstacleError(f"{self.kind} obstacle evaluated to NaN")
        if abs(float(self._value(np.array(0.0)))) > _NORMALIZATION_TOL:
            raise InvalidObstacleError("obstacle must satisfy phi(0) = 0")
        if vals.min() < -_NORMALIZATION_TOL:
            raise InvalidObstacleError("obstacle must satisfy phi(y) >= phi(0) = 0")
        uu, vv = np.meshgrid(samples[::4], samples[::4])
        mid = self._value(0.5 * (uu + vv))
        rhs = 0.5 * (self._value(uu) + self._value(vv))
        finite = np.isfinite(rhs)
        if (mid[finite] > rhs[finite] + 1e-12 * (1.0 + np.abs(rhs[finite]))).any():
            raise InvalidObstacleError(f"{self.kind} obstacle fails the midpoint convexity test")

    def __repr__(self):
        try:
            params = {k: v for k, v in self.to_dict().items() if k != "kind"}
        except TypeError:
            params = {}
        inner = ", ".join(f"{k}={v!r}" for k, v in params.items())
        return f"{type(self).__name__}({inner})"


def _check_eps(eps):
    if not (eps > 0 and math.isfinite(eps)):
        raise ValueError(f"eps must be a positive finite number, got {eps!r}")


def _ext(x) -> float:
    """Parse an extended real from a float, None or the strings 'inf'/'-inf'."""
    if x is None:
        raise ValueError("missing bound")
    return float(x)


def _ext_json(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


class Zero(ConvexObstacle):
    kind = "zero"

    def _value(self, u):
        return np.zeros_like(u)

    def _subdiff(self, u):
        return np.zeros_like(u), np.zeros_like(u)

    def _resolvent(self, eps, u):
        return u.copy()

    def to_dict(self):
        return {"kind": self.kind}


class IndicatorInterval(ConvexObstacle):
    """Indicator of the closed interval ``[a, b]`` with ``a <= 0 <= b``."""

    kind = "indicator_interval"

    def __init__(self, a: float = 0.0, b: float = math.inf):
        a, b = _ext(a), _ext(b)
        if math.isnan(a) or math.isnan(b):
            raise InvalidObstacleError("interval bounds must not be NaN")
        if not (a <= 0.0 <= b):
            raise InvalidObstacleError(f"interval [{a}, {b}] must contain 0")
        self.a, self.b = a, b
        self.domain = (a, b)

    def _value(self, u):
        return np.where((u >= self.a) & (u <= self.b), 0.0, math.inf)

    def _subdiff(self, u):
        lo = np.where(u == self.a, -math.inf, 0.0)
        hi = np.where(u == self.b, math.inf, 0.0)
        outside = (u < self.a) | (u > self.b)
        lo = np.where(outside, math.nan, lo)
        hi = np.where(outside, math.nan, hi)
        return lo, hi

    def _resolvent(self, eps, u):
        return np.clip(u, self.a, self.b)

    def moreau_env(self, eps, u):
        _check_eps(eps)
        arr, scalar = _as_array(u)
        d = self.distance_to_domain(arr)
        return _ret(d * d / (2.0 * eps), scalar)

    def to_dict(self):
        return {"kind": self.kind, "a": _ext_json(self.a), "b": _ext_json(self.b)}


class Quadratic(ConvexObstacle):
    """``phi(y) = c * y**2 / 2`` with ``c >= 0``."""

    kind = "quadratic"

    def __init__(self, c: float = 1.0):
        c = float(c)
        if not (c >= 0 and math.isfinite(c)):
            raise InvalidObstacleError(f"quadratic coefficient must be finite and >= 0, got {c}")
        self.c = c

    def _value(self, u):
        return 0.5 * self.c * u * u

    def _subdiff(self, u):
        g = self.c * u
        return g, g.copy()

    def _resolvent(self, eps, u):
        return u / (1.0 + eps * self.c)

    def moreau_env(self, eps, u):
        _check_eps(eps)
        arr, scalar = _as_array(u)
        return _ret(self.c * arr * arr / (2.0 * (1.0 + eps * self.c)), scalar)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c}


def _bisect_resolvent(eps, u, selection, domain, what):
    """Vectorized bisection for v with ``v - u + eps * selection(v) = 0``.

    Because phi is minimized at 0, the root lies between 0 and u, so
    ``[min(0, u), max(0, u)]`` is a valid bracket (intersected with the domain).
    """
    dlo, dhi = domain
    lo = np.clip(np.minimum(u, 0.0), dlo, dhi)
    hi = np.clip(np.maximum(u, 0.0), dlo, dhi)
    # relative to the bracket scale: an absolute 1e-12 is too coarse where the
    # selection is steep near 0 (e.g. |y|**1.5)
    tol = np.minimum(PROX_TOL, 4.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi))))
    for _ in range(PROX_MAX_ITER):
        active = (hi - lo) > tol
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        r = mid - u + eps * selection(mid)
        if np.isnan(r[active]).any():
            raise InvalidObstacleError(f"{what}: subgradient selection returned NaN")
        go_left = active & (r > 0)
        go_right = active & ~(r > 0)
        hi = np.where(go_left, mid, hi)
        lo = np.where(go_right, mid, lo)
    else:
        if ((hi - lo) > tol).any():
            raise ProxFailureError(f"{what}: bisection did not converge in {PROX_MAX_ITER} iterations")
    return 0.5 * (lo + hi)


class PowerAbs(ConvexObstacle):
    """``phi(y) = |y|**p / p`` with ``p >= 1``."""

    kind = "power_abs"

    def __init__(self, p: float = 2.0):
        p = float(p)
        if not (p >= 1.0 and math.isfinite(p)):
            raise InvalidObstacleError(f"power must satisfy p >= 1, got {p}")
        self.p = p

    @property
    def numeric(self) -> bool:
        return self.p not in (1.0, 2.0)

    def _value(self, u):
        return np.abs(u) ** self.p / self.p

    def _derivative(self, u):
        return np.sign(u) * np.abs(u) ** (self.p - 1.0)

    def _subdiff(self, u):
        if self.p == 1.0:
            s = np.sign(u)
            return np.where(u == 0, -1.0, s), np.where(u == 0, 1.0, s)
        g = self._derivative(u)
        return g, g.copy()

    def _resolvent(self, eps, u):
        if self.p == 1.0:
            return np.sign(u) * np.maximum(np.abs(u) - eps, 0.0)
        if self.p == 2.0:
            return u / (1.0 + eps)
        return _bisect_resolvent(eps, u, self._derivative, self.domain, f"PowerAbs(p={self.p})")

    def to_dict(self):
        return {"kind": self.kind, "p": self.p}


class PiecewiseLinearConvex(ConvexObstacle):
    """Finite convex piecewise-linear function with ``phi(0) = 0`` and minimum at 0.

    ``slopes[k]`` is the slope on the k-th piece; piece 0 is left of
    ``breakpoints[0]`` and piece ``len(breakpoints)`` is right of the last one.
    """

    kind = "piecewise_linear"

    def __init__(self, breakpoints, slopes):
        bp = np.asarray(breakpoints, dtype=float).ravel()
        sl = np.asarray(slopes, dtype=float).ravel()
        if sl.size != bp.size + 1:
            raise InvalidObstacleError("need exactly one more slope than breakpoints")
        if not (np.isfinite(bp).all() and np.isfinite(sl).all()):
            raise InvalidObstacleError("breakpoints and slopes must be finite")
        if bp.size and (np.diff(bp) <= 0).any():
            raise InvalidObstacleError("breakpoints must be strictly increasing")
        if (np.diff(sl) < 0).any():
            raise InvalidObstacleError("slopes must be nondecreasing (convexity)")
        # drop breakpoints where the slope does not change
        keep = np.diff(sl) > 0
        bp = bp[keep]
        sl = np.concatenate([sl[:1], sl[1:][keep]]) if sl.size > 1 else sl
        self.breakpoints, self.slopes = bp, sl
        left = sl[np.searchsorted(bp, 0.0, side="left")]
        right = sl[np.searchsorted(bp, 0.0, side="right")]
        if left > 0 or right < 0:
            raise InvalidObstacleError("piecewise-linear obstacle must attain its minimum at 0")
        # knot values, integrating the slope outward from 0
        self._vals = np.array([self._integrate(b) for b in bp])

    def _slope_at(self, x):
        return self.slopes[np.searchsorted(self.breakpoints, x, side="right")]

    def _integrate(self, x: float) -> float:
        pts = [0.0] + [b for b in self.breakpoints if min(0.0, x) < b < max(0.0, x)] + [x]
        if x < 0:
            pts = sorted(pts, reverse=True)
        total = 0.0
        for p0, p1 in zip(pts[:-1], pts[1:]):
            total += self._slope_at(0.5 * (p0 + p1)) * (p1 - p0)
        return float(total)

    def _value(self, u):
        bp, sl = self.breakpoints, self.slopes
        if bp.size == 0:
            return sl[0] * u
        out = np.interp(u, bp, self._vals)
        out = np.where(u < bp[0], self._vals[0] + sl[0] * (u - bp[0]), out)
        out = np.where(u > bp[-1], self._vals[-1] + sl[-1] * (u - bp[-1]), out)
        return out

    def _subdiff(self, u):
        bp, sl = self.breakpoints, self.slopes
        lo = sl[np.searchsorted(bp, u, side="left")]
        hi = sl[np.searchsorted(bp, u, side="right")]
        return lo.astype(float), hi.astype(float)

    def _resolvent(self, eps, u):
        bp, sl = self.breakpoints, self.slopes
        if bp.size == 0:
            return u - eps * sl[0]
        # graph of J: flat at b_i over [b_i + eps*s_{i-1}, b_i + eps*s_i], slope 1 between
        left = bp + eps * sl[:-1]
        right = bp + eps * sl[1:]
        xp = np.column_stack([left, right]).ravel()
        fp = np.repeat(bp, 2)
        out = np.interp(u, xp, fp)
        out = np.where(u < xp[0], u - eps * sl[0], out)
        out = np.where(u > xp[-1], u - eps * sl[-1], out)
        return out

    def to_dict(self):
        return {"kind": self.kind, "breakpoints": self.breakpoints.tolist(), "slopes": self.slopes.tolist()}


class Custom(ConvexObstacle):
    """User-supplied obstacle from an evaluation oracle and a monotone subgradient selection.

    Both callables must accept NumPy arrays.  The one-sided derivatives
    reported by :meth:`subdiff` are the selection's limits from either side,
    approximated at a relative offset of 1e-9.
    """

    kind = "custom"

    def __init__(
        self,
        func: Callable[[np.ndarray], np.ndarray],
        subgradient: Callable[[np.ndarray], np.ndarray],
        domain: tuple[float, float] = (-math.inf, math.inf),
        validate: bool = True,
    ):
        self.func, self.subgradient = func, subgradient
        self.domain = (float(domain[0]), float(domain[1]))
        if not (self.domain[0] <= 0.0 <= self.domain[1]):
            raise InvalidObstacleError("custom obstacle domain must contain 0")
        if validate:
            self.validate()

    def _value(self, u):
        inside = self.in_domain(u)
        vals = np.asarray(self.func(np.where(inside, u, 0.0)), dtype=float)
        if np.isnan(vals).any():
            raise InvalidObstacleError("custom obstacle returned NaN")
        return np.where(inside, vals, math.inf)

    def _selection(self, u):
        return np.asarray(self.subgradient(u), dtype=float)

    def _subdiff(self, u):
        dlo, dhi = self.domain
        d = 1e-9 * (1.0 + np.abs(u))
        s = self._selection(np.clip(u, dlo, dhi))
        left = np.where(u - d >= dlo, self._selection(np.clip(u - d, dlo, dhi)), -math.inf)
        right = np.where(u + d <= dhi, self._selection(np.clip(u + d, dlo, dhi)), math.inf)
        lo, hi = np.minimum(left, s), np.maximum(right, s)
        outside = ~self.in_domain(u)
        return np.where(outside, math.nan, lo), np.where(outside, math.nan, hi)

    def _resolvent(self, eps, u):
        return _bisect_resolvent(eps, u, self._selection, self.domain, "custom obstacle")


def obstacle_from_dict(spec: dict) -> ConvexObstacle:
    """Inverse of :meth:`ConvexObstacle.to_dict`."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    builders = {
        "zero": Zero,
        "indicator_interval": IndicatorInterval,
        "quadratic": Quadratic,
        "power_abs": PowerAbs,
        "piecewise_linear": PiecewiseLinearConvex,
    }
    if kind not in builders:
        raise InvalidObstacleError(f"unknown obstacle kind {kind!r}; expected one of {sorted(builders)}")
    try:
        return builders[kind](**spec)
    except TypeError as exc:
        raise InvalidObstacleError(f"bad parameters for {kind}: {exc}") from None


# Functional aliases mirroring the operation names used in configs and docs.
def evaluate(phi: ConvexObstacle, u):
    return phi.value(u)


def subdiff_interval(phi: ConvexObstacle, u: float) -> SubgradientInterval:
    return phi.subdiff(u)


def resolvent(phi: ConvexObstacle, eps: float, u):
    return phi.resolvent(eps, u)


def moreau_env(phi: ConvexObstacle, eps: float, u):
    return phi.moreau_env(eps, u)


def yosida_grad(phi: ConvexObstacle, eps: float, u):
    return phi.yosida_grad(eps, u)


def implicit_penalty_step(phi: ConvexObstacle, eps: float, h: float, v):
    return phi.penalty_step(eps, h, v)
