"""Space-time tables of u(t, x) produced by either solver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .io import read_csv, write_csv


@dataclass
class FieldSolution:
    """Values ``u[k, j]`` at times ``t[k]`` and positions ``x[j]``.

    ``stderr`` is only populated by the probabilistic route.  ``failures``
    lists ``(t, x, message)`` for nodes whose solve raised.  ``terminal``,
    when set, evaluates the exact terminal condition so that off-node queries
    at the last time are not interpolated.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    provenance: str
    stderr: np.ndarray | None = None
    failures: list = field(default_factory=list)
    terminal: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float).reshape(self.t.size, self.x.size)
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float).reshape(self.u.shape)

    def at(self, t: float, x: float) -> float:
        """Linear interpolation in x (and in t when ``t`` is not a stored row)."""
        k = np.searchsorted(self.t, t)
        if k < self.t.size and np.isclose(self.t[k], t, rtol=0, atol=1e-12):
            if k == self.t.size - 1 and self.terminal is not None:
                return float(np.asarray(self.terminal(np.array([float(x)])))[0])
            return float(np.interp(x, self.x, self.u[k]))
        if k == 0 or k == self.t.size:
            raise ValueError(f"time {t} outside field range [{self.t[0]}, {self.t[-1]}]")
        w = (t - self.t[k - 1]) / (self.t[k] - self.t[k - 1])
        return float((1 - w) * np.interp(x, self.x, self.u[k - 1]) + w * np.interp(x, self.x, self.u[k]))

    def stderr_at(self, t: float, x: float) -> float:
        if self.stderr is None:
            return 0.0
        k = int(np.argmin(np.abs(self.t - t)))
        return float(np.interp(x, self.x, self.stderr[k]))

    def to_csv(self, path):
        tt, xx = np.meshgrid(self.t, self.x, indexing="ij")
        se = self.stderr if self.stderr is not None else np.zeros_like(self.u)
        return write_csv(path, ["t", "x", "u", "stderr"], [tt, xx, self.u, se])

    @classmethod
    def from_csv(cls, path, provenance: str = "loaded") -> "FieldSolution":
        cols = read_csv(path)
        t = np.unique(cols["t"])
        x = np.unique(cols["x"])
        shape = (t.size, x.size)
        return cls(t, x, cols["u"].reshape(shape), provenance, cols["stderr"].reshape(shape))


@dataclass(frozen=True)
class FieldErrorReport:
    sup_err: float
    l2_err: float
    table: list  # (t, x, a, b, abs_err)


def field_error(a: FieldSolution, b: FieldSolution, probes) -> FieldErrorReport:
    """Sup and root-mean-square discrepancy of two fields over probe points ``(t, x)``."""
    rows = []
    for t, x in probes:
        va, vb = a.at(t, x), b.at(t, x)
        rows.append((float(t), float(x), va, vb, abs(va - vb)))
    errs = np.array([r[4] for r in rows])
    if errs.size == 0:
        return FieldErrorReport(0.0, 0.0, [])
    return FieldErrorReport(float(errs.max()), float(np.sqrt(np.mean(errs**2))), rows)
