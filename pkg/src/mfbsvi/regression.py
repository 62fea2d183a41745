"""Least-squares conditional expectations in one state variable.

Two bases are offered:

* ``poly``: global polynomials ``{1, x, ..., x**degree}`` on standardized
  features, optionally ridge-regularized.
* ``bins``: indicators of equal-count quantile bins, i.e. local averages.
  This projection is a positive operator, so nonnegative targets give
  nonnegative predictions.  Global polynomials lack that property and their
  undershoot near kinks is amplified by ``1/h`` in the reflection term.

Both fits contain the constant function, so the sample mean of the fitted
values equals the sample mean of the targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRegressionError

BASES = ("bins", "poly")


@dataclass(frozen=True)
class Regression:
    """Fitted polynomial ``x -> sum_k coef[k] * ((x - center) / scale)**k``.

    ``coef`` has shape (degree+1,) or (degree+1, n_targets).
    """

    coef: np.ndarray
    center: float
    scale: float

    @property
    def degree(self) -> int:
        return self.coef.shape[0] - 1

    def design(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.center) / self.scale
        return np.vander(np.ravel(z), self.degree + 1, increasing=True)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.design(x) @ self.coef
        return out.reshape(x.shape + self.coef.shape[1:])

    __call__ = predict


@dataclass(frozen=True)
class LocalAverage:
    """Piecewise-constant fit: ``means[k]`` on the k-th bin cut by ``edges``."""

    edges: np.ndarray
    means: np.ndarray

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lab = np.searchsorted(self.edges, np.ravel(x), side="right")
        return self.means[lab].reshape(x.shape + self.means.shape[1:])

    __call__ = predict


def regress_condexp(features, targets, degree: int = 3, ridge: float = 1e-8):
    """Fit ``E[targets | features]`` on the basis ``{1, x, ..., x**degree}``.

    Features are standardized before building the basis.  A feature sample
    with zero spread carries no information beyond the mean, so the fit
    collapses to degree 0 in that case.

    Raises:
        DegenerateRegressionError: normal equations are rank deficient and
            ``ridge == 0``.
    """
    x = np.asarray(features, dtype=float).ravel()
    y = np.asarray(targets, dtype=float)
    y2 = y.reshape(x.size, -1)
    n = x.size
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if n <= degree + 1:
        raise ValueError(f"need more than degree+1={degree + 1} samples, got {n}")
    center = float(np.mean(x))
    spread = float(np.std(x))
    if spread <= 1e-14 * (1.0 + abs(center)):
        coef = np.mean(y2, axis=0, keepdims=True)
        return Regression(coef if y.ndim > 1 else coef[:, 0], center, 1.0)
    A = np.vander((x - center) / spread, degree + 1, increasing=True) / np.sqrt(n)
    b = y2 / np.sqrt(n)
    if ridge > 0:
        A = np.vstack([A, np.sqrt(ridge) * np.eye(degree + 1)])
        b = np.vstack([b, np.zeros((degree + 1, b.shape[1]))])
    coef, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < degree + 1 and ridge == 0:
        raise DegenerateRegressionError(
            f"rank-deficient design (rank {rank} < {degree + 1}); use ridge > 0 or a lower degree"
        )
    return Regression(coef if y.ndim > 1 else coef[:, 0], center, spread)


def local_average(features, targets, n_bins: int = 50) -> LocalAverage:
    """Equal-count bin averages of ``targets`` against ``features``.

    Ties in the features never straddle a bin edge, so bins may end up
    unequal (or empty) when features repeat; a constant feature gives one bin.
    """
    x = np.asarray(features, dtype=float).ravel()
    y = np.asarray(targets, dtype=float)
    y2 = y.reshape(x.size, -1)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    n_bins = min(n_bins, x.size)
    xs = np.sort(x)
    edges = xs[(np.arange(1, n_bins) * x.size) // n_bins]
    lab = np.searchsorted(edges, x, side="right")
    counts = np.bincount(lab, minlength=n_bins)
    sums = np.stack([np.bincount(lab, weights=y2[:, k], minlength=n_bins) for k in range(y2.shape[1])], axis=1)
    means = sums / np.maximum(counts, 1)[:, None]
    return LocalAverage(edges, means if y.ndim > 1 else means[:, 0])


def fit_condexp(features, targets, basis: str = "bins", degree: int = 3, ridge: float = 1e-8, n_bins: int = 50):
    """Dispatch on ``basis``; returns an object with ``predict``."""
    if basis == "poly":
        return regress_condexp(features, targets, degree, ridge)
    if basis == "bins":
        return local_average(features, targets, n_bins)
    raise ValueError(f"basis must be one of {BASES}, got {basis!r}")
