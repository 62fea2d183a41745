import numpy as np
import pytest

from mfbsvi.errors import DegenerateRegressionError
from mfbsvi.regression import fit_condexp, local_average, regress_condexp


def test_exact_linear_recovery():
    x = np.linspace(-1, 1, 20)
    fit = regress_condexp(x, 2 * x + 1, degree=1, ridge=0)
    assert fit(0.5) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("degree", [0, 1, 3, 5])
def test_constant_targets(degree):
    x = np.random.default_rng(0).standard_normal(200)
    fit = regress_condexp(x, np.full(200, 3.25), degree=degree)
    assert np.allclose(fit(np.linspace(-2, 2, 9)), 3.25, atol=1e-9)


def test_quadratic_conditional_mean():
    g = np.random.default_rng(1)
    x = g.standard_normal(10_000)
    y = x**2 + 0.01 * g.standard_normal(x.size)
    assert regress_condexp(x, y, degree=2)(1.0) == pytest.approx(1.0, abs=0.02)


def test_rank_deficient_without_ridge():
    x = np.repeat([0.0, 1.0], 50)
    with pytest.raises(DegenerateRegressionError, match="ridge"):
        regress_condexp(x, x, degree=3, ridge=0)
    regress_condexp(x, x, degree=3, ridge=1e-8)  # regularized fit is fine


def test_too_few_samples():
    with pytest.raises(ValueError):
        regress_condexp(np.arange(4.0), np.arange(4.0), degree=3)


def test_constant_feature_collapses_to_mean():
    fit = regress_condexp(np.zeros(30), np.arange(30.0), degree=3, ridge=0)
    assert fit(5.0) == pytest.approx(14.5)


def test_multiple_targets_fit_jointly():
    x = np.linspace(-1, 1, 50)
    Y = np.column_stack([x, x**2])
    pred = regress_condexp(x, Y, degree=2, ridge=0)(np.array([0.5]))
    assert pred.shape == (1, 2)
    assert np.allclose(pred[0], [0.5, 0.25], atol=1e-10)


def test_local_average_preserves_sample_mean_and_sign():
    g = np.random.default_rng(2)
    x = g.standard_normal(5000)
    y = np.maximum(x, 0.0)
    fit = local_average(x, y, 50)
    pred = fit(x)
    assert pred.mean() == pytest.approx(y.mean(), rel=1e-12)
    assert (pred >= 0).all()


def test_local_average_bins_are_equal_count():
    x = np.random.default_rng(3).uniform(size=1000)
    fit = local_average(x, x, 10)
    lab = np.searchsorted(fit.edges, x, side="right")
    assert (np.bincount(lab) == 100).all()


def test_fit_condexp_dispatch():
    x = np.linspace(0, 1, 100)
    assert fit_condexp(x, x, "poly", 1, 0.0)(0.3) == pytest.approx(0.3)
    assert fit_condexp(x, x, "bins", n_bins=100)(x[7]) == pytest.approx(x[7])
    with pytest.raises(ValueError):
        fit_condexp(x, x, "splines")
