import numpy as np
import pytest

from conftest import cubic, sinusoid
from popsreg.bayes_ridge import fit_min_loss
from popsreg.dataset import Dataset
from popsreg.ensemble import (
    ensemble_predict,
    fit_ensemble,
    log_mass_matrix,
    mass_matrix,
    optimal_weights,
    uniform_weights,
)
from popsreg.errors import DegenerateColumn, DimensionMismatch, SpecifiedModel
from popsreg.hypercube import build_hypercube, predict_envelope
from popsreg.metrics import envelope_violation
from popsreg.pops_core import pointwise_fits


def _setup(d):
    fit = fit_min_loss(d)
    return fit, pointwise_fits(fit, d)


def test_diagonal_is_column_max():
    d = cubic(4, 50, 0)
    fit, cs = _setup(d)
    M = mass_matrix(cs, d, 1.0)
    peak = 1 / np.sqrt(2 * np.pi * fit.loss_residual_var)
    np.testing.assert_allclose(np.diag(M), peak, rtol=1e-9)
    assert np.all(M.max(axis=0) <= np.diag(M) * (1 + 1e-12))


def test_two_point_symmetric():
    # theta* = 0, residuals (1, -1), corrections (1, -1)
    d = Dataset(np.ones((2, 1)), np.array([1.0, -1.0]))
    fit, cs = _setup(d)
    np.testing.assert_allclose(cs.corrections[:, 0], [1, -1], rtol=1e-9)
    M = mass_matrix(cs, d, 1.0)
    np.testing.assert_allclose(M, M.T, rtol=1e-9)
    # off-diagonal residual is 2, variance 1
    assert M[0, 1] == pytest.approx(np.exp(-2) / np.sqrt(2 * np.pi), rel=1e-9)


def test_flat_limit():
    d = cubic(3, 40, 1)
    _, cs = _setup(d)
    M = mass_matrix(cs, d, 1e12)
    assert np.max(np.abs(M / M.max(axis=0) - 1)) < 1e-9


def test_identity_mass_gives_uniform():
    d = cubic(3, 30, 2)
    w = optimal_weights(np.eye(30), d)
    np.testing.assert_allclose(w.values, 1.0, rtol=1e-14)
    assert w.normalization == pytest.approx(1.0)


def test_weighted_identity_gives_uniform():
    d = Dataset(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 5.0]))
    w = optimal_weights(np.eye(3), d)
    np.testing.assert_allclose(w.values, 1.0, rtol=1e-14)


@pytest.mark.parametrize("scale", [0.05, 0.3, 1.0, 10.0, 1e6])
def test_weights_positive_and_normalized(scale):
    d = cubic(5, 120, 3)
    _, cs = _setup(d)
    w = fit_ensemble(cs, d, scale)
    assert np.all(w.values > 0)
    assert abs(d.weights @ w.values - 1) < 1e-10
    assert w.member_probabilities.sum() == pytest.approx(1.0, abs=1e-10)
    assert w.mass_scale == scale


def test_large_scale_uniform():
    d = cubic(5, 120, 4)
    _, cs = _setup(d)
    assert np.max(np.abs(fit_ensemble(cs, d, 1e6).values - 1)) < 1e-3


def test_weights_low_near_min_loss():
    d = cubic(5, 300, 5)
    _, cs = _setup(d)
    w = fit_ensemble(cs, d, 0.1).values
    order = np.argsort(np.abs(cs.residuals))
    # the tenth of points closest to theta* carry less weight than the farthest tenth
    k = d.n // 10
    assert w[order[:k]].mean() < w[order[-k:]].mean()
    assert np.corrcoef(np.argsort(np.argsort(w)), np.argsort(np.argsort(np.abs(cs.residuals))))[0, 1] > 0.5


def test_log_and_linear_paths_agree():
    d = cubic(3, 40, 6)
    _, cs = _setup(d)
    a = optimal_weights(mass_matrix(cs, d, 2.0), d)
    b = optimal_weights(log_mass_matrix(cs, d, 2.0), d, log=True)
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


def test_small_scale_survives_in_log_space():
    d = cubic(3, 40, 7)
    _, cs = _setup(d)
    w = fit_ensemble(cs, d, 1e-6)
    assert np.all(np.isfinite(w.values)) and np.all(w.values > 0)


def test_degenerate_column():
    d = cubic(3, 4, 0)
    M = np.eye(4)
    M[:, 2] = 0.0
    with pytest.raises(DegenerateColumn) as info:
        optimal_weights(M, d)
    assert info.value.column == 2
    with pytest.raises(DimensionMismatch):
        optimal_weights(np.eye(3), d)


def test_specified_model_rejected():
    rng = np.random.default_rng(0)
    F = rng.standard_normal((10, 2))
    d = Dataset(F, F @ np.array([1.0, 1.0]))
    _, cs = _setup(d)
    with pytest.raises(SpecifiedModel):
        mass_matrix(cs, d, 1.0)
    b = ensemble_predict(cs, uniform_weights(d), np.array([0.5, 2.0]))
    assert b.std_misspec == 0 and b.max == b.min


def test_predict_matches_members():
    d = cubic(3, 30, 8)
    _, cs = _setup(d)
    w = fit_ensemble(cs, d, 1.0)
    f = np.array([1.0, 0.2, -0.3])
    preds = cs.members @ f
    b = ensemble_predict(cs, w, f)
    pw = w.member_probabilities
    assert b.mean == pytest.approx(pw @ preds, rel=1e-12)
    assert b.std_misspec == pytest.approx(np.sqrt(pw @ (preds - pw @ preds) ** 2), rel=1e-9)
    assert b.max == pytest.approx(preds.max(), rel=1e-12)
    assert b.min == pytest.approx(preds.min(), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_envelope_inside_hypercube(seed):
    d = cubic(6, 200, seed)
    _, cs = _setup(d)
    hc = build_hypercube(cs)
    w = fit_ensemble(cs, d, 1.0)
    F = np.column_stack([np.ones(1000), np.random.default_rng(seed).uniform(-1, 1, (1000, 5))])
    e, h = ensemble_predict(cs, w, F), predict_envelope(hc, F)
    tol = 1e-10 * (1 + np.abs(h.mean))
    assert np.all(e.max <= h.max + tol) and np.all(e.min >= h.min - tol)


def test_sinusoid_band_nearly_covers_the_curve():
    # a finite ensemble can dip below the curve between training points;
    # the misses are rare and tiny next to the band itself
    d = sinusoid()
    _, cs = _setup(d)
    w = fit_ensemble(cs, d, 1.0)
    assert envelope_violation(ensemble_predict(cs, w, d.features), d.targets) == 0.0
    lo, hi = d.features[:, 1].min(), d.features[:, 1].max()
    x = np.linspace(lo, hi, 2001)
    b = ensemble_predict(cs, w, np.column_stack([np.ones_like(x), x, x**2]))
    y = np.sin(np.pi * x)
    excess = np.maximum(np.maximum(y - b.max, b.min - y), 0.0)
    assert envelope_violation(b, y) < 0.03
    assert excess.max() < 1e-3 * np.mean(b.max - b.min)
