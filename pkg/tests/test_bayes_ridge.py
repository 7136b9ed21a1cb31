from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cubic, random_instance, three_rows
from popsreg.bayes_ridge import (
    bic_deterministic,
    default_prior_scale,
    epistemic_predict,
    fit_min_loss,
    loss_gradient,
    second_moment,
)
from popsreg.dataset import Dataset, EngineSpec, concat, synth_engine
from popsreg.errors import DimensionMismatch, SingularSystem

# golden BIC values from an independent 50-digit mpmath solve of the same
# instance (cubic engine, 3 inputs, N=2000, seed 0)
BIC_LINEAR = 45571322996.410452985
BIC_QUADRATIC = 34634626017.886960381


def _normal_equations_exact(F, y):
    """Solve the 2x2 normal equations in rational arithmetic."""
    F = [[Fraction(v) for v in row] for row in F]
    y = [Fraction(v) for v in y]
    c = [[sum(r[i] * r[j] for r in F) for j in range(2)] for i in range(2)]
    b = [sum(r[i] * t for r, t in zip(F, y)) for i in range(2)]
    det = c[0][0] * c[1][1] - c[0][1] * c[1][0]
    return [(c[1][1] * b[0] - c[0][1] * b[1]) / det, (c[0][0] * b[1] - c[1][0] * b[0]) / det]


def test_three_row_solution(tri):
    exact = _normal_equations_exact(tri.features.tolist(), tri.targets.tolist())
    assert exact == [Fraction(4, 3), Fraction(7, 3)]
    fit = fit_min_loss(tri, prior_precision_scale=0.0)
    np.testing.assert_allclose(fit.theta_star, [4 / 3, 7 / 3], rtol=1e-14)
    # residuals (-1/3, -1/3, 1/3)
    assert fit.loss_residual_var == pytest.approx(1 / 9, rel=1e-13)


def test_specified_model_has_zero_residual():
    rng = np.random.default_rng(0)
    F = rng.standard_normal((40, 4))
    d = Dataset(F, F @ np.array([1.0, -2.0, 0.5, 3.0]))
    fit = fit_min_loss(d)
    assert fit.loss_residual_var == 0.0


def test_duplicate_rows_leave_theta_unchanged():
    d = random_instance(1)
    a = fit_min_loss(d, 0.0)
    b = fit_min_loss(concat([d, d]), 0.0)
    np.testing.assert_allclose(b.theta_star, a.theta_star, rtol=1e-10, atol=1e-12)


def test_weight_rescaling_invariance():
    d = random_instance(2)
    scaled = Dataset(d.features, d.targets, d.weights * 37.5)
    np.testing.assert_allclose(
        fit_min_loss(scaled).theta_star, fit_min_loss(d).theta_star, rtol=1e-12, atol=1e-14
    )


@pytest.mark.parametrize("seed", range(10))
def test_gradient_vanishes(seed):
    d = random_instance(seed)
    fit = fit_min_loss(d, prior_precision_scale=1e5)
    assert np.max(np.abs(loss_gradient(fit, d))) < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_a_matrix_invariants(seed):
    d = random_instance(seed)
    fit = fit_min_loss(d, 0.0)
    A = fit.a_matrix
    assert np.max(np.abs(A - A.T)) <= 1e-10 * np.max(np.abs(A))
    assert np.all(np.linalg.eigvalsh(A) > 0)
    np.testing.assert_allclose(A @ second_moment(d), np.eye(d.p), atol=1e-8)


def test_default_prior_is_tiny(tri):
    fit = fit_min_loss(tri)
    assert fit.prior_precision_scale == pytest.approx(1e-10 * (2 / 3 + 2 / 3) / 2)
    assert default_prior_scale(tri) == fit.prior_precision_scale


def test_singular_without_prior():
    F = np.column_stack([np.ones(5), np.ones(5)])
    d = Dataset(F, np.arange(5.0))
    with pytest.raises(SingularSystem):
        fit_min_loss(d, prior_precision_scale=0.0)
    # a real prior regularizes it
    fit_min_loss(d, prior_precision_scale=1e9)


def test_bad_noise_var(tri):
    with pytest.raises(ValueError):
        fit_min_loss(tri, noise_var=0.0)
    with pytest.raises(ValueError):
        fit_min_loss(tri, prior_precision_scale=-1.0)


def test_epistemic_zero_vector(tri):
    fit = fit_min_loss(tri)
    assert epistemic_predict(fit, np.zeros(2)) == (0.0, 0.0)


def test_epistemic_matches_dense_solve():
    d = random_instance(3)
    fit = fit_min_loss(d, prior_precision_scale=2.0, noise_var=0.3)
    f = np.random.default_rng(9).standard_normal((7, d.p))
    C = second_moment(d) + 0.3 * 2.0 / d.n * np.eye(d.p)
    expected = 0.3 / d.n * np.einsum("ij,ij->i", f, np.linalg.solve(C, f.T).T)
    mean, std = epistemic_predict(fit, f)
    np.testing.assert_allclose(std**2, expected, rtol=1e-10)
    np.testing.assert_allclose(mean, f @ fit.theta_star)
    with pytest.raises(DimensionMismatch):
        epistemic_predict(fit, np.ones(d.p + 1))


def test_epistemic_std_shrinks_with_duplication():
    d = random_instance(4)
    f = np.ones(d.p)
    s1 = epistemic_predict(fit_min_loss(d, 0.0), f)[1]
    s2 = epistemic_predict(fit_min_loss(concat([d, d]), 0.0), f)[1]
    assert s2 / s1 == pytest.approx(1 / np.sqrt(2), rel=1e-8)


def test_bic_nested_specified():
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, (200, 2))
    small = np.column_stack([np.ones(200), X])
    big = np.column_stack([small, X[:, 0] * X[:, 1]])
    y = small @ np.array([0.5, 1.0, -1.0])
    fs, fb = fit_min_loss(Dataset(small, y)), fit_min_loss(Dataset(big, y))
    assert fs.loss_residual_var == 0 and fb.loss_residual_var == 0
    ld = lambda F: np.linalg.slogdet(F.T @ F / 200 / 1e-8)[1]
    expected = np.log(200) + ld(big) - ld(small)
    got = bic_deterministic(fb, Dataset(big, y)) - bic_deterministic(fs, Dataset(small, y))
    assert got == pytest.approx(expected, rel=1e-10)


def test_bic_noise_halving():
    d = random_instance(6)
    a = fit_min_loss(d, 0.0, noise_var=1e-4)
    b = fit_min_loss(d, 0.0, noise_var=5e-5)
    resid = d.n * a.loss_residual_var / 1e-4
    diff = bic_deterministic(b, d) - bic_deterministic(a, d)
    assert diff == pytest.approx(resid + d.p * np.log(2), rel=1e-10)


def test_bic_golden_cubic():
    d = synth_engine(EngineSpec("cubic", 3, 1, 0.0, 0), 2000, 0)
    X = d.features[:, 1:]
    quad = np.column_stack([X[:, i] * X[:, j] for i in range(3) for j in range(i, 3)])
    dq = Dataset(np.column_stack([d.features, quad]), d.targets)
    lin = bic_deterministic(fit_min_loss(d), d)
    rich = bic_deterministic(fit_min_loss(dq), dq)
    assert lin == pytest.approx(BIC_LINEAR, rel=1e-9)
    assert rich == pytest.approx(BIC_QUADRATIC, rel=1e-9)
    assert rich < lin


def test_bic_singular():
    F = np.column_stack([np.ones(5), np.ones(5)])
    d = Dataset(F, np.arange(5.0))
    fit = fit_min_loss(d, prior_precision_scale=1e9)
    with pytest.raises(SingularSystem):
        bic_deterministic(fit, d)


@settings(max_examples=30, deadline=None)
@given(extra=st.floats(0.0, 10.0))
def test_bic_monotone_in_residual(extra):
    from dataclasses import replace

    d = cubic(4, 60, 1)
    fit = fit_min_loss(d)
    worse = replace(fit, loss_residual_var=fit.loss_residual_var + extra + 1e-6)
    assert bic_deterministic(worse, d) > bic_deterministic(fit, d)
