"""Weighted minimum-loss (ridge) fit, its Laplace posterior, and a BIC.

With training weights ``w`` (summing to one), an isotropic Gaussian prior of
precision ``alpha`` and a fixed output noise variance ``s2``::

    C = <f f^T> + (s2 / N) * alpha * I
    A = C^{-1}
    theta* = A <f y>

where ``<.>`` is the weighted average over rows. The epistemic posterior is
Gaussian with covariance ``(s2 / N) * A``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dataset import Dataset
from .errors import DimensionMismatch, SingularSystem

DEFAULT_NOISE_VAR = 1e-8
# relative scale of the default prior precision, times Tr(<ff^T>)/P
DEFAULT_PRIOR_REL = 1e-10
# Cholesky pivot ratio below this (condition number ~1e16) counts as singular
_PIVOT_RTOL = 1e-8


@dataclass(frozen=True)
class RidgeFit:
    theta_star: np.ndarray
    a_matrix: np.ndarray
    noise_var: float
    prior_precision_scale: float
    n_train: int
    loss_residual_var: float

    @property
    def p(self):
        return self.theta_star.shape[0]


def second_moment(data: Dataset):
    F = data.features
    return (F * data.weights[:, None]).T @ F


def default_prior_scale(data: Dataset):
    return DEFAULT_PRIOR_REL * float(np.trace(second_moment(data))) / data.p


def snap_residuals(residuals, targets, predictions):
    """Zero residuals that are indistinguishable from floating-point roundoff.

    The bound is a few ulps of the magnitudes entering ``y - theta.f``;
    anything smaller carries no information about misspecification.
    """
    scale = np.abs(targets) + np.abs(predictions)
    out = np.array(residuals, dtype=np.float64)
    out[np.abs(out) <= 64 * np.finfo(float).eps * scale] = 0.0
    return out


def residuals(theta, data: Dataset):
    pred = data.features @ theta
    # roundoff scale uses sum |theta_p f_p|, not |theta.f|
    mag = np.abs(data.features) @ np.abs(theta)
    return snap_residuals(data.targets - pred, data.targets, mag)


def _cholesky(C):
    try:
        L = linalg.cholesky(C, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularSystem("regularized feature second-moment matrix is not positive definite") from None
    d = np.diag(L)
    if d.min() <= _PIVOT_RTOL * d.max():
        raise SingularSystem(
            "feature second-moment matrix is numerically rank-deficient; "
            "use a positive prior_precision_scale"
        )
    return L


def fit_min_loss(data: Dataset, prior_precision_scale=None, noise_var=DEFAULT_NOISE_VAR) -> RidgeFit:
    """Weighted penalized least squares with an explicit inverse ``A``.

    Parameters
    ----------
    data : Dataset
    prior_precision_scale : float, optional
        ``alpha`` in ``Sigma_0^{-1} = alpha * I``. Defaults to
        ``1e-10 * Tr(<ff^T>) / P``.
    noise_var : float
        Fixed output noise variance; never fitted.
    """
    if noise_var is None or not noise_var > 0:
        raise ValueError("noise_var must be positive")
    if prior_precision_scale is None:
        prior_precision_scale = default_prior_scale(data)
    if prior_precision_scale < 0:
        raise ValueError("prior_precision_scale must be nonnegative")
    F, y, w = data.features, data.targets, data.weights
    C = second_moment(data)
    C[np.diag_indices_from(C)] += noise_var * prior_precision_scale / data.n
    L = _cholesky(C)
    A = linalg.cho_solve((L, True), np.eye(data.p), check_finite=False)
    A = 0.5 * (A + A.T)
    theta = A @ (F.T @ (w * y))
    e = residuals(theta, data)
    fit = RidgeFit(
        theta_star=theta,
        a_matrix=A,
        noise_var=float(noise_var),
        prior_precision_scale=float(prior_precision_scale),
        n_train=data.n,
        loss_residual_var=float(np.sum(w * e**2)),
    )
    return fit


def loss_gradient(fit: RidgeFit, data: Dataset, theta=None):
    """Gradient of the weighted penalized squared loss (halved)."""
    theta = fit.theta_star if theta is None else theta
    F = data.features
    g = F.T @ (data.weights * (F @ theta - data.targets))
    return g + fit.noise_var * fit.prior_precision_scale / data.n * theta


def epistemic_predict(fit: RidgeFit, f):
    """Posterior predictive mean and epistemic std at features ``f``.

    ``f`` may be one feature vector or a ``(M, P)`` matrix.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != fit.p:
        raise DimensionMismatch(f"expected {fit.p} features, got {f.shape[-1]}")
    mean = f @ fit.theta_star
    quad = np.einsum("...i,ij,...j->...", f, fit.a_matrix, f)
    std = np.sqrt(np.maximum(quad, 0.0) * fit.noise_var / fit.n_train)
    return mean, std


def bic_deterministic(fit: RidgeFit, data: Dataset) -> float:
    """Bayesian information criterion with the noise variance held fixed.

    ``N * loss_var / noise_var + P ln N + ln det(<ff^T> / noise_var)``;
    model-independent constants are dropped.
    """
    C = second_moment(data)
    sign, logdet = np.linalg.slogdet(C)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularSystem("feature second-moment matrix is not positive definite")
    _cholesky(C)
    n, p = data.n, data.p
    return float(
        n * fit.loss_residual_var / fit.noise_var
        + p * np.log(n)
        + logdet
        - p * np.log(fit.noise_var)
    )
