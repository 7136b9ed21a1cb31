"""Weighted ensemble of pointwise fits with variationally optimal weights.

``M[i, j]`` is the Gaussian density of the residual of training row ``j`` under
pointwise fit ``i``, with variance ``sigma_scale * loss_residual_var``. The
optimal member weights are::

    w*_i = lam * sum_j w_j M[i, j] / sum_k w_k M[k, j]

with ``lam`` fixing ``sum_i w_i w*_i = 1``. Everything is evaluated from the
log-density matrix; the ``O(N^2)`` cost makes this the non-scalable path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .bayes_ridge import epistemic_predict
from .dataset import Dataset
from .errors import DegenerateColumn, DimensionMismatch, SpecifiedModel
from .hypercube import PredictionBundle
from .pops_core import CorrectionSet

# ensembles above this size need an explicit opt-in from the CLI
ENSEMBLE_N_LIMIT = 20_000


@dataclass(frozen=True)
class EnsembleWeights:
    values: np.ndarray
    mass_scale: float
    normalization: float
    data_weights: np.ndarray

    @property
    def member_probabilities(self):
        """``w_i * w*_i``, summing to one."""
        return self.data_weights * self.values


def log_mass_matrix(cs: CorrectionSet, data: Dataset, sigma_scale: float) -> np.ndarray:
    if not sigma_scale > 0:
        raise ValueError("sigma_scale must be positive")
    var = sigma_scale * cs.base.loss_residual_var
    if not var > 0:
        raise SpecifiedModel(
            "loss residual variance is zero; the ensemble is degenerate, use the hypercube"
        )
    F = data.features
    # r[i, j] = y_j - theta_i . f_j = e_j - t_i . f_j
    r = cs.residuals[None, :] - cs.corrections @ F.T
    return -0.5 * r**2 / var - 0.5 * np.log(2 * np.pi * var)


def mass_matrix(cs: CorrectionSet, data: Dataset, sigma_scale: float) -> np.ndarray:
    """Pointwise mass ``M[i, j]`` of fit ``i`` at training row ``j`` (may underflow)."""
    return np.exp(log_mass_matrix(cs, data, sigma_scale))


def optimal_weights(mass, data: Dataset, *, log=False, mass_scale=float("nan")) -> EnsembleWeights:
    """Optimal ensemble weights (see module docstring).

    Pass ``log=True`` when ``mass`` already holds log-densities, which avoids
    underflow at small ``sigma_scale``.
    """
    mass = np.asarray(mass, dtype=np.float64)
    if log:
        log_mass = mass
    else:
        with np.errstate(divide="ignore"):
            log_mass = np.log(mass)
    n = data.n
    if log_mass.shape != (n, n):
        raise DimensionMismatch(f"mass matrix must be {n}x{n}, got {log_mass.shape}")
    if np.any(np.isnan(log_mass)) or np.any(log_mass == np.inf):
        raise ValueError("mass matrix must be finite and nonnegative")
    logw = np.log(data.weights)
    col = logsumexp(log_mass + logw[:, None], axis=0)
    bad = np.flatnonzero(~np.isfinite(col))
    if bad.size:
        raise DegenerateColumn(int(bad[0]))
    # rho[i, j] = w_i M[i, j] / sum_k w_k M[k, j]; w*_i = sum_j w_j rho[i, j] / w_i
    raw = np.exp(logsumexp(log_mass - col[None, :] + logw[None, :], axis=1))
    lam = 1.0 / float(data.weights @ raw)
    return EnsembleWeights(
        values=lam * raw,
        mass_scale=float(mass_scale),
        normalization=lam,
        data_weights=data.weights,
    )


def fit_ensemble(cs: CorrectionSet, data: Dataset, sigma_scale: float) -> EnsembleWeights:
    lm = log_mass_matrix(cs, data, sigma_scale)
    return optimal_weights(lm, data, log=True, mass_scale=sigma_scale)


def ensemble_predict(cs: CorrectionSet, w: EnsembleWeights, f) -> PredictionBundle:
    """Mixture mean/std over members and the member max/min envelope.

    Members carry probability ``w_i * w*_i``; the extremes ignore weights.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != cs.base.p:
        raise DimensionMismatch(f"expected {cs.base.p} features, got {f.shape[-1]}")
    pw = w.member_probabilities
    base = f @ cs.base.theta_star
    offs = f @ cs.corrections.T  # (..., N)
    shift = offs @ pw
    var = (offs - shift[..., None]) ** 2 @ pw
    _, std_epi = epistemic_predict(cs.base, f)
    return PredictionBundle(
        mean=base + shift,
        std_misspec=np.sqrt(np.maximum(var, 0.0)),
        std_epistemic=std_epi,
        max=base + offs.max(axis=-1),
        min=base + offs.min(axis=-1),
    )


def uniform_weights(data: Dataset) -> EnsembleWeights:
    return EnsembleWeights(
        values=np.ones(data.n), mass_scale=float("inf"), normalization=1.0, data_weights=data.weights
    )
