"""Bounding-box posterior over the pointwise-fit corrections.

The corrections are rotated into their right-singular basis ``V`` (rows
orthonormal, rank ``R``); the posterior is uniform over the axis-aligned box
``[lower, upper]`` spanned by the projected corrections. Since predictions are
linear in the parameters, envelope bounds and the box standard deviation follow
in closed form from ``g = V f``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes_ridge import RidgeFit, epistemic_predict
from .errors import DimensionMismatch
from .pops_core import CorrectionSet

DEFAULT_RANK_REL_TOL = 1e-10


@dataclass(frozen=True)
class PredictionBundle:
    """Per-point prediction summary. Fields are floats or ``(M,)`` arrays."""

    mean: np.ndarray
    std_misspec: np.ndarray
    std_epistemic: np.ndarray
    max: np.ndarray
    min: np.ndarray

    @property
    def std_combined(self):
        return np.sqrt(self.std_misspec**2 + self.std_epistemic**2)

    def __len__(self):
        return np.size(self.mean)


@dataclass(frozen=True)
class Hypercube:
    basis: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    base: RidgeFit
    rank_rel_tol: float = DEFAULT_RANK_REL_TOL

    @property
    def rank(self):
        return self.basis.shape[0]

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self):
        return 0.5 * (self.upper - self.lower)

    def log_volume(self):
        w = self.upper - self.lower
        return float(np.sum(np.log(w))) if self.rank else 0.0


def orient_rows(V):
    """Flip each row so its largest-magnitude entry is positive."""
    V = np.array(V, dtype=np.float64)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=1)
    signs = np.sign(V[np.arange(V.shape[0]), idx])
    signs[signs == 0] = 1.0
    return V * signs[:, None]


def correction_basis(T, rank_rel_tol=DEFAULT_RANK_REL_TOL):
    """Right singular vectors of ``T`` above the relative cutoff, sign-fixed.

    The singular values of ``T`` equal those of its triangular QR factor, so
    the SVD runs on a ``(min(N, P), P)`` matrix and ``U`` is never formed.
    """
    p = T.shape[1]
    if not np.any(T):
        return np.zeros((0, p)), np.zeros(0)
    R = np.linalg.qr(T, mode="r")
    _, s, Vt = np.linalg.svd(R, full_matrices=False)
    keep = s > rank_rel_tol * s[0]
    return orient_rows(Vt[keep]), s


def build_hypercube(cs: CorrectionSet, rank_rel_tol=DEFAULT_RANK_REL_TOL) -> Hypercube:
    T = cs.corrections
    basis, _ = correction_basis(T, rank_rel_tol)
    if basis.shape[0] == 0:
        lower = upper = np.zeros(0)
    else:
        proj = T @ basis.T
        lower = proj.min(axis=0)
        upper = proj.max(axis=0)
    return Hypercube(basis=basis, lower=lower, upper=upper, base=cs.base, rank_rel_tol=float(rank_rel_tol))


def sample_box(hc: Hypercube, m: int, rng):
    """``(m, R)`` uniform draws in projected coordinates."""
    return rng.uniform(hc.lower, hc.upper, size=(int(m), hc.rank))


def sample_hypercube(hc: Hypercube, m: int, seed) -> np.ndarray:
    """Parameter samples ``theta* + x V`` with ``x`` uniform in the box."""
    if int(m) < 1:
        raise ValueError("m must be at least 1")
    rng = np.random.default_rng(seed)
    x = sample_box(hc, m, rng)
    return hc.base.theta_star + x @ hc.basis


def predict_envelope(hc: Hypercube, f) -> PredictionBundle:
    """Closed-form mean, box std and max/min bounds at features ``f``."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != hc.base.p:
        raise DimensionMismatch(f"expected {hc.base.p} features, got {f.shape[-1]}")
    base_mean, std_epi = epistemic_predict(hc.base, f)
    g = f @ hc.basis.T
    mean = base_mean + g @ hc.center
    spread = np.abs(g) @ hc.half_width
    std = np.sqrt((g**2) @ (hc.half_width**2) / 3.0)
    return PredictionBundle(
        mean=mean,
        std_misspec=std,
        std_epistemic=std_epi,
        max=mean + spread,
        min=mean - spread,
    )
