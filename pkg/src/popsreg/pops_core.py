"""Pointwise-optimal parameter fits via rank-one corrections of the ridge fit.

For each training row ``i`` the loss minimizer constrained to reproduce that
row exactly (``theta . f_i = y_i``) is::

    theta_i = theta* + (e_i / h_i) * A f_i,   e_i = y_i - theta*.f_i,   h_i = f_i^T A f_i

so all ``N`` constrained fits cost one ``(N, P) x (P, P)`` product. The
correction rows ``t_i = theta_i - theta*`` are stored densely; at large ``N``
and ``P`` this matrix dominates memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes_ridge import RidgeFit, residuals, second_moment
from .dataset import Dataset
from .errors import DimensionMismatch, LeverageUnderflow, SingularSystem

LEVERAGE_FLOOR = 1e-12


@dataclass(frozen=True)
class CorrectionSet:
    corrections: np.ndarray
    residuals: np.ndarray
    leverages: np.ndarray
    base: RidgeFit

    @property
    def members(self):
        """Full pointwise-fit parameter vectors, ``(N, P)``."""
        return self.base.theta_star + self.corrections


def pointwise_fits(fit: RidgeFit, data: Dataset) -> CorrectionSet:
    if data.p != fit.p or data.n != fit.n_train:
        raise DimensionMismatch(
            f"fit has P={fit.p}, N={fit.n_train}; data has P={data.p}, N={data.n}"
        )
    F = data.features
    FA = F @ fit.a_matrix
    h = np.einsum("ij,ij->i", F, FA)
    low = np.flatnonzero(h < LEVERAGE_FLOOR)
    if low.size:
        raise LeverageUnderflow(int(low[0]), float(h[low[0]]))
    e = residuals(fit.theta_star, data)
    FA *= (e / h)[:, None]
    return CorrectionSet(corrections=FA, residuals=e, leverages=h, base=fit)


def constrained_fit_oracle(data: Dataset, i: int, fit: RidgeFit):
    """Constrained minimizer for row ``i`` from the KKT saddle-point system.

    Solves::

        [ C    f_i ] [theta ]   [ <f y> ]
        [ f_i^T  0 ] [lambda] = [  y_i  ]

    with ``C`` the regularized second-moment matrix. Shares nothing with
    :func:`pointwise_fits` beyond the problem data.
    """
    p = data.p
    f = data.features[i]
    C = second_moment(data)
    C[np.diag_indices_from(C)] += fit.noise_var * fit.prior_precision_scale / data.n
    K = np.zeros((p + 1, p + 1))
    K[:p, :p] = C
    K[:p, p] = f
    K[p, :p] = f
    rhs = np.empty(p + 1)
    rhs[:p] = data.features.T @ (data.weights * data.targets)
    rhs[p] = data.targets[i]
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystem(f"KKT system for row {i} is singular") from None
    if not np.all(np.isfinite(sol)):
        raise SingularSystem(f"KKT system for row {i} is singular")
    return sol[:p]


def leverage_centroid_check(cs: CorrectionSet, data: Dataset) -> float:
    """Relative distance between the leverage-weighted centroid of the pointwise
    fits and the ridge solution. Vanishes (to roundoff) for a zero prior."""
    wh = data.weights * cs.leverages
    centroid = cs.base.theta_star + (wh @ cs.corrections) / wh.sum()
    norm = np.linalg.norm(cs.base.theta_star)
    diff = np.linalg.norm(centroid - cs.base.theta_star)
    return float(diff / norm) if norm > 0 else float(diff)
