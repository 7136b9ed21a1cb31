"""Direct minimization of the ensemble generalization error at desk scale.

For a uniformly weighted ensemble ``{theta_k}`` of ``K`` members and an
aleatoric variance regularized to ``v = sigma * loss_residual_var``::

    G_E = - sum_j w_j log[ (1/K) sum_k N(y_j | theta_k . f_j, v) ]

evaluated with log-sum-exp. Minimization is plain gradient descent with a
halving (Armijo) line search. It exists to cross-check the POPS ansatz on
small problems; at small ``sigma`` it is expected to break down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .bayes_ridge import RidgeFit
from .dataset import Dataset
from .errors import PreconditionError, ScaleTooSmall, SpecifiedModel
from .pops_core import pointwise_fits

MAX_P = 8
MAX_N = 1000
GRAD_TOL = 1e-6
_ARMIJO = 1e-4
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class GeConfig:
    members: int | None = None
    sigma_scale: float = 1.0
    max_iters: int = 2000
    step_size: float = 1.0
    init: str = "min_loss_jitter"
    seed: int = 0

    def validate(self):
        if self.members is not None and self.members < 1:
            raise ValueError("members must be at least 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.sigma_scale > 0:
            raise ValueError("sigma_scale must be positive")
        if self.init not in ("min_loss_jitter", "pops_ensemble"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class RefminResult:
    members: np.ndarray
    ge_value: float
    converged: bool
    initial_value: float
    iterations: int
    status: str
    log: list = field(default_factory=list)


def _check_scale(fit: RidgeFit, data: Dataset):
    if data.p > MAX_P or data.n > MAX_N:
        raise PreconditionError(
            f"refmin is limited to P <= {MAX_P} and N <= {MAX_N} (got P={data.p}, N={data.n})"
        )
    if not fit.loss_residual_var > 0:
        raise SpecifiedModel("loss residual variance is zero; nothing to minimize")


def ge_objective(members, data: Dataset, var: float, with_grad=True):
    """G_E and its gradient with respect to the ``(K, P)`` member matrix."""
    F, y, w = data.features, data.targets, data.weights
    K = members.shape[0]
    r = y[None, :] - members @ F.T
    logp = -0.5 * r**2 / var - 0.5 * math.log(2 * math.pi * var) - math.log(K)
    lse = logsumexp(logp, axis=0)
    value = -float(w @ lse)
    if not with_grad:
        return value
    resp = np.exp(logp - lse[None, :])
    grad = -((resp * r) * (w / var)[None, :]) @ F
    return value, grad


def initial_members(data: Dataset, fit: RidgeFit, cfg: GeConfig):
    if cfg.init == "pops_ensemble":
        members = pointwise_fits(fit, data).members
        if cfg.members is not None and cfg.members != data.n:
            raise ValueError("pops_ensemble initialization needs members == N")
        return members.copy()
    K = cfg.members or data.n
    var = cfg.sigma_scale * fit.loss_residual_var
    # epistemic covariance with the regularized noise variance
    std = np.sqrt(np.clip(np.diag(fit.a_matrix), 0, None) * var / data.n)
    rng = np.random.default_rng(cfg.seed)
    return fit.theta_star + rng.standard_normal((K, data.p)) * std


def minimize_ge(data: Dataset, fit: RidgeFit, cfg: GeConfig, callback=None) -> RefminResult:
    """Gradient descent on G_E.

    Non-convergence within ``max_iters`` is reported through the result, never
    raised. :class:`ScaleTooSmall` is raised when the objective or gradient
    stops being finite.
    """
    cfg.validate()
    _check_scale(fit, data)
    var = cfg.sigma_scale * fit.loss_residual_var
    theta = initial_members(data, fit, cfg)

    value, grad = ge_objective(theta, data, var)
    initial = value
    step = cfg.step_size
    log = []
    status = "max_iters"
    it = 0
    for it in range(cfg.max_iters + 1):
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise ScaleTooSmall(
                f"G_E became non-finite at iteration {it} (sigma_scale={cfg.sigma_scale})"
            )
        gnorm = float(np.linalg.norm(grad))
        spread = float(np.max(np.linalg.norm(theta - fit.theta_star, axis=1)))
        record = {"iter": it, "objective": value, "grad_norm": gnorm, "step": step, "spread": spread}
        log.append(record)
        if callback is not None:
            callback(record)
        if gnorm < GRAD_TOL:
            status = "converged"
            break
        if it == cfg.max_iters:
            break
        g2 = gnorm**2
        step *= 2.0
        for _ in range(_MAX_HALVINGS):
            trial = theta - step * grad
            new = ge_objective(trial, data, var, with_grad=False)
            if np.isfinite(new) and new <= value - _ARMIJO * step * g2:
                break
            step *= 0.5
        else:
            status = "line_search_failed"
            break
        theta = trial
        value, grad = ge_objective(theta, data, var)

    return RefminResult(
        members=theta,
        ge_value=value,
        converged=status == "converged",
        initial_value=initial,
        iterations=it,
        status=status,
        log=log,
    )
