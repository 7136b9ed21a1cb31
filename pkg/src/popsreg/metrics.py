"""Calibration of predicted against observed test errors.

All errors are measured relative to the minimum-loss prediction
``theta* . f``. Observed errors come from the test targets; predicted errors
come from hypercube resamples ``(theta_s - theta*) . f``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bayes_ridge import RidgeFit, epistemic_predict, residuals
from .dataset import Dataset
from .hypercube import Hypercube, PredictionBundle, predict_envelope, sample_box

DEFAULT_RESAMPLES = 64
# a target within this relative distance of a bound counts as on the bound
EV_RTOL = 1e-9
MAX_BINS = 10_000


@dataclass(frozen=True)
class CalibrationReport:
    envelope_violation_rate: float
    observed_mae: float
    predicted_mae: float
    mae_ratio: float
    gaussian_3sigma_coverage: float
    n_test: int
    resamples: int
    histogram: list = field(default_factory=list)

    def as_records(self):
        """Flat ``(key, value)`` pairs, histogram excluded."""
        return [
            ("n_test", self.n_test),
            ("resamples", self.resamples),
            ("envelope_violation_rate", self.envelope_violation_rate),
            ("envelope_coverage", 1.0 - self.envelope_violation_rate),
            ("observed_mae", self.observed_mae),
            ("predicted_mae", self.predicted_mae),
            ("mae_ratio", self.mae_ratio),
            ("gaussian_3sigma_coverage", self.gaussian_3sigma_coverage),
        ]


def violations(bundle: PredictionBundle, targets):
    """Boolean mask of targets strictly outside ``[min, max]``."""
    y = np.asarray(targets, dtype=np.float64)
    lo, hi = np.asarray(bundle.min), np.asarray(bundle.max)
    if y.shape != lo.shape:
        raise ValueError(f"{y.size} targets for {lo.size} predictions")
    slack = EV_RTOL * (1.0 + np.abs(y))
    return (y > hi + slack) | (y < lo - slack)


def envelope_violation(bundle: PredictionBundle, targets) -> float:
    """Fraction of targets strictly outside the max/min band."""
    mask = violations(bundle, targets)
    return float(mask.mean()) if mask.size else 0.0


def resampled_errors(hc: Hypercube, test: Dataset, resamples=DEFAULT_RESAMPLES, seed=0):
    """``(n_test, resamples)`` predicted errors ``(theta_s - theta*) . f``.

    Row ``i`` draws from its own stream ``default_rng((seed, i))`` so the
    result does not depend on how rows are batched.
    """
    m = int(resamples)
    if m < 1:
        raise ValueError("resamples must be at least 1")
    out = np.zeros((test.n, m))
    if hc.rank == 0:
        return out
    G = test.features @ hc.basis.T
    for i in range(test.n):
        x = sample_box(hc, m, np.random.default_rng((seed, i)))
        out[i] = x @ G[i]
    return out


def _ratio(pred, obs):
    if obs == 0.0:
        return 1.0 if pred == 0.0 else float("inf")
    return pred / obs


def mae_ratio(fit: RidgeFit, hc: Hypercube, test: Dataset, resamples=DEFAULT_RESAMPLES, seed=0):
    """Observed MAE, hypercube-predicted MAE and their ratio (predicted/observed).

    Both MAEs zero gives a ratio of 1.
    """
    obs = float(np.mean(np.abs(residuals(fit.theta_star, test))))
    pred = float(np.mean(np.abs(resampled_errors(hc, test, resamples, seed))))
    return obs, pred, _ratio(pred, obs)


def gaussian_coverage(fit: RidgeFit, test: Dataset, k_sigma=3.0) -> float:
    """Fraction of test rows with ``|y - mean| <= k_sigma * std_epistemic``."""
    if not k_sigma > 0:
        raise ValueError("k_sigma must be positive")
    _, std = epistemic_predict(fit, test.features)
    err = np.abs(residuals(fit.theta_star, test))
    return float(np.mean(err <= k_sigma * std))


def histogram(observed, predicted):
    """Observed and predicted error counts on shared bins.

    Bin width is Freedman-Diaconis on the observed errors; edges are then
    extended at that width until they cover the predicted errors too, so
    every sample is counted. Returns ``(low, high, observed_count,
    predicted_count)`` tuples.
    """
    obs = np.ravel(np.asarray(observed, dtype=np.float64))
    pred = np.ravel(np.asarray(predicted, dtype=np.float64))
    allv = np.concatenate([obs, pred])
    lo, hi = float(allv.min()), float(allv.max())
    edges = np.histogram_bin_edges(obs, bins="fd")
    width = float(edges[1] - edges[0]) if edges.size > 1 and obs.min() < obs.max() else 0.0
    if width > 0 and (hi - lo) / width <= MAX_BINS:
        start = edges[0] - width * np.ceil(max(edges[0] - lo, 0.0) / width)
        count = max(int(np.ceil((hi - start) / width)), 1)
        edges = start + width * np.arange(count + 1)
        edges[-1] = max(edges[-1], hi)
    else:
        # observed errors carry no usable width; bin the union instead
        edges = np.histogram_bin_edges(allv, bins="fd")
    oc, _ = np.histogram(obs, bins=edges)
    pc, _ = np.histogram(pred, bins=edges)
    return [
        (float(edges[k]), float(edges[k + 1]), int(oc[k]), int(pc[k])) for k in range(len(oc))
    ]


def error_triples(fit: RidgeFit, bundle: PredictionBundle, test: Dataset):
    """Per test row: ``|observed error|``, predicted std, ``max - min``."""
    err = np.abs(residuals(fit.theta_star, test))
    return np.column_stack([err, np.broadcast_to(bundle.std_misspec, err.shape), bundle.max - bundle.min])


def calibrate(fit: RidgeFit, hc: Hypercube, test: Dataset, resamples=DEFAULT_RESAMPLES, seed=0):
    """Full :class:`CalibrationReport` of a hypercube model on a test set."""
    bundle = predict_envelope(hc, test.features)
    errs = resampled_errors(hc, test, resamples, seed)
    obs_err = residuals(fit.theta_star, test)
    obs = float(np.mean(np.abs(obs_err)))
    pred = float(np.mean(np.abs(errs)))
    return CalibrationReport(
        envelope_violation_rate=envelope_violation(bundle, test.targets),
        observed_mae=obs,
        predicted_mae=pred,
        mae_ratio=_ratio(pred, obs),
        gaussian_3sigma_coverage=gaussian_coverage(fit, test, 3.0),
        n_test=test.n,
        resamples=int(resamples),
        histogram=histogram(obs_err, errs),
    )
