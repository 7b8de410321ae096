"""
Acquisition functions: expected improvement, upper confidence bound and the
importance-weighted PLeBO mixture over hyperparameter candidates.
"""

from typing import Sequence

import numpy as np
from scipy.stats import norm

from plebo import gp
from plebo.config import DEFAULT_CONFIG
from plebo.errors import AllWeightsZero, DimensionMismatch, LikelihoodUndefined
from plebo.schema import AcquisitionSpec, CandidateSet, HyperParams

SIGMA_FLOOR = DEFAULT_CONFIG.acquisition.SIGMA_FLOOR


def expected_improvement(pred: gp.Prediction, best: float) -> np.ndarray:
    """
    (mu - best) Phi(z) + sigma phi(z), z = (mu - best) / sigma.

    Points with sigma <= 1e-12 get the deterministic limit max(mu - best, 0).
    """
    mu = np.asarray(pred.mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(pred.variance, dtype=np.float64), 0.0))
    improvement = mu - best
    ei = np.maximum(improvement, 0.0)
    ok = sigma > SIGMA_FLOOR
    if np.any(ok):
        z = improvement[ok] / sigma[ok]
        ei[ok] = improvement[ok] * norm.cdf(z) + sigma[ok] * norm.pdf(z)
    # Phi/phi round-off can leave values a hair below zero
    return np.maximum(ei, 0.0)


def ucb(pred: gp.Prediction, beta: float = DEFAULT_CONFIG.acquisition.UCB_BETA) -> np.ndarray:
    """mu + sqrt(beta) * sigma."""
    sigma = np.sqrt(np.maximum(np.asarray(pred.variance, dtype=np.float64), 0.0))
    return np.asarray(pred.mean, dtype=np.float64) + np.sqrt(beta) * sigma


def base_acquisition(
    D: gp.Dataset, theta: HyperParams, grid, spec: AcquisitionSpec, best: float,
) -> np.ndarray:
    """The base acquisition of ``spec`` under the GP posterior with ``theta``."""
    pred = gp.posterior_predictive(D, theta, grid)
    if spec.kind == "UCB":
        return ucb(pred, spec.ucb_beta)
    return expected_improvement(pred, best)


def candidate_log_weights(cands: CandidateSet, D: gp.Dataset) -> np.ndarray:
    """
    log w_h = LML(D, theta_h); -inf where the likelihood is undefined.

    An empty dataset gives uniform weights (all zeros).

    Raises:
        AllWeightsZero: if every candidate has an undefined likelihood.
    """
    if D.n == 0:
        return np.zeros(len(cands.thetas))
    log_w = np.empty(len(cands.thetas))
    for h, theta in enumerate(cands.thetas):
        try:
            log_w[h] = gp.log_marginal_likelihood(D, theta)
        except LikelihoodUndefined:
            log_w[h] = -np.inf
    if not np.any(np.isfinite(log_w)):
        raise AllWeightsZero(f"all {len(log_w)} candidates have undefined likelihood")
    return log_w


def normalised_weights(log_weights) -> np.ndarray:
    """exp(log_w - max log_w), normalised to sum to one."""
    log_w = np.asarray(log_weights, dtype=np.float64)
    finite = np.isfinite(log_w)
    if not np.any(finite):
        raise AllWeightsZero("no finite log-weight")
    w = np.zeros_like(log_w)
    w[finite] = np.exp(log_w[finite] - np.max(log_w[finite]))
    return w / np.sum(w)


def weighted_mixture(log_weights, values: Sequence[np.ndarray]) -> np.ndarray:
    """
    (1/W) sum_h w_h a_h with a stable normalisation.

    Terms are accumulated in candidate-index order; zero-weight candidates are
    skipped so their values are never touched.
    """
    w = normalised_weights(log_weights)
    if len(values) != len(w):
        raise DimensionMismatch(f"{len(w)} weights for {len(values)} acquisition vectors")
    total = None
    for w_h, a_h in zip(w, values):
        if w_h == 0.0:
            continue
        term = w_h * np.asarray(a_h, dtype=np.float64)
        total = term if total is None else total + term
    return total


def plebo_acquisition(
    cands: CandidateSet,
    D: gp.Dataset,
    grid,
    base: AcquisitionSpec,
    best: float,
) -> np.ndarray:
    """
    Importance-weighted acquisition over hyperparameter candidates.

    Each candidate's base acquisition on ``grid`` is weighted by the marginal
    likelihood of the current task's data under that candidate.

    Raises:
        AllWeightsZero: if no candidate has a defined likelihood.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    if grid.shape[0] == 0:
        raise DimensionMismatch("plebo_acquisition needs a non-empty grid")
    log_w = candidate_log_weights(cands, D)
    values = []
    for theta, lw in zip(cands.thetas, log_w):
        if not np.isfinite(lw):
            values.append(None)
            continue
        values.append(base_acquisition(D, theta, grid, base, best))
    return weighted_mixture(log_w, values)
