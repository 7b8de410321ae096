"""
Zero-mean Gaussian-process regression with an RBF kernel.

Hyperparameters are optimised in log space:
``log_theta = (log lengthscale, log signal_variance)``; the noise variance is
fixed per run and never learned.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.spatial.distance import cdist, pdist

from plebo import numerics
from plebo.config import DEFAULT_CONFIG
from plebo.errors import DimensionMismatch, FitFailed, LikelihoodUndefined, NotPositiveDefinite
from plebo.schema import HyperParams, HyperPrior

LOG_2PI = float(np.log(2.0 * np.pi))
VARIANCE_EPS = 1e-6


@dataclass(frozen=True)
class Dataset:
    """Observed inputs ``X`` (n x d) and outputs ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if X.size == 0:
            X = X.reshape(0, X.shape[-1] if X.ndim == 2 else 0)
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} inputs but {y.shape[0]} outputs")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(X=np.zeros((0, d)), y=np.zeros(0))

    def union(self, other: "Dataset") -> "Dataset":
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        return Dataset(X=np.vstack([self.X, other.X]), y=np.concatenate([self.y, other.y]))


@dataclass(frozen=True)
class Prediction:
    """Pointwise posterior predictive mean and variance."""

    mean: np.ndarray
    variance: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass
class FitResult:
    """Best local optimum found by the multi-start optimiser, with per-restart traces."""

    theta: HyperParams
    objective: float
    traces: List[List[float]] = field(default_factory=list)


def rbf_kernel(tau, theta: HyperParams) -> float:
    """sigma_r^2 * exp(-tau^T tau / (2 l^2))."""
    tau = np.asarray(tau, dtype=np.float64).reshape(-1)
    return float(theta.signal_variance * np.exp(-(tau @ tau) / (2.0 * theta.lengthscale ** 2)))


def cross_kernel(XA, XB, theta: HyperParams) -> np.ndarray:
    """Noise-free kernel matrix between two point sets."""
    sq = cdist(np.atleast_2d(XA), np.atleast_2d(XB), metric="sqeuclidean")
    return theta.signal_variance * np.exp(-sq / (2.0 * theta.lengthscale ** 2))


def gram(D: Dataset, theta: HyperParams) -> np.ndarray:
    """K_ij = k(x_i - x_j) + noise_variance * [i == j]."""
    K = cross_kernel(D.X, D.X, theta)
    np.fill_diagonal(K, theta.signal_variance + theta.noise_variance)
    return K


def _factorise(D: Dataset, theta: HyperParams) -> numerics.CholeskyFactor:
    try:
        return numerics.cholesky(gram(D, theta))
    except NotPositiveDefinite as e:
        raise LikelihoodUndefined(str(e)) from e


def log_marginal_likelihood(D: Dataset, theta: HyperParams) -> float:
    """-1/2 y^T K^-1 y - 1/2 log|K| - n/2 log 2 pi."""
    if D.n == 0:
        return 0.0
    F = _factorise(D, theta)
    alpha = numerics.solve_chol(F, D.y)
    return float(-0.5 * D.y @ alpha - 0.5 * numerics.log_det(F) - 0.5 * D.n * LOG_2PI)


def lml_and_gradient(D: Dataset, theta: HyperParams) -> Tuple[float, np.ndarray]:
    """LML and its gradient with respect to (log l, log sigma_r^2)."""
    sq = cdist(D.X, D.X, metric="sqeuclidean")
    K_rbf = theta.signal_variance * np.exp(-sq / (2.0 * theta.lengthscale ** 2))
    K = K_rbf.copy()
    np.fill_diagonal(K, theta.signal_variance + theta.noise_variance)
    try:
        F = numerics.cholesky(K)
    except NotPositiveDefinite as e:
        raise LikelihoodUndefined(str(e)) from e
    alpha = numerics.solve_chol(F, D.y)
    K_inv = numerics.solve_chol(F, np.eye(D.n))
    lml = float(-0.5 * D.y @ alpha - 0.5 * numerics.log_det(F) - 0.5 * D.n * LOG_2PI)

    inner = np.outer(alpha, alpha) - K_inv
    dK_dlog_l = K_rbf * (sq / theta.lengthscale ** 2)
    dK_dlog_v = K_rbf
    grad = 0.5 * np.array([np.sum(inner * dK_dlog_l), np.sum(inner * dK_dlog_v)])
    return lml, grad


def lml_gradient(D: Dataset, theta: HyperParams) -> np.ndarray:
    """Gradient of the LML with respect to (log l, log sigma_r^2)."""
    return lml_and_gradient(D, theta)[1]


def posterior_predictive(D: Dataset, theta: HyperParams, X_star, include_noise: bool = False) -> Prediction:
    """
    GP conditional mean and variance at ``X_star``.

    An empty dataset returns the prior (mean 0, variance sigma_r^2).
    Variances are clamped at 0 against round-off.
    """
    X_star = np.atleast_2d(np.asarray(X_star, dtype=np.float64))
    noise = theta.noise_variance if include_noise else 0.0
    if D.n == 0:
        m = X_star.shape[0]
        return Prediction(mean=np.zeros(m), variance=np.full(m, theta.signal_variance + noise))

    F = _factorise(D, theta)
    alpha = numerics.solve_chol(F, D.y)
    K_star = cross_kernel(X_star, D.X, theta)
    mean = K_star @ alpha
    v = numerics.solve_lower(F, K_star.T)
    variance = np.maximum(theta.signal_variance - np.sum(v * v, axis=0), 0.0) + noise
    return Prediction(mean=mean, variance=variance)


def hyperparameter_box(datasets: Sequence[Dataset]) -> np.ndarray:
    """
    Log-space box [[log l_lo, log l_hi], [log v_lo, log v_hi]] that restarts start from.

    The lengthscale ranges from the smallest non-zero input spacing (at most a
    tenth of the diameter) to the input diameter; the signal variance from 0.01 to 100 times var(y).
    """
    spacings, diameters = [], []
    for D in datasets:
        if D.n >= 2:
            dist = pdist(D.X)
            positive = dist[dist > 0]
            if positive.size:
                # two points give one distance; keep the box non-degenerate
                spacings.append(min(positive.min(), positive.max() / 10.0))
                diameters.append(positive.max())
    spacing = min(spacings) if spacings else 1e-3
    diameter = max(diameters) if diameters else 1.0
    y_all = np.concatenate([D.y for D in datasets]) if datasets else np.zeros(1)
    var_y = float(np.var(y_all)) if y_all.size else 0.0
    return np.log([
        [spacing, max(diameter, spacing)],
        [0.01 * var_y + VARIANCE_EPS, 100.0 * var_y + VARIANCE_EPS],
    ])


def default_hyperparams(X, noise_variance: float = DEFAULT_CONFIG.gp.NOISE_VARIANCE) -> HyperParams:
    """Fallback hyperparameters for datasets too small to fit (l = diameter / 10, sigma_r^2 = 1)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    diameter = float(pdist(X).max()) if X.shape[0] >= 2 else 1.0
    return HyperParams(lengthscale=max(diameter, 1e-6) / 10.0, signal_variance=1.0, noise_variance=noise_variance)


def _gamma_log_prior_and_gradient(log_theta: np.ndarray, prior: HyperPrior) -> Tuple[float, np.ndarray]:
    from plebo.prior import gamma_logpdf

    l, v = np.exp(log_theta)
    value = gamma_logpdf(l, prior.l_shape, prior.l_scale) + gamma_logpdf(v, prior.v_shape, prior.v_scale)
    # d/dlog x of (k - 1) log x - x / s
    grad = np.array([(prior.l_shape - 1.0) - l / prior.l_scale, (prior.v_shape - 1.0) - v / prior.v_scale])
    return value, grad


def gradient_ascent(
    objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x0: np.ndarray,
    bounds: np.ndarray,
    max_iter: int = DEFAULT_CONFIG.gp.FIT_MAX_ITER,
    tol: float = DEFAULT_CONFIG.gp.FIT_TOL,
) -> Tuple[np.ndarray, float, List[float]]:
    """
    Projected gradient ascent with Armijo backtracking inside ``bounds``.

    Returns the final point, its objective and the accepted objective values;
    the trace is non-decreasing.
    """
    lo, hi = bounds[:, 0], bounds[:, 1]
    x = np.clip(np.asarray(x0, dtype=np.float64), lo, hi)
    f, g = objective(x)
    trace = [f]
    step = 1.0
    for _ in range(max_iter):
        if not np.all(np.isfinite(g)):
            break
        direction = g / max(1.0, float(np.max(np.abs(g))))
        t = step
        accepted = False
        for _ in range(40):
            x_new = np.clip(x + t * direction, lo, hi)
            if np.allclose(x_new, x, rtol=0.0, atol=1e-12):
                break
            try:
                f_new, g_new = objective(x_new)
            except LikelihoodUndefined:
                f_new, g_new = -np.inf, g
            if np.isfinite(f_new) and f_new >= f + 1e-4 * float(g @ (x_new - x)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        improvement = f_new - f
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        step = min(2.0 * t, 4.0)
        if improvement < tol * (1.0 + abs(f)):
            break
    return x, f, trace


def maximise_hyperparams(
    objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    box: np.ndarray,
    restarts: int,
    rng: np.random.Generator,
    noise_variance: float,
    margin: float = DEFAULT_CONFIG.gp.FIT_LOG_MARGIN,
) -> FitResult:
    """
    Multi-start ``gradient_ascent`` from log-uniform starting points in ``box``.

    The box only seeds the restarts; the ascent may leave it by up to
    ``margin`` in each log coordinate.
    """
    bounds = np.column_stack([box[:, 0] - margin, box[:, 1] + margin])
    best: Optional[Tuple[np.ndarray, float]] = None
    traces: List[List[float]] = []
    for restart in range(restarts):
        x0 = rng.uniform(box[:, 0], box[:, 1])
        try:
            x, f, trace = gradient_ascent(objective, x0, bounds)
        except LikelihoodUndefined:
            logger.debug(f"[fit] restart {restart} started from an undefined likelihood")
            continue
        traces.append(trace)
        if np.isfinite(f) and (best is None or f > best[1]):
            best = (x, f)
    if best is None:
        raise FitFailed(f"all {restarts} restarts failed")
    theta = HyperParams.from_log_array(best[0], noise_variance=noise_variance)
    return FitResult(theta=theta, objective=best[1], traces=traces)


def fit_map_result(
    D: Dataset,
    prior: Optional[HyperPrior] = None,
    restarts: int = DEFAULT_CONFIG.gp.FIT_RESTARTS,
    rng: Optional[np.random.Generator] = None,
    noise_variance: float = DEFAULT_CONFIG.gp.NOISE_VARIANCE,
) -> FitResult:
    """Like ``fit_map`` but also returns the objective value and optimiser traces."""
    if D.n < 2:
        raise FitFailed("fit_map needs at least two observations")
    if restarts < 1:
        raise FitFailed("restarts must be at least 1")
    rng = rng if rng is not None else np.random.default_rng()

    def objective(log_theta: np.ndarray) -> Tuple[float, np.ndarray]:
        theta = HyperParams.from_log_array(log_theta, noise_variance)
        value, grad = lml_and_gradient(D, theta)
        if prior is not None:
            p_value, p_grad = _gamma_log_prior_and_gradient(log_theta, prior)
            value, grad = value + p_value, grad + p_grad
        return value, grad

    return maximise_hyperparams(objective, hyperparameter_box([D]), restarts, rng, noise_variance)


def fit_map(
    D: Dataset,
    prior: Optional[HyperPrior] = None,
    restarts: int = DEFAULT_CONFIG.gp.FIT_RESTARTS,
    rng: Optional[np.random.Generator] = None,
    noise_variance: float = DEFAULT_CONFIG.gp.NOISE_VARIANCE,
) -> HyperParams:
    """
    Maximum-likelihood (or MAP, when ``prior`` is given) hyperparameters.

    Maximises LML(D, theta) + log Gamma(l; prior) + log Gamma(sigma_r^2; prior)
    over (log l, log sigma_r^2) from ``restarts`` random starting points.

    Raises:
        FitFailed: if every restart hits an undefined likelihood.
    """
    return fit_map_result(D, prior, restarts, rng, noise_variance).theta
