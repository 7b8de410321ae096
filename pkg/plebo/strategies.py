"""
Optimisation strategies behind a single ``propose_next`` interface.

No transfer: RandomSearch, EI, UCB. Direct transfer: DirectTrans, Initial.
Prior transfer: PLeBO, TruePLeBO, Gamma, Shared.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger

from plebo import gp
from plebo.acquisition import base_acquisition, plebo_acquisition
from plebo.config import DEFAULT_CONFIG
from plebo.errors import FitFailed, NoUnobservedPoints
from plebo.schema import AcquisitionSpec, HyperParams, StrategyConfig, StrategyKind

EI_SPEC = AcquisitionSpec(kind="EI")
TIE_TOL = DEFAULT_CONFIG.acquisition.TIE_TOL


@dataclass
class StrategyState:
    """Task-local observations and per-run strategy bookkeeping."""

    indices: List[int] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    iteration: int = 0
    theta: Optional[HyperParams] = None
    initial_consumed: int = 0
    fit_calls: int = 0

    def observe(self, index: int, value: float) -> None:
        if index in self.indices:
            raise ValueError(f"grid index {index} already observed")
        self.indices.append(int(index))
        self.values.append(float(value))

    def dataset(self, grid: np.ndarray) -> gp.Dataset:
        if not self.indices:
            return gp.Dataset.empty(grid.shape[1])
        return gp.Dataset(X=grid[self.indices], y=np.asarray(self.values))

    def unobserved(self, n_points: int) -> np.ndarray:
        mask = np.ones(n_points, dtype=bool)
        mask[self.indices] = False
        return np.flatnonzero(mask)


def argmax_random_tie(scores: np.ndarray, rng: np.random.Generator, tol: float = TIE_TOL) -> int:
    """Position of the maximum; uniform among positions within ``tol`` of it."""
    scores = np.where(np.isnan(scores), -np.inf, scores)
    top = np.max(scores)
    ties = np.flatnonzero(scores >= top - tol)
    if ties.size == 1:
        return int(ties[0])
    return int(rng.choice(ties))


def _nearest_unobserved(point: Sequence[float], grid: np.ndarray, unobserved: np.ndarray) -> int:
    dist = np.sum((grid[unobserved] - np.asarray(point, dtype=np.float64)) ** 2, axis=1)
    return int(unobserved[int(np.argmin(dist))])


def _fitted_theta(
    cfg: StrategyConfig,
    state: StrategyState,
    D: gp.Dataset,
    grid: np.ndarray,
    rng: np.random.Generator,
    use_prior: bool = False,
) -> HyperParams:
    """Refit every ``cfg.refit_every`` proposals, otherwise reuse the cached fit."""
    prior = cfg.eta_mean if use_prior else None
    if D.n < 2:
        if prior is not None:
            return prior.mean_hyperparams(cfg.noise_variance)
        return gp.default_hyperparams(grid, cfg.noise_variance)
    if state.theta is not None and state.iteration % cfg.refit_every != 0:
        return state.theta
    try:
        state.fit_calls += 1
        state.theta = gp.fit_map(D, prior=prior, restarts=cfg.fit_restarts, rng=rng,
                                 noise_variance=cfg.noise_variance)
    except FitFailed as e:
        logger.warning(f"[propose_next] {cfg.kind.value} fit failed ({e}); reusing previous hyperparameters")
        if state.theta is None:
            state.theta = gp.default_hyperparams(grid, cfg.noise_variance)
    return state.theta


def _scores(
    cfg: StrategyConfig,
    state: StrategyState,
    grid: np.ndarray,
    candidates_idx: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    D = state.dataset(grid)
    best = float(np.max(D.y)) if D.n else 0.0
    points = grid[candidates_idx]
    kind = cfg.kind

    if kind == StrategyKind.PLEBO:
        return plebo_acquisition(cfg.candidates, D, points, EI_SPEC, best)
    if kind == StrategyKind.TRUE_PLEBO:
        return base_acquisition(D, cfg.true_theta, points, EI_SPEC, best)
    if kind == StrategyKind.SHARED:
        return base_acquisition(D, cfg.shared_theta, points, EI_SPEC, best)
    if kind == StrategyKind.DIRECT_TRANS:
        pool = cfg.transfer_pool
        union = pool.union(D)
        theta = _fitted_theta(cfg, state, union, grid, rng)
        incumbent = best if D.n else float(np.max(pool.y))
        return base_acquisition(union, theta, points, EI_SPEC, incumbent)
    if kind == StrategyKind.GAMMA:
        theta = _fitted_theta(cfg, state, D, grid, rng, use_prior=True)
        return base_acquisition(D, theta, points, EI_SPEC, best)
    # EI, UCB and Initial once its replay list is used up
    theta = _fitted_theta(cfg, state, D, grid, rng)
    return base_acquisition(D, theta, points, cfg.base_acquisition, best)


def propose_next(
    cfg: StrategyConfig,
    state: StrategyState,
    grid,
    rng: np.random.Generator,
) -> int:
    """
    Choose the next grid index to evaluate; never an observed one.

    Raises:
        NoUnobservedPoints: if every grid index has been observed.
        ConfigError: if the field required by ``cfg.kind`` is missing.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    cfg.check_required()
    unobserved = state.unobserved(grid.shape[0])
    if unobserved.size == 0:
        raise NoUnobservedPoints(f"all {grid.shape[0]} grid points observed")

    if cfg.kind == StrategyKind.RANDOM_SEARCH:
        choice = int(rng.choice(unobserved))
    elif cfg.kind == StrategyKind.INITIAL and state.initial_consumed < len(cfg.initial_points):
        choice = _nearest_unobserved(cfg.initial_points[state.initial_consumed], grid, unobserved)
        state.initial_consumed += 1
    else:
        scores = _scores(cfg, state, grid, unobserved, rng)
        choice = int(unobserved[argmax_random_tie(scores, rng)])

    state.iteration += 1
    return choice


def fit_shared(
    datasets: Sequence[gp.Dataset],
    restarts: int = DEFAULT_CONFIG.gp.FIT_RESTARTS,
    rng: Optional[np.random.Generator] = None,
    noise_variance: float = DEFAULT_CONFIG.gp.NOISE_VARIANCE,
) -> HyperParams:
    """
    One set of hyperparameters maximising sum_n LML(D_n, theta).

    Raises:
        FitFailed: if every restart fails.
    """
    if not datasets:
        raise FitFailed("fit_shared needs at least one dataset")
    rng = rng if rng is not None else np.random.default_rng()
    usable = [D for D in datasets if D.n > 0]

    def objective(log_theta: np.ndarray):
        theta = HyperParams.from_log_array(log_theta, noise_variance)
        total, grad = 0.0, np.zeros(2)
        for D in usable:
            value, g = gp.lml_and_gradient(D, theta)
            total += value
            grad += g
        return total, grad

    box = gp.hyperparameter_box(usable)
    return gp.maximise_hyperparams(objective, box, restarts, rng, noise_variance).theta


def _stratified_allocation(sizes: Sequence[int], cap: int) -> List[int]:
    """Equal share per task, remainder round-robin by task index, small tasks taken whole."""
    alloc = [0] * len(sizes)
    active = [n for n, size in enumerate(sizes) if size > 0]
    remaining = cap
    while remaining > 0 and active:
        share, extra = divmod(remaining, len(active))
        for position, n in enumerate(active):
            want = share + (1 if position < extra else 0)
            alloc[n] += min(want, sizes[n] - alloc[n])
        remaining = cap - sum(alloc)
        active = [n for n in active if alloc[n] < sizes[n]]
    return alloc


def build_transfer_pool(datasets: Sequence[gp.Dataset], cap: int, rng: np.random.Generator) -> gp.Dataset:
    """
    Past evaluations for DirectTrans: everything when at most ``cap`` exist,
    otherwise ``cap`` evaluations sampled without replacement, stratified per task.
    """
    if cap < 1:
        raise ValueError("cap must be at least 1")
    d = next((D.d for D in datasets if D.n), 2)
    pool = gp.Dataset.empty(d)
    sizes = [D.n for D in datasets]
    if sum(sizes) <= cap:
        for D in datasets:
            pool = pool.union(D)
        return pool
    for D, k in zip(datasets, _stratified_allocation(sizes, cap)):
        if k == 0:
            continue
        idx = np.sort(rng.choice(D.n, size=k, replace=False))
        pool = pool.union(gp.Dataset(X=D.X[idx], y=D.y[idx]))
    return pool


def extract_initial_points(datasets: Sequence[gp.Dataset]) -> List[List[float]]:
    """Best observed input of each tuning task, by descending value (ties: task order)."""
    best = []
    for n, D in enumerate(datasets):
        i = int(np.argmax(D.y))
        best.append((-float(D.y[i]), n, D.X[i].tolist()))
    return [point for _, _, point in sorted(best, key=lambda item: (item[0], item[1]))]
