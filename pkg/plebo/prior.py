"""
Hierarchical prior learning over GP hyperparameters.

Model: p(eta) * prod_n Gamma(l_n; eta_l) Gamma(sigma2_n; eta_v) p(D_n | theta_n).

``run_mcmc`` samples (eta, theta_1..N) with adaptive random-walk
Metropolis-within-Gibbs on log coordinates, ``filter_samples`` drops stuck
draws and chains, and ``sample_candidates`` turns the eta posterior into the
candidate set used by the PLeBO acquisition.
"""

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy.special import gammaln
from tqdm import tqdm

from plebo import gp
from plebo.config import DEFAULT_CONFIG
from plebo.errors import DomainError, FitFailed, InferenceFailed, LikelihoodUndefined
from plebo.schema import CandidateSet, HyperParams, HyperPrior, McmcConfig, PosteriorSamples
from plebo.utils import spawn_seeds

LOG_2PI = float(np.log(2.0 * np.pi))
# eta moves need no likelihood evaluations, so several are made per sweep
ETA_UPDATES_PER_SWEEP = 5
TRACE_EVERY = 50


def gamma_logpdf(x: float, shape: float, scale: float) -> float:
    """(shape - 1) log x - x / scale - shape log scale - log Gamma(shape)."""
    if not x > 0:
        raise DomainError(f"gamma density is defined for x > 0, got {x}")
    return float((shape - 1.0) * np.log(x) - x / scale - shape * np.log(scale) - gammaln(shape))


def _gamma_logpdf_array(x: np.ndarray, shape, scale) -> np.ndarray:
    return (shape - 1.0) * np.log(x) - x / scale - shape * np.log(scale) - gammaln(shape)


def log_hyperprior(eta: HyperPrior, hyperprior_cfg: Optional[McmcConfig] = None) -> float:
    """
    Top-level log p(eta): independent log-normals on the four coordinates.

    ``None`` stands for a flat p(eta) and contributes 0.
    """
    if hyperprior_cfg is None:
        return 0.0
    return float(_log_hyperprior_array(np.log(eta.as_array()), hyperprior_cfg))


def _log_hyperprior_array(log_eta: np.ndarray, cfg: Optional[McmcConfig]) -> float:
    if cfg is None:
        return 0.0
    mu, s = cfg.hyperprior_log_median, cfg.hyperprior_log_scale
    z = (log_eta - mu) / s
    return float(np.sum(-log_eta - np.log(s) - 0.5 * LOG_2PI - 0.5 * z * z))


def log_joint(
    eta: HyperPrior,
    thetas: Sequence[HyperParams],
    datasets: Sequence[gp.Dataset],
    hyperprior_cfg: Optional[McmcConfig] = None,
) -> float:
    """
    log p(eta) + sum_n [log Gamma(l_n) + log Gamma(sigma2_n) + LML(D_n, theta_n)].

    Returns -inf when any marginal likelihood is undefined.
    """
    if len(thetas) != len(datasets) or not thetas:
        raise InferenceFailed("log_joint needs one theta per dataset and at least one task")
    total = log_hyperprior(eta, hyperprior_cfg)
    for theta, D in zip(thetas, datasets):
        total += gamma_logpdf(theta.lengthscale, eta.l_shape, eta.l_scale)
        total += gamma_logpdf(theta.signal_variance, eta.v_shape, eta.v_scale)
        try:
            total += gp.log_marginal_likelihood(D, theta)
        except LikelihoodUndefined:
            return float("-inf")
    return float(total)


@dataclass
class _ChainResult:
    chain: int
    log_eta: np.ndarray  # (S, 4)
    log_theta: np.ndarray  # (S, N, 2)
    log_joint: np.ndarray  # (S,)
    acceptance: Dict[str, float]
    scales: Dict[str, object]
    trace: List[Dict[str, float]] = field(default_factory=list)


class _Chain:
    """One Metropolis-within-Gibbs chain; internally sequential."""

    def __init__(self, chain: int, datasets: Sequence[gp.Dataset], cfg: McmcConfig,
                 log_theta0: np.ndarray, log_eta0: np.ndarray, seed: int):
        self.chain = chain
        self.datasets = datasets
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.N = len(datasets)
        self.log_theta = log_theta0.copy()
        self.log_eta = log_eta0.copy()
        self.lml = np.array([self._lml(n, self.log_theta[n]) for n in range(self.N)])
        self.log_scale_eta = np.log(cfg.proposal_scale)
        self.log_scale_theta = np.full(self.N, np.log(cfg.proposal_scale))
        self.accepted = {"eta": 0, "theta": 0}
        self.proposed = {"eta": 0, "theta": 0}

    def _lml(self, n: int, log_theta_n: np.ndarray) -> float:
        l, v = np.exp(log_theta_n)
        if not (np.isfinite(l) and np.isfinite(v) and l > 0 and v > 0):
            return float("-inf")
        theta = HyperParams(lengthscale=l, signal_variance=v, noise_variance=self.cfg.noise_variance)
        try:
            return gp.log_marginal_likelihood(self.datasets[n], theta)
        except LikelihoodUndefined:
            return float("-inf")

    def _gamma_terms(self, log_eta: np.ndarray, log_theta: np.ndarray) -> np.ndarray:
        """Per-task log Gamma(l_n) + log Gamma(sigma2_n); log_theta is (N, 2) or (2,)."""
        a, b, c, d = np.exp(log_eta)
        log_theta = np.atleast_2d(log_theta)
        x = np.exp(log_theta)
        return _gamma_logpdf_array(x[:, 0], a, b) + _gamma_logpdf_array(x[:, 1], c, d)

    def log_joint(self) -> float:
        eta_term = _log_hyperprior_array(self.log_eta, self.cfg)
        return float(eta_term + np.sum(self._gamma_terms(self.log_eta, self.log_theta)) + np.sum(self.lml))

    def _update_eta(self, adapt_step: Optional[float]) -> None:
        proposal = self.log_eta + np.exp(self.log_scale_eta) * self.rng.standard_normal(4)
        accept = False
        if np.all(np.isfinite(np.exp(proposal))) and np.all(np.exp(proposal) > 0):
            # log_eta.sum() is the change-of-variables term of the log-coordinate walk
            new = (_log_hyperprior_array(proposal, self.cfg) + proposal.sum()
                   + np.sum(self._gamma_terms(proposal, self.log_theta)))
            old = (_log_hyperprior_array(self.log_eta, self.cfg) + self.log_eta.sum()
                   + np.sum(self._gamma_terms(self.log_eta, self.log_theta)))
            log_ratio = new - old
            accept = np.isfinite(new) and np.log(self.rng.uniform()) < log_ratio
        else:
            self.rng.uniform()
        if accept:
            self.log_eta = proposal
        self.proposed["eta"] += 1
        self.accepted["eta"] += int(accept)
        if adapt_step is not None:
            self.log_scale_eta += adapt_step * (float(accept) - self.cfg.adapt_target)

    def _update_theta(self, n: int, adapt_step: Optional[float]) -> None:
        current = self.log_theta[n]
        proposal = current + np.exp(self.log_scale_theta[n]) * self.rng.standard_normal(2)
        lml_new = self._lml(n, proposal)
        accept = False
        if np.isfinite(lml_new):
            new = self._gamma_terms(self.log_eta, proposal)[0] + lml_new + proposal.sum()
            old = self._gamma_terms(self.log_eta, current)[0] + self.lml[n] + current.sum()
            log_ratio = new - old if np.isfinite(old) else np.inf
            accept = np.log(self.rng.uniform()) < log_ratio
        else:
            self.rng.uniform()
        if accept:
            self.log_theta[n] = proposal
            self.lml[n] = lml_new
        self.proposed["theta"] += 1
        self.accepted["theta"] += int(accept)
        if adapt_step is not None:
            self.log_scale_theta[n] += adapt_step * (float(accept) - self.cfg.adapt_target)

    def sweep(self, adapt_step: Optional[float]) -> None:
        for _ in range(ETA_UPDATES_PER_SWEEP):
            self._update_eta(adapt_step)
        for n in range(self.N):
            self._update_theta(n, adapt_step)

    def run(self, progress: Optional[tqdm] = None) -> _ChainResult:
        cfg = self.cfg
        trace: List[Dict[str, float]] = []
        for t in range(cfg.n_warmup):
            # Robbins-Monro gain, warmup only
            self.sweep(adapt_step=1.0 / (t + 1.0) ** 0.6)
            if t % TRACE_EVERY == 0 or t == cfg.n_warmup - 1:
                trace.append({
                    "iteration": t,
                    "eta_scale": float(np.exp(self.log_scale_eta)),
                    "theta_scale_mean": float(np.mean(np.exp(self.log_scale_theta))),
                })
            if progress is not None:
                progress.update(1)

        # Proposal scales are frozen from here on
        self.accepted = {"eta": 0, "theta": 0}
        self.proposed = {"eta": 0, "theta": 0}
        S = cfg.n_samples_per_chain
        log_eta = np.empty((S, 4))
        log_theta = np.empty((S, self.N, 2))
        values = np.empty(S)
        for s in range(S):
            self.sweep(adapt_step=None)
            log_eta[s] = self.log_eta
            log_theta[s] = self.log_theta
            values[s] = self.log_joint()
            if progress is not None:
                progress.update(1)

        acceptance = {k: self.accepted[k] / max(self.proposed[k], 1) for k in self.accepted}
        scales = {
            "eta": float(np.exp(self.log_scale_eta)),
            "theta": [float(s) for s in np.exp(self.log_scale_theta)],
        }
        return _ChainResult(self.chain, log_eta, log_theta, values, acceptance, scales, trace)


def _run_chain(chain: _Chain) -> _ChainResult:
    return chain.run()


def _moment_eta(values: np.ndarray) -> np.ndarray:
    """Gamma (shape, scale) matching the mean and variance of ``values``."""
    m = float(np.mean(values))
    var = float(np.var(values))
    if values.size < 2 or var <= 1e-12 * m * m:
        return np.array([2.0, m / 2.0])
    return np.array([m * m / var, var / m])


def _initial_state(datasets: Sequence[gp.Dataset], cfg: McmcConfig, seed: int):
    """Per-task ML fits shared by all chains, plus a moment-matched eta."""
    rng = np.random.default_rng(seed)
    log_theta = np.empty((len(datasets), 2))
    for n, D in enumerate(datasets):
        try:
            theta = gp.fit_map(D, restarts=3, rng=rng, noise_variance=cfg.noise_variance)
        except FitFailed:
            logger.warning(f"[run_mcmc] ML fit failed for tuning task {n}; starting from defaults")
            theta = gp.default_hyperparams(D.X, cfg.noise_variance)
        log_theta[n] = theta.log_array()
    x = np.exp(log_theta)
    log_eta = np.log(np.concatenate([_moment_eta(x[:, 0]), _moment_eta(x[:, 1])]))
    return log_theta, log_eta


def run_mcmc(
    datasets: Sequence[gp.Dataset],
    cfg: McmcConfig,
    jobs: int = 1,
    progress: bool = False,
) -> PosteriorSamples:
    """
    Sample the hierarchical posterior with ``cfg.n_chains`` independent chains.

    Every chain starts near per-task ML fits, adapts its proposal scales toward
    ``cfg.adapt_target`` during warmup and keeps them frozen afterwards. Pooled
    draws are passed through ``filter_samples``.
    With ``jobs > 1`` the chains run in separate processes.

    Raises:
        InferenceFailed: if fewer than n_chains * n_samples_per_chain / 10
            draws survive filtering.
    """
    if not datasets:
        raise InferenceFailed("run_mcmc needs at least one tuning dataset")
    for n, D in enumerate(datasets):
        if D.n < 2:
            raise InferenceFailed(f"tuning dataset {n} has {D.n} points; at least 2 are required")

    init_seed, *chain_seeds = spawn_seeds(cfg.seed, cfg.n_chains + 1)
    log_theta0, log_eta0 = _initial_state(datasets, cfg, init_seed)
    logger.info(
        f"[run_mcmc] {cfg.n_chains} chains x ({cfg.n_warmup} warmup + {cfg.n_samples_per_chain} draws) "
        f"over {len(datasets)} tuning tasks"
    )

    chains = []
    for c, seed in enumerate(chain_seeds):
        jitter = np.random.default_rng(seed + 1)
        start_theta = log_theta0 + 0.1 * jitter.standard_normal(log_theta0.shape)
        start_eta = log_eta0 + 0.1 * jitter.standard_normal(4)
        chains.append(_Chain(c, datasets, cfg, start_theta, start_eta, seed))

    total = cfg.n_chains * (cfg.n_warmup + cfg.n_samples_per_chain)
    bar = tqdm(total=total, desc="MCMC", unit="sweep", disable=not progress)
    results: Dict[int, _ChainResult] = {}
    try:
        if jobs > 1 and len(chains) > 1:
            # chains are pickled with their generator state, so draws match the serial path
            with ProcessPoolExecutor(max_workers=min(jobs, len(chains))) as executor:
                futures = {executor.submit(_run_chain, chain): chain.chain for chain in chains}
                for future in as_completed(futures):
                    result = future.result()
                    results[result.chain] = result
                    bar.update(cfg.n_warmup + cfg.n_samples_per_chain)
        else:
            for chain in chains:
                results[chain.chain] = chain.run(bar)
    finally:
        bar.close()

    raw = _pool(results, datasets, cfg)
    post = filter_samples(raw, keep_fraction=cfg.keep_fraction)
    minimum = cfg.n_chains * cfg.n_samples_per_chain / 10.0
    if post.n_draws < minimum:
        raise InferenceFailed(
            f"only {post.n_draws} draws survived filtering (need {minimum:.0f}); "
            f"{post.n_filtered} removed, chains kept: {sorted(set(post.chain_ids))}"
        )
    logger.info(f"[run_mcmc] kept {post.n_draws} draws, filtered {post.n_filtered}")
    return post


def _pool(results: Dict[int, _ChainResult], datasets: Sequence[gp.Dataset], cfg: McmcConfig) -> PosteriorSamples:
    """Concatenate chains in chain order into one PosteriorSamples."""
    eta_draws: List[HyperPrior] = []
    theta_draws: List[List[HyperParams]] = [[] for _ in datasets]
    chain_ids: List[int] = []
    values: List[float] = []
    chain_lengths: Dict[int, int] = {}
    per_chain = {}
    for c in sorted(results):
        r = results[c]
        chain_lengths[c] = len(r.log_joint)
        per_chain[str(c)] = {"acceptance": r.acceptance, "final_scales": r.scales, "adaptation_trace": r.trace}
        for s in range(len(r.log_joint)):
            eta_draws.append(HyperPrior.from_array(np.exp(r.log_eta[s])))
            for n in range(len(datasets)):
                theta_draws[n].append(HyperParams.from_log_array(r.log_theta[s, n], cfg.noise_variance))
            chain_ids.append(c)
            values.append(float(r.log_joint[s]))

    log_eta = {c: results[c].log_eta for c in results}
    diagnostics = {"chains": per_chain, "split_rhat_log_eta": split_rhat(list(log_eta.values()))}
    return PosteriorSamples(
        eta_draws=eta_draws,
        theta_draws=theta_draws,
        chain_ids=chain_ids,
        log_joint_values=values,
        chain_lengths=chain_lengths,
        seed=cfg.seed,
        diagnostics=diagnostics,
    )


def split_rhat(chains: List[np.ndarray]) -> Optional[List[float]]:
    """
    Split-R-hat per coordinate for a list of (S, k) chain arrays.

    Returns None when there are too few draws to split.
    """
    halves = []
    for x in chains:
        x = np.asarray(x)
        half = x.shape[0] // 2
        if half < 2:
            return None
        halves.extend([x[:half], x[half:2 * half]])
    m = len(halves)
    n = halves[0].shape[0]
    stacked = np.stack(halves)  # (m, n, k)
    chain_means = stacked.mean(axis=1)
    within = stacked.var(axis=1, ddof=1).mean(axis=0)
    between = n * chain_means.var(axis=0, ddof=1) if m > 1 else np.zeros(stacked.shape[2])
    var_hat = (n - 1) / n * within + between / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_hat / within)
    return [float(v) for v in rhat]


def filter_samples(raw: PosteriorSamples, keep_fraction: float = DEFAULT_CONFIG.mcmc.CHAIN_KEEP_FRACTION) -> PosteriorSamples:
    """
    Drop draws with non-finite log_joint, then whole chains keeping less than
    ``keep_fraction`` of the draws they originally produced.

    Raises:
        InferenceFailed: if nothing remains.
    """
    values = np.asarray(raw.log_joint_values, dtype=np.float64)
    chain_ids = np.asarray(raw.chain_ids)
    keep = np.isfinite(values)

    chain_lengths = dict(raw.chain_lengths)
    removed_chains = []
    for c in np.unique(chain_ids):
        c = int(c)
        original = chain_lengths.setdefault(c, int(np.sum(chain_ids == c)))
        retained = int(np.sum(keep & (chain_ids == c)))
        if original and retained / original < keep_fraction:
            keep &= chain_ids != c
            removed_chains.append(c)

    if not np.any(keep):
        raise InferenceFailed("no draws survived filtering")
    if np.all(keep):
        return raw.model_copy(update={"chain_lengths": chain_lengths})

    idx = np.flatnonzero(keep)
    diagnostics = dict(raw.diagnostics)
    if removed_chains:
        diagnostics["removed_chains"] = sorted(set(diagnostics.get("removed_chains", [])) | set(removed_chains))
        logger.warning(f"[filter_samples] removed chains {removed_chains}")
    return PosteriorSamples(
        eta_draws=[raw.eta_draws[i] for i in idx],
        theta_draws=[[per_task[i] for i in idx] for per_task in raw.theta_draws],
        chain_ids=[raw.chain_ids[i] for i in idx],
        log_joint_values=[raw.log_joint_values[i] for i in idx],
        chain_lengths=chain_lengths,
        n_filtered=raw.n_filtered + int(values.size - idx.size),
        seed=raw.seed,
        diagnostics=diagnostics,
    )


def sample_candidates(
    post: PosteriorSamples,
    H: int = DEFAULT_CONFIG.acquisition.N_CANDIDATES,
    seed: int = 0,
    noise_variance: float = DEFAULT_CONFIG.gp.NOISE_VARIANCE,
) -> CandidateSet:
    """
    Draw H hyperparameter candidates: for each, pick an eta uniformly from the
    posterior draws, then l ~ Gamma(l_shape, l_scale) and
    sigma_r^2 ~ Gamma(v_shape, v_scale).
    """
    if post.n_draws == 0:
        raise InferenceFailed("cannot sample candidates from an empty posterior")
    if H < 1:
        raise DomainError("H must be at least 1")
    rng = np.random.default_rng(seed)
    etas = np.array([eta.as_array() for eta in post.eta_draws])
    picks = etas[rng.integers(0, len(etas), size=H)]
    tiny = np.finfo(np.float64).tiny
    lengthscales = np.maximum(rng.gamma(picks[:, 0], picks[:, 1]), tiny)
    variances = np.maximum(rng.gamma(picks[:, 2], picks[:, 3]), tiny)
    thetas = [
        HyperParams(lengthscale=float(l), signal_variance=float(v), noise_variance=noise_variance)
        for l, v in zip(lengthscales, variances)
    ]
    return CandidateSet(thetas=thetas, source_seed=seed)


def summarize_eta(post: PosteriorSamples) -> HyperPrior:
    """Coordinate-wise posterior mean of eta."""
    if post.n_draws == 0:
        raise InferenceFailed("cannot summarise an empty posterior")
    return HyperPrior.from_array(np.mean([eta.as_array() for eta in post.eta_draws], axis=0))


def posterior_mean_thetas(post: PosteriorSamples, noise_variance: Optional[float] = None) -> List[HyperParams]:
    """Posterior mean (l, sigma_r^2) for each tuning task."""
    means = []
    for per_task in post.theta_draws:
        arr = np.array([[t.lengthscale, t.signal_variance] for t in per_task])
        noise = per_task[0].noise_variance if noise_variance is None else noise_variance
        l, v = arr.mean(axis=0)
        means.append(HyperParams(lengthscale=float(l), signal_variance=float(v), noise_variance=noise))
    return means
