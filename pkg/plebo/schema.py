"""
Schema definitions for configured and serialised plebo types.

Numeric containers that live in inner loops (datasets, predictions, grid tasks)
are dataclasses in their own modules; everything that is configured by the
user or written to disk is defined here.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from plebo.config import DEFAULT_CONFIG
from plebo.errors import ConfigError

# ============================================================================
# Hyperparameters
# ============================================================================

class HyperParams(BaseModel):
    """
    Kernel hyperparameters of one task's GP surrogate.

    Serialised with the short keys ``l``, ``v`` and ``noise``.
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lengthscale: float = Field(..., gt=0, allow_inf_nan=False, alias="l", description="RBF lengthscale")
    signal_variance: float = Field(..., gt=0, allow_inf_nan=False, alias="v", description="Signal variance")
    noise_variance: float = Field(
        DEFAULT_CONFIG.gp.NOISE_VARIANCE, ge=0, allow_inf_nan=False, alias="noise",
        description="Fixed observation noise variance",
    )

    def log_array(self) -> np.ndarray:
        """(log l, log signal variance)."""
        return np.log([self.lengthscale, self.signal_variance])

    @classmethod
    def from_log_array(cls, log_theta, noise_variance: float) -> "HyperParams":
        l, v = np.exp(np.asarray(log_theta, dtype=np.float64))
        return cls(lengthscale=float(l), signal_variance=float(v), noise_variance=noise_variance)


class HyperPrior(BaseModel):
    """Shape/scale parameters of the gamma distributions generating HyperParams."""
    model_config = ConfigDict(frozen=True)

    l_shape: float = Field(..., gt=0, allow_inf_nan=False, description="Lengthscale gamma shape")
    l_scale: float = Field(..., gt=0, allow_inf_nan=False, description="Lengthscale gamma scale")
    v_shape: float = Field(..., gt=0, allow_inf_nan=False, description="Signal variance gamma shape")
    v_scale: float = Field(..., gt=0, allow_inf_nan=False, description="Signal variance gamma scale")

    def as_array(self) -> np.ndarray:
        return np.array([self.l_shape, self.l_scale, self.v_shape, self.v_scale], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "HyperPrior":
        a, b, c, d = (float(x) for x in values)
        return cls(l_shape=a, l_scale=b, v_shape=c, v_scale=d)

    @property
    def lengthscale_mean(self) -> float:
        return self.l_shape * self.l_scale

    @property
    def variance_mean(self) -> float:
        return self.v_shape * self.v_scale

    def mean_hyperparams(self, noise_variance: float = DEFAULT_CONFIG.gp.NOISE_VARIANCE) -> HyperParams:
        return HyperParams(
            lengthscale=self.lengthscale_mean,
            signal_variance=self.variance_mean,
            noise_variance=noise_variance,
        )

# ============================================================================
# Prior inference
# ============================================================================

class McmcConfig(BaseModel):
    """Settings of the Metropolis-within-Gibbs sampler."""
    model_config = ConfigDict(extra="forbid")

    n_chains: int = Field(DEFAULT_CONFIG.mcmc.CHAINS, ge=1)
    n_warmup: int = Field(DEFAULT_CONFIG.mcmc.WARMUP, ge=0)
    n_samples_per_chain: int = Field(DEFAULT_CONFIG.mcmc.SAMPLES, ge=1)
    proposal_scale: float = Field(DEFAULT_CONFIG.mcmc.PROPOSAL_SCALE, gt=0, description="Initial log-space step")
    adapt_target: float = Field(DEFAULT_CONFIG.mcmc.ADAPT_TARGET, gt=0, lt=1)
    seed: int = Field(DEFAULT_CONFIG.runner.SEED, ge=0)
    hyperprior_log_median: float = Field(0.0, description="Log-median of the log-normal p(eta)")
    hyperprior_log_scale: float = Field(DEFAULT_CONFIG.mcmc.HYPERPRIOR_LOG_SCALE, gt=0)
    keep_fraction: float = Field(DEFAULT_CONFIG.mcmc.CHAIN_KEEP_FRACTION, ge=0, le=1)
    noise_variance: float = Field(DEFAULT_CONFIG.gp.NOISE_VARIANCE, ge=0)


class CandidateSet(BaseModel):
    """H hyperparameter candidates drawn from the learned prior."""

    thetas: List[HyperParams] = Field(..., min_length=1)
    source_seed: int = Field(0, ge=0, alias="seed")
    model_config = ConfigDict(populate_by_name=True)

    def __len__(self) -> int:
        return len(self.thetas)

    def to_json(self) -> Dict[str, Any]:
        return {
            "thetas": [theta.model_dump(by_alias=True) for theta in self.thetas],
            "seed": self.source_seed,
        }


class PosteriorSamples(BaseModel):
    """
    Pooled post-warmup MCMC draws.

    ``theta_draws[n][k]`` is the draw ``k`` of tuning task ``n``; it is aligned
    with ``eta_draws[k]``, ``chain_ids[k]`` and ``log_joint_values[k]``.
    ``chain_lengths[c]`` is the number of draws chain ``c`` produced before any
    filtering, which keeps ``filter_samples`` idempotent.
    """

    eta_draws: List[HyperPrior]
    theta_draws: List[List[HyperParams]]
    chain_ids: List[int]
    log_joint_values: List[float]
    chain_lengths: Dict[int, int] = Field(default_factory=dict)
    n_filtered: int = 0
    seed: int = 0
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _aligned(self) -> "PosteriorSamples":
        k = len(self.eta_draws)
        if len(self.chain_ids) != k or len(self.log_joint_values) != k:
            raise ValueError("eta_draws, chain_ids and log_joint_values must be aligned")
        for per_task in self.theta_draws:
            if len(per_task) != k:
                raise ValueError("theta_draws must be aligned with eta_draws")
        return self

    @property
    def n_draws(self) -> int:
        return len(self.eta_draws)

    @property
    def n_tasks(self) -> int:
        return len(self.theta_draws)

    def to_json(self) -> Dict[str, Any]:
        return {
            "eta_draws": [eta.model_dump() for eta in self.eta_draws],
            "theta_draws": [[theta.model_dump(by_alias=True) for theta in per_task] for per_task in self.theta_draws],
            "log_joint": self.log_joint_values,
            "chains": self.chain_ids,
            "chain_lengths": {str(c): n for c, n in self.chain_lengths.items()},
            "n_filtered": self.n_filtered,
            "seed": self.seed,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> "PosteriorSamples":
        return cls(
            eta_draws=payload["eta_draws"],
            theta_draws=payload["theta_draws"],
            chain_ids=payload["chains"],
            log_joint_values=payload["log_joint"],
            chain_lengths={int(c): n for c, n in payload.get("chain_lengths", {}).items()},
            n_filtered=payload.get("n_filtered", 0),
            seed=payload.get("seed", 0),
            diagnostics=payload.get("diagnostics", {}),
        )

# ============================================================================
# Acquisition and strategies
# ============================================================================

class AcquisitionSpec(BaseModel):
    """Base acquisition function selection."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["EI", "UCB"] = Field("EI", description="Base acquisition function")
    ucb_beta: float = Field(DEFAULT_CONFIG.acquisition.UCB_BETA, gt=0, description="UCB exploration weight")


class StrategyKind(str, Enum):
    RANDOM_SEARCH = "RandomSearch"
    EI = "EI"
    UCB = "UCB"
    DIRECT_TRANS = "DirectTrans"
    INITIAL = "Initial"
    PLEBO = "PLeBO"
    TRUE_PLEBO = "TruePLeBO"
    GAMMA = "Gamma"
    SHARED = "Shared"


# Which optional StrategyConfig field each kind cannot run without
REQUIRED_FIELD = {
    StrategyKind.PLEBO: "candidates",
    StrategyKind.GAMMA: "eta_mean",
    StrategyKind.SHARED: "shared_theta",
    StrategyKind.TRUE_PLEBO: "true_theta",
    StrategyKind.DIRECT_TRANS: "transfer_pool",
    StrategyKind.INITIAL: "initial_points",
}


class StrategyConfig(BaseModel):
    """Immutable description of one optimisation strategy."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    kind: StrategyKind
    candidates: Optional[CandidateSet] = None
    eta_mean: Optional[HyperPrior] = None
    shared_theta: Optional[HyperParams] = None
    true_theta: Optional[HyperParams] = None
    transfer_pool: Optional[Any] = Field(None, description="plebo.gp.Dataset of past evaluations")
    initial_points: Optional[List[List[float]]] = None
    refit_every: int = Field(1, ge=1)
    ucb_beta: float = Field(DEFAULT_CONFIG.acquisition.UCB_BETA, gt=0)
    fit_restarts: int = Field(DEFAULT_CONFIG.gp.FIT_RESTARTS, ge=1)
    noise_variance: float = Field(DEFAULT_CONFIG.gp.NOISE_VARIANCE, ge=0)

    @model_validator(mode="after")
    def _required_present(self) -> "StrategyConfig":
        self.check_required()
        return self

    def check_required(self) -> None:
        field = REQUIRED_FIELD.get(self.kind)
        if field is not None and getattr(self, field) is None:
            raise ConfigError(f"strategy {self.kind.value} requires '{field}'")

    @property
    def base_acquisition(self) -> AcquisitionSpec:
        if self.kind == StrategyKind.UCB:
            return AcquisitionSpec(kind="UCB", ucb_beta=self.ucb_beta)
        return AcquisitionSpec(kind="EI", ucb_beta=self.ucb_beta)

# ============================================================================
# Benchmarks
# ============================================================================

class SuiteConfig(BaseModel):
    """Synthetic hierarchical benchmark definition."""
    model_config = ConfigDict(extra="forbid")

    n_tuning: int = Field(DEFAULT_CONFIG.benchmark.N_TUNING, ge=1)
    n_test: int = Field(DEFAULT_CONFIG.benchmark.N_TEST, ge=0)
    tuning_evals: int = Field(DEFAULT_CONFIG.benchmark.TUNING_EVALS, ge=1)
    n_start: int = Field(DEFAULT_CONFIG.benchmark.N_START, ge=0)
    grid_side: int = Field(DEFAULT_CONFIG.benchmark.GRID_SIDE, ge=1)
    domain: Tuple[Tuple[float, float], Tuple[float, float]] = Field(((0.0, 1.0), (0.0, 1.0)))
    l_prior: Tuple[float, float] = Field((5.0, 0.01), description="(shape, scale) of the lengthscale gamma")
    v_prior: Tuple[float, float] = Field((2.0, 2.0), description="(shape, scale) of the signal variance gamma")
    noise_variance: float = Field(DEFAULT_CONFIG.gp.NOISE_VARIANCE, ge=0)
    seed: int = Field(DEFAULT_CONFIG.runner.SEED, ge=0)

    @field_validator("l_prior", "v_prior")
    @classmethod
    def _positive_gamma(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] <= 0 or v[1] <= 0:
            raise ValueError("gamma shape and scale must be positive")
        return v

    @field_validator("domain")
    @classmethod
    def _ordered_box(cls, v):
        for lo, hi in v:
            if not hi > lo:
                raise ValueError("domain bounds must satisfy low < high")
        return v

    @model_validator(mode="after")
    def _fits_grid(self) -> "SuiteConfig":
        cells = self.grid_side ** 2
        if self.tuning_evals > cells or self.n_start > cells:
            raise ValueError(f"tuning_evals and n_start must not exceed the {cells} grid cells")
        return self

    @property
    def true_prior(self) -> HyperPrior:
        return HyperPrior(
            l_shape=self.l_prior[0], l_scale=self.l_prior[1],
            v_shape=self.v_prior[0], v_scale=self.v_prior[1],
        )


class TaskEntry(BaseModel):
    """One task file referenced from a suite manifest."""
    model_config = ConfigDict(extra="forbid")

    file: str = Field(..., description="Task CSV path, relative to the manifest")
    role: Literal["tuning", "test"]
    start_indices: List[int] = Field(default_factory=list, description="Pre-evaluated cells of a test task")
    observed_indices: Optional[List[int]] = Field(
        None, description="Cells of a tuning task visible to prior learning (all cells if omitted)",
    )
    true_theta: Optional[HyperParams] = None
    sha256: Optional[str] = None
    preprocess: bool = Field(False, description="Log-transform and standardise the values on load (pollution grids)")


class SuiteManifest(BaseModel):
    """Index of the tuning and test tasks that make up a benchmark."""
    model_config = ConfigDict(extra="forbid")

    seed: Optional[int] = None
    suite: Optional[SuiteConfig] = None
    tasks: List[TaskEntry] = Field(default_factory=list)

    @property
    def tuning(self) -> List[TaskEntry]:
        return [t for t in self.tasks if t.role == "tuning"]

    @property
    def test(self) -> List[TaskEntry]:
        return [t for t in self.tasks if t.role == "test"]

# ============================================================================
# CLI run manifest
# ============================================================================

class StrategyEntry(BaseModel):
    """A strategy to benchmark plus its options."""
    model_config = ConfigDict(extra="forbid")

    name: StrategyKind
    options: Dict[str, Any] = Field(default_factory=dict)


class RunManifest(BaseModel):
    """Everything ``plebo run`` needs."""
    model_config = ConfigDict(extra="forbid")

    suite: Path
    strategies: List[StrategyEntry] = Field(..., min_length=1)
    iterations: int = Field(DEFAULT_CONFIG.runner.ITERATIONS, ge=1)
    seed: int = Field(DEFAULT_CONFIG.runner.SEED, ge=0)
    output_dir: Path = Path("results")
    n_candidates: int = Field(DEFAULT_CONFIG.acquisition.N_CANDIDATES, ge=1, description="PLeBO candidates H")
    posterior: Optional[Path] = None
    candidates: Optional[Path] = None
    mcmc: Dict[str, Any] = Field(default_factory=dict, description="McmcConfig overrides; without a posterior file the prior is fitted in-process")
    max_test_tasks: Optional[int] = Field(None, ge=1)
    transfer_cap: int = Field(DEFAULT_CONFIG.runner.TRANSFER_CAP, ge=1)
    jobs: int = Field(DEFAULT_CONFIG.runner.JOBS, ge=0)

    @field_validator("strategies", mode="before")
    @classmethod
    def _names_to_entries(cls, v):
        # Accept bare names alongside {"name": ..., "options": ...}
        return [{"name": s} if isinstance(s, str) else s for s in v]

    @field_validator("mcmc")
    @classmethod
    def _known_mcmc_keys(cls, v: Dict[str, Any]) -> Dict[str, Any]:
        unknown = sorted(set(v) - set(McmcConfig.model_fields))
        if unknown:
            raise ValueError(f"unknown mcmc settings: {unknown}")
        return v

    @model_validator(mode="after")
    def _files_exist(self) -> "RunManifest":
        for label in ("suite", "posterior", "candidates"):
            path = getattr(self, label)
            if path is not None and not Path(path).exists():
                raise ValueError(f"{label} file not found: {path}")
        kinds = {s.name for s in self.strategies}
        fitted = self.posterior is not None or bool(self.mcmc)
        if StrategyKind.GAMMA in kinds and not fitted:
            raise ValueError("Gamma requires a posterior file or mcmc settings")
        if StrategyKind.PLEBO in kinds and not fitted and self.candidates is None:
            raise ValueError("PLeBO requires a candidates file, a posterior file or mcmc settings")
        return self

