"""
Configuration management for plebo.

This module provides centralized configuration with support for:
- Environment variables (``PLEBO_*``, ``.env`` files via python-dotenv)
- Default values matching the published benchmark protocol
- Easy customization for different machines and experiments
"""

import os
from typing import List


def _float_list(raw: str) -> List[float]:
    return [float(part) for part in raw.split(",") if part.strip()]


class GPConfig:
    """Gaussian-process surrogate settings."""

    # Known low observation noise, fixed per run
    NOISE_VARIANCE: float = float(os.getenv("PLEBO_NOISE_VARIANCE", "1e-4"))

    # Hyperparameter fitting
    FIT_RESTARTS: int = int(os.getenv("PLEBO_FIT_RESTARTS", "5"))
    FIT_MAX_ITER: int = int(os.getenv("PLEBO_FIT_MAX_ITER", "60"))
    FIT_TOL: float = float(os.getenv("PLEBO_FIT_TOL", "1e-6"))
    # Optimiser bounds: the start-point box widened by this much on each side in log space
    FIT_LOG_MARGIN: float = float(os.getenv("PLEBO_FIT_LOG_MARGIN", "10.0"))

    # Diagonal jitter tried in order until Cholesky succeeds
    JITTER_LADDER: List[float] = _float_list(os.getenv("PLEBO_JITTER_LADDER", "0,1e-9,1e-7,1e-5"))


class McmcDefaults:
    """Defaults for the hierarchical prior sampler."""

    CHAINS: int = int(os.getenv("PLEBO_CHAINS", "4"))
    WARMUP: int = int(os.getenv("PLEBO_WARMUP", "1000"))
    SAMPLES: int = int(os.getenv("PLEBO_SAMPLES", "1000"))
    PROPOSAL_SCALE: float = float(os.getenv("PLEBO_PROPOSAL_SCALE", "0.1"))
    ADAPT_TARGET: float = float(os.getenv("PLEBO_ADAPT_TARGET", "0.3"))

    # Independent log-normal on each hyperprior coordinate, median 1
    HYPERPRIOR_LOG_SCALE: float = float(os.getenv("PLEBO_HYPERPRIOR_LOG_SCALE", "2.0"))

    # Chains keeping less than this fraction of their draws are discarded
    CHAIN_KEEP_FRACTION: float = float(os.getenv("PLEBO_CHAIN_KEEP_FRACTION", "0.1"))


class AcquisitionConfig:
    """Acquisition function settings."""

    UCB_BETA: float = float(os.getenv("PLEBO_UCB_BETA", "4.0"))
    N_CANDIDATES: int = int(os.getenv("PLEBO_N_CANDIDATES", "200"))
    SIGMA_FLOOR: float = float(os.getenv("PLEBO_SIGMA_FLOOR", "1e-12"))
    TIE_TOL: float = float(os.getenv("PLEBO_TIE_TOL", "1e-12"))


class BenchmarkConfig:
    """Synthetic suite defaults."""

    GRID_SIDE: int = int(os.getenv("PLEBO_GRID_SIDE", "32"))
    N_TUNING: int = int(os.getenv("PLEBO_N_TUNING", "10"))
    N_TEST: int = int(os.getenv("PLEBO_N_TEST", "100"))
    TUNING_EVALS: int = int(os.getenv("PLEBO_TUNING_EVALS", "20"))
    N_START: int = int(os.getenv("PLEBO_N_START", "10"))


class RunnerConfig:
    """Benchmark execution settings."""

    ITERATIONS: int = int(os.getenv("PLEBO_ITERATIONS", "30"))
    JOBS: int = int(os.getenv("PLEBO_JOBS", "0"))  # 0 = available cores
    TRANSFER_CAP: int = int(os.getenv("PLEBO_TRANSFER_CAP", "100"))
    SUCCESS_FRACTION: float = float(os.getenv("PLEBO_SUCCESS_FRACTION", "0.9"))
    SEED: int = int(os.getenv("PLEBO_SEED", "0"))


class FilePathConfig:
    """File path and directory configuration."""

    LOGS_DIR: str = os.getenv("PLEBO_LOGS_DIR", "logs")


class Config:
    """Main configuration class that aggregates all config sections."""

    gp = GPConfig()
    mcmc = McmcDefaults()
    acquisition = AcquisitionConfig()
    benchmark = BenchmarkConfig()
    runner = RunnerConfig()
    file_paths = FilePathConfig()

    @classmethod
    def get_env_summary(cls) -> dict:
        """Get a summary of all configuration values for debugging."""
        sections = {
            "gp": cls.gp,
            "mcmc": cls.mcmc,
            "acquisition": cls.acquisition,
            "benchmark": cls.benchmark,
            "runner": cls.runner,
            "file_paths": cls.file_paths,
        }
        return {
            name: {
                attr: getattr(section, attr)
                for attr in dir(section)
                if not attr.startswith("_") and attr.isupper()
            }
            for name, section in sections.items()
        }


# Create a global config instance
DEFAULT_CONFIG = Config()
