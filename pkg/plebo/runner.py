"""
Benchmark execution: BO loops, normalised-best metric, aggregate and paired
difference curves, and the prior-quality report.
"""

import time
import zlib
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError
from scipy import stats
from tqdm import tqdm

from plebo import gp
from plebo.benchmarks import GridTask
from plebo.constants import (
    AGGREGATE_COLUMNS, AGGREGATE_CSV, DENSITY_GRID_POINTS, DENSITY_QUANTILES, DIFFERENCE_CSV,
    FAILURES_JSON, PRIOR_REPORT_CSV, PRIOR_REPORT_JSON, REFERENCE_STRATEGY, RESULTS_COLUMNS,
    RESULTS_CSV, TIMINGS_CSV,
)
from plebo.errors import LengthMismatch, LikelihoodUndefined, MetricUndefined, PleboError, TaskSetMismatch
from plebo.prior import posterior_mean_thetas, summarize_eta
from plebo.schema import HyperParams, HyperPrior, PosteriorSamples, StrategyConfig
from plebo.strategies import StrategyState, propose_next
from plebo.utils import available_jobs, derive_rng, write_json

StrategySource = Union[StrategyConfig, Callable[[GridTask], StrategyConfig]]


@dataclass
class RunResult:
    """One (task, strategy) optimisation trace."""

    task_name: str
    strategy: str
    seed: int
    n_start: int
    y_max: float
    chosen_indices: List[int] = field(default_factory=list)
    observed_y: List[float] = field(default_factory=list)
    r: List[float] = field(default_factory=list)
    regret: List[float] = field(default_factory=list)
    step_seconds: List[float] = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None

    @property
    def n_iterations(self) -> int:
        return len(self.r)

    @property
    def metric_defined(self) -> bool:
        return self.y_max > 0


@dataclass
class AggregateCurve:
    """Per-iteration mean and standard error over J tasks."""

    strategy: str
    mean: np.ndarray
    stderr: np.ndarray
    J: int
    reference: Optional[str] = None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "strategy": self.strategy,
            "iteration": np.arange(1, self.mean.size + 1),
            "mean": self.mean,
            "stderr": self.stderr,
            "J": self.J,
        })
        if self.reference is not None:
            frame["reference"] = self.reference
        return frame


def normalized_best(Y: Sequence[float], y_max: float) -> float:
    """
    Best observed value as a fraction of the task maximum.

    Raises:
        MetricUndefined: if Y is empty or y_max <= 0.
    """
    if y_max <= 0:
        raise MetricUndefined(f"normalised best needs y_max > 0, got {y_max}")
    if len(Y) == 0:
        raise MetricUndefined("normalised best needs at least one observation")
    return float(np.max(Y)) / y_max


def run_bo(
    task: GridTask,
    cfg: StrategyConfig,
    iterations: int,
    seed: int,
    rng_keys: Tuple[int, ...] = (),
    strategy_name: Optional[str] = None,
) -> RunResult:
    """
    Optimise ``task`` for ``iterations`` proposals starting from its start indices.

    Strategy errors (``PleboError`` or a linear-algebra failure) stop the loop;
    the result then keeps the completed iterations and is flagged ``failed``.
    Any other exception propagates. When ``y_max <= 0`` the ratio metric
    is recorded as NaN and only simple regret is meaningful.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    name = strategy_name or cfg.kind.value
    rng = derive_rng(seed, *rng_keys)
    result = RunResult(task_name=task.name, strategy=name, seed=seed,
                       n_start=len(task.start_indices), y_max=task.y_max)
    if not result.metric_defined:
        logger.warning(f"[run_bo] {task.name}: y_max={task.y_max:.4g} <= 0, recording regret only")

    state = StrategyState()
    for index in task.start_indices:
        state.observe(index, task.values[index])

    for i in range(iterations):
        t0 = time.perf_counter()
        try:
            index = propose_next(cfg, state, task.grid, rng)
        except (PleboError, np.linalg.LinAlgError) as e:
            result.failed = True
            result.error = f"{type(e).__name__}: {e}"
            logger.error(f"[run_bo] {task.name}/{name} failed at iteration {i + 1}: {result.error}")
            break
        value = float(task.values[index])
        state.observe(index, value)
        elapsed = time.perf_counter() - t0

        best = max(state.values)
        result.chosen_indices.append(index)
        result.observed_y.append(value)
        result.r.append(normalized_best(state.values, task.y_max) if result.metric_defined else float("nan"))
        result.regret.append(task.y_max - best)
        result.step_seconds.append(elapsed)

    logger.debug(f"[run_bo] {task.name}/{name}: {result.n_iterations} iterations, fits={state.fit_calls}")
    return result


def _completed(results: Sequence[RunResult]) -> List[RunResult]:
    kept = []
    for res in results:
        if res.failed:
            continue
        if not res.metric_defined:
            logger.warning(f"[aggregate] skipping {res.task_name}/{res.strategy}: metric undefined")
            continue
        kept.append(res)
    return kept


def _mean_stderr(traces: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    J = traces.shape[0]
    mean = traces.mean(axis=0)
    if J == 1:
        return mean, np.zeros_like(mean)
    return mean, traces.std(axis=0, ddof=1) / np.sqrt(J)


def _trace_matrix(results: Sequence[RunResult]) -> np.ndarray:
    lengths = {res.n_iterations for res in results}
    if len(lengths) != 1:
        raise LengthMismatch(f"runs have differing iteration counts: {sorted(lengths)}")
    return np.array([res.r for res in results], dtype=np.float64)


def aggregate(results: Sequence[RunResult]) -> AggregateCurve:
    """
    Mean and standard error (sample std / sqrt(J)) of r_i over completed runs.

    Raises:
        LengthMismatch: if runs differ in iteration count or none completed.
    """
    kept = _completed(results)
    if not kept:
        raise LengthMismatch("no completed runs to aggregate")
    mean, stderr = _mean_stderr(_trace_matrix(kept))
    return AggregateCurve(strategy=kept[0].strategy, mean=mean, stderr=stderr, J=len(kept))


def difference_curve(results: Sequence[RunResult], reference_results: Sequence[RunResult]) -> AggregateCurve:
    """
    Paired per-task difference r_i(method) - r_i(reference), then mean and stderr.

    Raises:
        TaskSetMismatch: if the two result sets cover different tasks.
        LengthMismatch: if iteration counts differ.
    """
    by_task = {res.task_name: res for res in results}
    ref_by_task = {res.task_name: res for res in reference_results}
    if set(by_task) != set(ref_by_task):
        raise TaskSetMismatch(
            f"tasks differ: {sorted(set(by_task) ^ set(ref_by_task))[:5]} ..."
        )
    pairs = [
        (by_task[name], ref_by_task[name]) for name in sorted(by_task)
        if _completed([by_task[name]]) and _completed([ref_by_task[name]])
    ]
    if not pairs:
        raise LengthMismatch("no completed task pairs to compare")
    method = _trace_matrix([a for a, _ in pairs])
    reference = _trace_matrix([b for _, b in pairs])
    if method.shape != reference.shape:
        raise LengthMismatch(f"iteration counts differ: {method.shape[1]} vs {reference.shape[1]}")
    mean, stderr = _mean_stderr(method - reference)
    return AggregateCurve(strategy=pairs[0][0].strategy, mean=mean, stderr=stderr, J=len(pairs),
                          reference=pairs[0][1].strategy)


def strategy_id(name: str) -> int:
    """Stable integer key of a strategy label for RNG derivation."""
    return zlib.crc32(name.encode("utf-8"))


def run_suite(
    tasks: Sequence[GridTask],
    strategies: Mapping[str, StrategySource],
    iterations: int,
    seed: int,
    jobs: int = 0,
    progress: bool = False,
) -> List[RunResult]:
    """
    Run every (task, strategy) pair on a thread pool.

    Each run draws from its own stream keyed by (seed, task index, strategy id),
    so results do not depend on ``jobs`` or completion order. A strategy given
    as a callable is built per task (e.g. TruePLeBO with that task's truth).
    """
    jobs = available_jobs(jobs)
    work = [(j, name) for j in range(len(tasks)) for name in strategies]
    logger.info(f"[run_suite] {len(work)} runs ({len(tasks)} tasks x {len(strategies)} strategies) on {jobs} workers")

    def run_one(j: int, name: str) -> RunResult:
        task = tasks[j]
        source = strategies[name]
        try:
            cfg = source(task) if callable(source) else source
        except (PleboError, ValidationError) as e:
            logger.error(f"[run_suite] cannot configure {name} for {task.name}: {e}")
            return RunResult(task_name=task.name, strategy=name, seed=seed, n_start=len(task.start_indices),
                             y_max=task.y_max, failed=True, error=f"{type(e).__name__}: {e}")
        return run_bo(task, cfg, iterations, seed, rng_keys=(j, strategy_id(name)), strategy_name=name)

    results: Dict[Tuple[int, str], RunResult] = {}
    bar = tqdm(total=len(work), desc="Benchmark runs", unit="run", disable=not progress)
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        futures = {executor.submit(run_one, j, name): (j, name) for j, name in work}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
            bar.update(1)
    bar.close()

    ordered = [results[key] for key in work]
    n_failed = sum(res.failed for res in ordered)
    if n_failed:
        logger.warning(f"[run_suite] {n_failed}/{len(ordered)} runs failed")
    return ordered


def results_frame(results: Sequence[RunResult]) -> pd.DataFrame:
    rows = []
    for res in results:
        for i in range(res.n_iterations):
            rows.append((res.task_name, res.strategy, res.seed, i + 1, res.chosen_indices[i],
                         res.observed_y[i], res.r[i], res.regret[i], res.step_seconds[i]))
    return pd.DataFrame(rows, columns=RESULTS_COLUMNS)


def timings_frame(results: Sequence[RunResult]) -> pd.DataFrame:
    """Mean optimisation-step duration per strategy over completed runs."""
    steps: Dict[str, List[float]] = {}
    for res in results:
        if not res.failed:
            steps.setdefault(res.strategy, []).extend(res.step_seconds)
    rows = []
    for name, values in steps.items():
        values = np.asarray(values)
        stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
        rows.append((name, float(values.mean()), stderr, int(values.size)))
    return pd.DataFrame(rows, columns=["strategy", "mean_step_seconds", "stderr_step_seconds", "n_steps"])


def _group(results: Sequence[RunResult]) -> Dict[str, List[RunResult]]:
    grouped: Dict[str, List[RunResult]] = {}
    for res in results:
        grouped.setdefault(res.strategy, []).append(res)
    return grouped


def write_results(results: Sequence[RunResult], out_dir, reference: str = REFERENCE_STRATEGY) -> Dict[str, Path]:
    """Write raw, aggregate, difference, timing and failure files into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    results_frame(results).to_csv(out_dir / RESULTS_CSV, index=False, float_format="%.17g")
    written["results"] = out_dir / RESULTS_CSV

    grouped = _group(results)
    curves = []
    for name, runs in grouped.items():
        try:
            curves.append(aggregate(runs).to_frame())
        except LengthMismatch as e:
            logger.warning(f"[write_results] no aggregate for {name}: {e}")
    aggregate_df = pd.concat(curves, ignore_index=True) if curves else pd.DataFrame(columns=AGGREGATE_COLUMNS)
    aggregate_df.to_csv(out_dir / AGGREGATE_CSV, index=False, float_format="%.17g")
    written["aggregate"] = out_dir / AGGREGATE_CSV

    if reference in grouped and len(grouped) > 1:
        diffs = []
        for name, runs in grouped.items():
            if name == reference:
                continue
            try:
                diffs.append(difference_curve(runs, grouped[reference]).to_frame())
            except (LengthMismatch, TaskSetMismatch) as e:
                logger.warning(f"[write_results] no difference curve for {name}: {e}")
        if diffs:
            pd.concat(diffs, ignore_index=True).to_csv(out_dir / DIFFERENCE_CSV, index=False, float_format="%.17g")
            written["difference"] = out_dir / DIFFERENCE_CSV

    timings_frame(results).to_csv(out_dir / TIMINGS_CSV, index=False)
    written["timings"] = out_dir / TIMINGS_CSV

    failures = [
        {"task": res.task_name, "strategy": res.strategy, "completed_iterations": res.n_iterations, "error": res.error}
        for res in results if res.failed
    ]
    written["failures"] = write_json(out_dir / FAILURES_JSON, failures)
    logger.info(f"[write_results] wrote {', '.join(p.name for p in written.values())} to {out_dir}")
    return written


# ============================================================================
# Prior-quality report
# ============================================================================

@dataclass
class PriorQualityReport:
    tasks: pd.DataFrame
    summary: Dict[str, object]
    densities: Dict[str, Dict[str, List[float]]]

    def to_json(self) -> Dict[str, object]:
        return {
            "summary": self.summary,
            "tasks": self.tasks.to_dict(orient="records"),
            "densities": self.densities,
        }

    def write(self, out_dir) -> Tuple[Path, Path]:
        out_dir = Path(out_dir)
        json_path = write_json(out_dir / PRIOR_REPORT_JSON, self.to_json())
        csv_path = out_dir / PRIOR_REPORT_CSV
        self.tasks.to_csv(csv_path, index=False, float_format="%.17g")
        return json_path, csv_path


def _density_summary(
    shapes: np.ndarray, scales: np.ndarray, true_shape_scale: Optional[Tuple[float, float]]
) -> Dict[str, List[float]]:
    means = shapes * scales
    upper = 3.0 * float(np.median(means))
    if true_shape_scale is not None:
        upper = max(upper, 3.0 * true_shape_scale[0] * true_shape_scale[1])
    x = np.linspace(upper / DENSITY_GRID_POINTS, upper, DENSITY_GRID_POINTS)
    pdf = stats.gamma.pdf(x[None, :], a=shapes[:, None], scale=scales[:, None])
    lo, mid, hi = np.quantile(pdf, DENSITY_QUANTILES, axis=0)
    summary = {"x": x.tolist(), "q05": lo.tolist(), "median": mid.tolist(), "q95": hi.tolist()}
    if true_shape_scale is not None:
        summary["true"] = stats.gamma.pdf(x, a=true_shape_scale[0], scale=true_shape_scale[1]).tolist()
    return summary


def _report_lml(D: gp.Dataset, theta: HyperParams, task: int, which: str) -> float:
    try:
        return gp.log_marginal_likelihood(D, theta)
    except LikelihoodUndefined as e:
        logger.warning(f"[prior_quality_report] task {task}: {which} LML undefined ({e}); recording NaN")
        return float("nan")


def prior_quality_report(
    post: PosteriorSamples,
    truth: Optional[Tuple[Optional[HyperPrior], Optional[List[HyperParams]]]],
    datasets: Sequence[gp.Dataset],
    noise_variance: Optional[float] = None,
    within_nats: float = 2.0,
) -> PriorQualityReport:
    """
    Compare inferred and (optionally) true hyperparameters on the tuning tasks.

    Per task: LML at the posterior-mean theta and, with truth, at the true theta.
    An undefined likelihood is logged and recorded as NaN; such tasks are left
    out of ``fraction_within_nats``.
    Densities: pointwise 5/50/95% posterior quantiles of the implied gamma
    densities on a fixed x-grid, next to the true densities when known.
    """
    eta_true, thetas_true = truth if truth is not None else (None, None)
    inferred = posterior_mean_thetas(post, noise_variance)
    rows = []
    for n, (D, theta) in enumerate(zip(datasets, inferred)):
        row = {
            "task": n,
            "n_obs": D.n,
            "lengthscale_inferred": theta.lengthscale,
            "signal_variance_inferred": theta.signal_variance,
            "lml_inferred": _report_lml(D, theta, n, "inferred"),
        }
        if thetas_true is not None:
            true_theta = thetas_true[n]
            if noise_variance is not None:
                true_theta = true_theta.model_copy(update={"noise_variance": noise_variance})
            row["lengthscale_true"] = true_theta.lengthscale
            row["signal_variance_true"] = true_theta.signal_variance
            row["lml_true"] = _report_lml(D, true_theta, n, "true")
            row["lml_difference"] = row["lml_inferred"] - row["lml_true"]
        rows.append(row)
    tasks = pd.DataFrame(rows)

    eta_mean = summarize_eta(post)
    summary: Dict[str, object] = {
        "n_tasks": len(rows),
        "n_draws": post.n_draws,
        "eta_posterior_mean": eta_mean.model_dump(),
        "lengthscale_gamma_mean": eta_mean.lengthscale_mean,
        "signal_variance_gamma_mean": eta_mean.variance_mean,
    }
    if thetas_true is not None and rows:
        defined = np.isfinite(tasks["lml_inferred"]) & np.isfinite(tasks["lml_true"])
        within = tasks["lml_inferred"][defined] >= tasks["lml_true"][defined] - within_nats
        # NaN rows are left out; None when no task has both likelihoods
        summary["fraction_within_nats"] = float(within.mean()) if defined.any() else None
        summary["n_undefined"] = int((~defined).sum())
        summary["within_nats"] = within_nats
    if eta_true is not None:
        summary["eta_true"] = eta_true.model_dump()

    eta = np.array([e.as_array() for e in post.eta_draws], dtype=np.float64)
    densities = {
        "lengthscale": _density_summary(
            eta[:, 0], eta[:, 1], (eta_true.l_shape, eta_true.l_scale) if eta_true else None),
        "signal_variance": _density_summary(
            eta[:, 2], eta[:, 3], (eta_true.v_shape, eta_true.v_scale) if eta_true else None),
    }
    logger.info(f"[prior_quality_report] {len(rows)} tasks, gamma means l={eta_mean.lengthscale_mean:.4g} v={eta_mean.variance_mean:.4g}")
    return PriorQualityReport(tasks=tasks, summary=summary, densities=densities)
