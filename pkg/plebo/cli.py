import sys
import json
import argparse
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError
from rich.console import Console
from rich.panel import Panel
from rich.text import Text
from rich import print as rprint

from plebo.version import __version__
from plebo.config import DEFAULT_CONFIG
from plebo.constants import CANDIDATES_FILE, POSTERIOR_FILE, REFERENCE_STRATEGY
from plebo.errors import ConfigError, DegenerateTask, DomainError, EmptyTask, InferenceFailed, ParseError, PleboError
from plebo.benchmarks import build_suite, load_suite, write_suite
from plebo.prior import run_mcmc, sample_candidates, summarize_eta
from plebo.runner import prior_quality_report, run_suite, strategy_id, write_results
from plebo.schema import (
    CandidateSet, McmcConfig, PosteriorSamples, RunManifest, StrategyConfig, StrategyKind, SuiteConfig,
)
from plebo.strategies import build_transfer_pool, extract_initial_points, fit_shared
from plebo.utils import derive_rng, read_json, write_json

EXIT_FAILURE = 1
EXIT_USAGE = 2
PLOT_COLUMNS = ("strategy", "iteration", "mean", "stderr")
# Bad input files: reported as usage errors
DATA_ERRORS = (ParseError, DomainError, DegenerateTask, EmptyTask)


def print_banner():
    """Display a compact banner for the CLI"""
    console = Console(stderr=True)
    panel = Panel(
        Text("PLeBO", style="bold cyan", justify="center"),
        title=f"[bold green]plebo v{__version__}[/bold green]",
        subtitle="[italic]Prior learning for Bayesian optimisation[/italic]",
        border_style="bright_blue",
        padding=(0, 0)
    )
    console.print(panel)

def print_success(message):
    """Print success message with styling"""
    rprint(f"[bold green]✅ {message}[/bold green]")

def print_error(message):
    """Print error message with styling"""
    rprint(f"[bold red]❌ {message}[/bold red]")

def print_info(message):
    """Print info message with styling"""
    rprint(f"[bold blue]ℹ️  {message}[/bold blue]")

def print_warning(message):
    """Print warning message with styling"""
    rprint(f"[bold yellow]⚠️  {message}[/bold yellow]")


def setup_logging(verbose: bool = False) -> None:
    """stderr at INFO (DEBUG with --verbose) plus a rotating file sink."""
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO")
    log_dir = Path(DEFAULT_CONFIG.file_paths.LOGS_DIR)
    try:
        log_dir.mkdir(parents=True, exist_ok=True)
        logger.add(log_dir / "plebo.log", level="DEBUG", rotation="10 MB", retention="10 days")
    except OSError as e:
        logger.warning(f"[setup_logging] file logging disabled: {e}")


def resolve_seed(seed: Optional[int]) -> int:
    """Explicit --seed wins, then PLEBO_SEED."""
    return DEFAULT_CONFIG.runner.SEED if seed is None else seed


class CustomHelpFormatter(argparse.HelpFormatter):
    """Help formatter that keeps defaults visible"""
    def _get_help_string(self, action):
        help_text = action.help or ""
        if action.default not in (None, argparse.SUPPRESS, False) and "%(default)" not in help_text:
            help_text += " (default: %(default)s)"
        return help_text


def parse_args(argv=None):
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(
        prog="plebo",
        description="🚀 PLeBO - learn hyperparameter priors from past tasks and benchmark Bayesian optimisation",
        formatter_class=CustomHelpFormatter,
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"plebo v{__version__}"
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="🔊 Debug logging on stderr"
    )
    parser.add_argument(
        "--quiet",
        action="store_true",
        help="🔇 Do not print the banner"
    )

    subparsers = parser.add_subparsers(
        dest="command",
        help="🛠️  Available commands",
        metavar="COMMAND"
    )

    # gen-synthetic
    gen_command = subparsers.add_parser(
        "gen-synthetic",
        help="🧪 Generate a synthetic hierarchical GP suite",
        description="Draw tuning and test tasks from the hierarchical GP model and write task CSVs plus a suite manifest",
        formatter_class=CustomHelpFormatter,
    )
    gen_command.add_argument("--out", type=Path, default=Path("suite"), help="📁 Output directory", metavar="DIR")
    gen_command.add_argument("--seed", type=int, default=None, help="🎲 Generator seed (falls back to PLEBO_SEED)", metavar="SEED")
    gen_command.add_argument("--n-tuning", type=int, default=DEFAULT_CONFIG.benchmark.N_TUNING, help="📚 Number of tuning tasks", metavar="N")
    gen_command.add_argument("--n-test", type=int, default=DEFAULT_CONFIG.benchmark.N_TEST, help="🎯 Number of test tasks", metavar="N")
    gen_command.add_argument("--tuning-evals", type=int, default=DEFAULT_CONFIG.benchmark.TUNING_EVALS, help="🔢 Observations per tuning task", metavar="N")
    gen_command.add_argument("--n-start", type=int, default=DEFAULT_CONFIG.benchmark.N_START, help="🚩 Start points per test task", metavar="N")
    gen_command.add_argument("--grid-side", type=int, default=DEFAULT_CONFIG.benchmark.GRID_SIDE, help="🔲 Cells per grid side", metavar="N")
    gen_command.add_argument("--noise-variance", type=float, default=DEFAULT_CONFIG.gp.NOISE_VARIANCE, help="🔈 Observation noise variance", metavar="VAR")

    # fit-prior
    fit_command = subparsers.add_parser(
        "fit-prior",
        help="📈 Learn the hyperparameter prior from tuning tasks",
        description="Run MCMC on the tuning tasks and write posterior, candidate and prior-quality files",
        formatter_class=CustomHelpFormatter,
    )
    fit_command.add_argument("suite", type=Path, help="📄 Suite manifest (suite.json)", metavar="MANIFEST")
    fit_command.add_argument("--out", type=Path, default=None, help="📁 Output directory (default: manifest directory)", metavar="DIR")
    fit_command.add_argument("--seed", type=int, default=None, help="🎲 Sampler seed (falls back to PLEBO_SEED)", metavar="SEED")
    fit_command.add_argument("--chains", type=int, default=DEFAULT_CONFIG.mcmc.CHAINS, help="⛓️  Number of chains", metavar="N")
    fit_command.add_argument("--warmup", type=int, default=DEFAULT_CONFIG.mcmc.WARMUP, help="🔥 Warmup sweeps per chain", metavar="N")
    fit_command.add_argument("--samples", type=int, default=DEFAULT_CONFIG.mcmc.SAMPLES, help="🧮 Retained draws per chain", metavar="N")
    fit_command.add_argument("--n-candidates", type=int, default=DEFAULT_CONFIG.acquisition.N_CANDIDATES, help="🎟️  Hyperparameter candidates H", metavar="H")
    fit_command.add_argument("--jobs", type=int, default=1, help="🧵 Chains run in parallel (0 = all cores)", metavar="N")

    # run
    run_command = subparsers.add_parser(
        "run",
        help="🏃 Benchmark strategies on the test tasks",
        description="Execute every (task, strategy) run of a run manifest (YAML or JSON) and write result CSVs",
        formatter_class=CustomHelpFormatter,
    )
    run_command.add_argument("manifest", type=Path, help="📄 Run manifest (YAML or JSON)", metavar="MANIFEST")
    run_command.add_argument("--seed", type=int, default=None, help="🎲 Override the manifest seed", metavar="SEED")
    run_command.add_argument("--jobs", type=int, default=None, help="🧵 Parallel runs (0 = all cores)", metavar="N")
    run_command.add_argument("--iterations", type=int, default=None, help="🔁 Override the iteration budget", metavar="N")
    run_command.add_argument("--out", type=Path, default=None, help="📁 Override the output directory", metavar="DIR")

    # plot
    plot_command = subparsers.add_parser(
        "plot",
        help="🖼️  Render an aggregate or difference CSV as SVG",
        description="Mean lines with one-standard-error bands per strategy",
        formatter_class=CustomHelpFormatter,
    )
    plot_command.add_argument("csv", type=Path, help="📄 aggregate.csv or difference.csv", metavar="CSV")
    plot_command.add_argument("--out", type=Path, default=None, help="🖼️  SVG path (default: CSV path with .svg)", metavar="SVG")
    plot_command.add_argument("--title", type=str, default=None, help="🏷️  Figure title", metavar="TITLE")

    # report
    report_command = subparsers.add_parser(
        "report",
        help="📋 Prior-quality report from a posterior file",
        description="Compare inferred and true hyperparameters on the tuning tasks of a suite",
        formatter_class=CustomHelpFormatter,
    )
    report_command.add_argument("posterior", type=Path, help="📄 posterior.json", metavar="POSTERIOR")
    report_command.add_argument("suite", type=Path, help="📄 Suite manifest", metavar="MANIFEST")
    report_command.add_argument("--out", type=Path, default=None, help="📁 Output directory (default: posterior directory)", metavar="DIR")
    report_command.add_argument("--plot", action="store_true", help="🖼️  Also write prior_quality.svg")

    return parser.parse_known_args(argv)


# ============================================================================
# Shared helpers
# ============================================================================

def _prior_truth(loaded):
    suite_cfg = loaded.manifest.suite
    eta_true = suite_cfg.true_prior if suite_cfg is not None else None
    thetas_true = loaded.tuning_truth()
    if eta_true is None and thetas_true is None:
        return None
    return eta_true, thetas_true


def _noise_variance(loaded) -> float:
    suite_cfg = loaded.manifest.suite
    return suite_cfg.noise_variance if suite_cfg is not None else DEFAULT_CONFIG.gp.NOISE_VARIANCE


def _write_report(post: PosteriorSamples, loaded, out_dir: Path, plot: bool = False):
    report = prior_quality_report(post, _prior_truth(loaded), loaded.tuning_datasets(), _noise_variance(loaded))
    json_path, csv_path = report.write(out_dir)
    if plot:
        plot_prior_densities(report, out_dir / "prior_quality.svg")
    return report, json_path, csv_path


def _log_diagnostics(post: PosteriorSamples) -> None:
    chains = post.diagnostics.get("chains", {})
    for chain, info in sorted(chains.items(), key=lambda item: int(item[0])):
        logger.info(f"[fit-prior] chain {chain}: acceptance={info.get('acceptance')}")
    removed = post.diagnostics.get("removed_chains")
    if removed:
        logger.warning(f"[fit-prior] chains removed by filtering: {removed}")
    rhat = post.diagnostics.get("split_rhat_log_eta")
    if rhat is not None:
        logger.info(f"[fit-prior] split R-hat (log eta): {[round(v, 3) for v in rhat]}")


def load_manifest_file(path: Path) -> Dict[str, Any]:
    """Read a YAML or JSON run manifest and resolve its paths against its directory."""
    with open(path, "r", encoding="utf-8") as f:
        if path.suffix.lower() == ".json":
            raw = json.load(f)
        else:
            raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: manifest must be a mapping")
    base = path.resolve().parent
    for key in ("suite", "posterior", "candidates", "output_dir"):
        value = raw.get(key)
        if value is not None and not Path(value).is_absolute():
            raw[key] = str(base / value)
    return raw


# ============================================================================
# Plotting
# ============================================================================

def plot_curves(frame: pd.DataFrame, out_path: Path, title: Optional[str] = None) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, group in frame.groupby("strategy", sort=False):
        group = group.sort_values("iteration")
        line, = ax.plot(group["iteration"], group["mean"], label=str(name))
        ax.fill_between(group["iteration"], group["mean"] - group["stderr"], group["mean"] + group["stderr"],
                        color=line.get_color(), alpha=0.2, linewidth=0)
    if "reference" in frame.columns:
        ax.axhline(0.0, color="black", linewidth=0.8, linestyle="--")
        ax.set_ylabel(f"r minus {frame['reference'].iloc[0]}")
    else:
        ax.set_ylabel("normalised best value r")
    ax.set_xlabel("iteration")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def plot_prior_densities(report, out_path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, (label, dens) in zip(axes, report.densities.items()):
        x = np.asarray(dens["x"])
        ax.fill_between(x, dens["q05"], dens["q95"], alpha=0.3, linewidth=0, label="inferred 5-95%")
        ax.plot(x, dens["median"], label="inferred median")
        if "true" in dens:
            ax.plot(x, dens["true"], color="black", linestyle="--", label="true")
        ax.set_xlabel(label.replace("_", " "))
        ax.set_ylabel("density")
    axes[0].legend(loc="best", fontsize="small")
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


# ============================================================================
# Command handlers
# ============================================================================

def handle_gen_synthetic(args):
    """Handle synthetic suite generation"""
    seed = resolve_seed(args.seed)
    try:
        cfg = SuiteConfig(
            n_tuning=args.n_tuning, n_test=args.n_test, tuning_evals=args.tuning_evals, n_start=args.n_start,
            grid_side=args.grid_side, noise_variance=args.noise_variance, seed=seed,
        )
    except ValidationError as e:
        print_error(f"Invalid suite settings: {e}")
        sys.exit(EXIT_USAGE)

    try:
        manifest_path = write_suite(build_suite(cfg), args.out)
    except Exception as e:
        print_error(f"Suite generation failed: {str(e)}")
        sys.exit(EXIT_FAILURE)
    print_success(
        f"Wrote {cfg.n_tuning} tuning + {cfg.n_test} test tasks "
        f"({cfg.grid_side}x{cfg.grid_side} grid, seed {seed}) to {manifest_path}"
    )


def handle_fit_prior(args):
    """Handle prior learning on the tuning tasks"""
    seed = resolve_seed(args.seed)
    try:
        loaded = load_suite(args.suite)
        if not loaded.tuning_tasks:
            raise ConfigError("suite has no tuning tasks")
        cfg = McmcConfig(
            n_chains=args.chains, n_warmup=args.warmup, n_samples_per_chain=args.samples,
            seed=seed, noise_variance=_noise_variance(loaded),
        )
        if args.n_candidates < 1:
            raise ConfigError("--n-candidates must be at least 1")
    except (ValidationError, ConfigError, FileNotFoundError, *DATA_ERRORS) as e:
        print_error(f"Invalid input: {e}")
        sys.exit(EXIT_USAGE)

    out_dir = args.out or args.suite.parent
    print_info(f"Fitting prior on {len(loaded.tuning_tasks)} tuning tasks: "
               f"{cfg.n_chains} chains x ({cfg.n_warmup} warmup + {cfg.n_samples_per_chain} draws)")
    try:
        post = run_mcmc(loaded.tuning_datasets(), cfg, jobs=args.jobs, progress=True)
    except InferenceFailed as e:
        print_error(f"Prior inference failed: {e}")
        sys.exit(EXIT_FAILURE)
    except PleboError as e:
        print_error(f"Prior fitting failed: {e}")
        sys.exit(EXIT_FAILURE)

    _log_diagnostics(post)
    candidates = sample_candidates(post, H=args.n_candidates, seed=seed, noise_variance=cfg.noise_variance)
    write_json(out_dir / POSTERIOR_FILE, post.to_json())
    write_json(out_dir / CANDIDATES_FILE, candidates.to_json())
    report, _, _ = _write_report(post, loaded, out_dir)

    eta = summarize_eta(post)
    print_success(
        f"Kept {post.n_draws} draws ({post.n_filtered} filtered); gamma means "
        f"l={eta.lengthscale_mean:.4g}, sigma_r^2={eta.variance_mean:.4g}; wrote files to {out_dir}"
    )
    if report.summary.get("fraction_within_nats") is not None:
        print_info(f"Tasks with inferred LML within 2 nats of the truth: {report.summary['fraction_within_nats']:.0%}")


def build_strategies(manifest: RunManifest, loaded) -> Dict[str, Any]:
    """Strategy label -> StrategyConfig, or a per-task factory for TruePLeBO."""
    seed = manifest.seed
    noise = _noise_variance(loaded)
    tuning = loaded.tuning_datasets()
    kinds = {entry.name for entry in manifest.strategies}

    post = None
    if manifest.posterior is not None:
        post = PosteriorSamples.from_json(read_json(manifest.posterior))
    elif manifest.mcmc and kinds & {StrategyKind.PLEBO, StrategyKind.GAMMA}:
        mcmc_cfg = McmcConfig(**{"seed": seed, "noise_variance": noise, **manifest.mcmc})
        post = run_mcmc(tuning, mcmc_cfg, jobs=manifest.jobs or 1, progress=True)

    candidates = None
    if StrategyKind.PLEBO in kinds:
        resample = post is not None and (manifest.candidates is None or "n_candidates" in manifest.model_fields_set)
        if resample:
            candidates = sample_candidates(post, H=manifest.n_candidates, seed=seed, noise_variance=noise)
        else:
            candidates = CandidateSet.model_validate(read_json(manifest.candidates))

    strategies: Dict[str, Any] = {}
    for entry in manifest.strategies:
        options = dict(entry.options)
        label = str(options.pop("label", entry.name.value))
        if label in strategies:
            raise ConfigError(f"duplicate strategy label {label!r}; set options.label")
        common = {"kind": entry.name, "noise_variance": noise, **options}
        kind = entry.name
        if kind == StrategyKind.TRUE_PLEBO:
            strategies[label] = lambda task, common=common: StrategyConfig(**common, true_theta=task.true_theta)
            continue
        if kind == StrategyKind.PLEBO:
            common["candidates"] = candidates
        elif kind == StrategyKind.GAMMA:
            common["eta_mean"] = summarize_eta(post)
        elif kind == StrategyKind.SHARED:
            common["shared_theta"] = fit_shared(tuning, rng=derive_rng(seed, strategy_id(label)), noise_variance=noise)
        elif kind == StrategyKind.DIRECT_TRANS:
            common["transfer_pool"] = build_transfer_pool(tuning, manifest.transfer_cap, derive_rng(seed, strategy_id(label)))
        elif kind == StrategyKind.INITIAL:
            common["initial_points"] = extract_initial_points(tuning)
        strategies[label] = StrategyConfig(**common)
    return strategies


def handle_run(args):
    """Handle a benchmark run"""
    try:
        raw = load_manifest_file(args.manifest)
        if args.seed is not None:
            raw["seed"] = args.seed
        elif "seed" not in raw:
            raw["seed"] = resolve_seed(None)
        if args.jobs is not None:
            raw["jobs"] = args.jobs
        if args.iterations is not None:
            raw["iterations"] = args.iterations
        if args.out is not None:
            raw["output_dir"] = str(args.out)
        manifest = RunManifest.model_validate(raw)
        loaded = load_suite(manifest.suite)
        tasks = loaded.test_tasks[:manifest.max_test_tasks] if manifest.max_test_tasks else loaded.test_tasks
        if not tasks:
            raise ConfigError("suite has no test tasks")
        strategies = build_strategies(manifest, loaded)
    except (ValidationError, ConfigError, FileNotFoundError, yaml.YAMLError, json.JSONDecodeError, *DATA_ERRORS) as e:
        print_error(f"Invalid run manifest: {e}")
        sys.exit(EXIT_USAGE)
    except PleboError as e:
        print_error(f"Preparing strategies failed: {e}")
        sys.exit(EXIT_FAILURE)

    print_info(f"Running {len(strategies)} strategies on {len(tasks)} test tasks, "
               f"{manifest.iterations} iterations, seed {manifest.seed}")
    results = run_suite(tasks, strategies, manifest.iterations, manifest.seed, jobs=manifest.jobs, progress=True)
    written = write_results(results, manifest.output_dir, reference=REFERENCE_STRATEGY)

    n_ok = sum(not res.failed for res in results)
    fraction = n_ok / len(results)
    if fraction < DEFAULT_CONFIG.runner.SUCCESS_FRACTION:
        print_error(f"Only {n_ok}/{len(results)} runs succeeded; see {written['failures']}")
        sys.exit(EXIT_FAILURE)
    if n_ok < len(results):
        print_warning(f"{len(results) - n_ok} runs failed; see {written['failures']}")
    print_success(f"{n_ok}/{len(results)} runs completed; results in {manifest.output_dir}")


def handle_plot(args):
    """Handle SVG rendering of an aggregate CSV"""
    try:
        frame = pd.read_csv(args.csv)
        missing = [c for c in PLOT_COLUMNS if c not in frame.columns]
        if missing:
            raise ParseError(f"{args.csv}: missing columns {missing}")
        if frame.empty:
            raise ParseError(f"{args.csv}: no data rows")
        frame[["iteration", "mean", "stderr"]] = frame[["iteration", "mean", "stderr"]].astype(float)
    except (OSError, ValueError, ParseError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        print_error(f"Cannot read {args.csv}: {e}")
        sys.exit(EXIT_USAGE)

    out = args.out or args.csv.with_suffix(".svg")
    try:
        plot_curves(frame, out, args.title)
    except Exception as e:
        print_error(f"Plotting failed: {str(e)}")
        sys.exit(EXIT_FAILURE)
    print_success(f"Wrote {out}")


def handle_report(args):
    """Handle the prior-quality report"""
    try:
        post = PosteriorSamples.from_json(read_json(args.posterior))
        loaded = load_suite(args.suite)
        if post.n_tasks != len(loaded.tuning_tasks):
            raise ConfigError(f"posterior covers {post.n_tasks} tasks, suite has {len(loaded.tuning_tasks)} tuning tasks")
    except (ValidationError, ConfigError, FileNotFoundError, KeyError, json.JSONDecodeError, *DATA_ERRORS) as e:
        print_error(f"Invalid input: {e}")
        sys.exit(EXIT_USAGE)

    out_dir = args.out or args.posterior.parent
    try:
        report, json_path, csv_path = _write_report(post, loaded, out_dir, plot=args.plot)
    except Exception as e:
        print_error(f"Report failed: {str(e)}")
        sys.exit(EXIT_FAILURE)
    print_success(f"Wrote {json_path} and {csv_path}")
    if report.summary.get("fraction_within_nats") is not None:
        print_info(f"Tasks with inferred LML within 2 nats of the truth: {report.summary['fraction_within_nats']:.0%}")


def main(argv=None):
    """Main CLI entry point"""
    known_args, unknown_args = parse_args(argv)

    # Handle unknown arguments
    if unknown_args:
        for arg in unknown_args:
            print_error(f"Unknown command or argument: {arg}")
        print_info("Use --help for available commands and options")
        sys.exit(EXIT_USAGE)

    setup_logging(known_args.verbose)
    logger.debug(f"[main] configuration: {DEFAULT_CONFIG.get_env_summary()}")
    if not known_args.quiet:
        print_banner()

    handlers = {
        "gen-synthetic": handle_gen_synthetic,
        "fit-prior": handle_fit_prior,
        "run": handle_run,
        "plot": handle_plot,
        "report": handle_report,
    }
    handler = handlers.get(known_args.command)
    if handler is None:
        print_error(f"Unknown command: {known_args.command}")
        print_info(f"Available commands: {', '.join(handlers)}")
        print_info("Use --help for more information")
        sys.exit(EXIT_USAGE)
    handler(known_args)


if __name__ == "__main__":
    main()
