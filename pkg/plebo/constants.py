from pathlib import Path

# Artifacts connecting the CLI subcommands
MANIFEST_FILE = "suite.json"
POSTERIOR_FILE = "posterior.json"
CANDIDATES_FILE = "candidates.json"
PRIOR_REPORT_JSON = "prior_quality.json"
PRIOR_REPORT_CSV = "prior_quality.csv"
RESULTS_CSV = "results.csv"
AGGREGATE_CSV = "aggregate.csv"
DIFFERENCE_CSV = "difference.csv"
TIMINGS_CSV = "timings.csv"
FAILURES_JSON = "failures.json"

TASKS_SUBDIR = Path("tasks")
GRID_SUFFIX = ".csv"

RESULTS_COLUMNS = [
    "task", "strategy", "seed", "iteration", "chosen_index",
    "observed_y", "r", "regret", "step_seconds",
]
AGGREGATE_COLUMNS = ["strategy", "iteration", "mean", "stderr", "J"]

REFERENCE_STRATEGY = "PLeBO"

# x-grids for the implied gamma densities in the prior-quality report
DENSITY_GRID_POINTS = 200
DENSITY_QUANTILES = (0.05, 0.5, 0.95)
