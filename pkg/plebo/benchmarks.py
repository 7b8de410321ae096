"""
Benchmark tasks: synthetic hierarchical GP suites and grid-file loading.

Grid task file (UTF-8 CSV)::

    # name=<id>
    # rows=<R> cols=<C> x0=<f> y0=<f> dx=<f> dy=<f>
    v,v,...,v        (R lines of C values, ``nan`` for missing)

Cell (r, c) sits at (x0 + c*dx, y0 + r*dy). Missing cells are dropped at load
time, so task indices refer to retained cells in row-major order.
"""

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from plebo import gp, numerics
from plebo.constants import GRID_SUFFIX, MANIFEST_FILE, TASKS_SUBDIR
from plebo.errors import DegenerateTask, DomainError, EmptyTask, ParseError
from plebo.schema import HyperParams, SuiteConfig, SuiteManifest, TaskEntry
from plebo.utils import compute_file_hash, derive_rng, read_json, write_json

NAME_RE = re.compile(r"^#\s*name=(?P<name>.*)$")
GEOMETRY_RE = re.compile(
    r"^#\s*rows=(?P<rows>\d+)\s+cols=(?P<cols>\d+)\s+x0=(?P<x0>\S+)\s+y0=(?P<y0>\S+)"
    r"\s+dx=(?P<dx>\S+)\s+dy=(?P<dy>\S+)\s*$"
)
TUNING_ROLE, TEST_ROLE = 0, 1


@dataclass(frozen=True)
class Lattice:
    """Rectangular lattice geometry of a grid task file."""

    rows: int
    cols: int
    x0: float
    y0: float
    dx: float
    dy: float

    def points(self) -> np.ndarray:
        r, c = np.divmod(np.arange(self.rows * self.cols), self.cols)
        return np.column_stack([self.x0 + c * self.dx, self.y0 + r * self.dy])


@dataclass
class GridTask:
    """A discretised optimisation task."""

    grid: np.ndarray
    values: np.ndarray
    name: str
    start_indices: List[int] = field(default_factory=list)
    true_theta: Optional[HyperParams] = None
    lattice: Optional[Lattice] = None
    cells: Optional[np.ndarray] = None  # lattice cell of each retained point
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.atleast_2d(np.asarray(self.grid, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.grid.shape[0] != self.values.shape[0]:
            raise ParseError(f"task {self.name}: {self.grid.shape[0]} points but {self.values.shape[0]} values")
        if self.values.size == 0:
            raise EmptyTask(f"task {self.name} has no cells")
        if not np.all(np.isfinite(self.values)):
            raise ParseError(f"task {self.name} has non-finite values")
        starts = [int(i) for i in self.start_indices]
        if len(set(starts)) != len(starts) or any(i < 0 or i >= self.values.size for i in starts):
            raise ParseError(f"task {self.name}: start indices must be unique and within range")
        self.start_indices = starts

    @property
    def y_max(self) -> float:
        return float(np.max(self.values))

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    def dataset(self, indices: Optional[List[int]] = None) -> gp.Dataset:
        """Observations at ``indices`` (default: the start indices)."""
        idx = self.start_indices if indices is None else list(indices)
        return gp.Dataset(X=self.grid[idx], y=self.values[idx])


@dataclass
class Suite:
    """Generated tuning and test tasks; tuning observations are the tuning tasks' start indices."""

    config: SuiteConfig
    tuning_tasks: List[GridTask]
    test_tasks: List[GridTask]

    def tuning_datasets(self) -> List[gp.Dataset]:
        return [task.dataset() for task in self.tuning_tasks]


def make_lattice(cfg: SuiteConfig) -> Lattice:
    (xlo, xhi), (ylo, yhi) = cfg.domain
    side = cfg.grid_side
    steps = max(side - 1, 1)
    return Lattice(rows=side, cols=side, x0=xlo, y0=ylo, dx=(xhi - xlo) / steps, dy=(yhi - ylo) / steps)


def sample_gp_on_grid(theta: HyperParams, grid, rng: np.random.Generator) -> np.ndarray:
    """
    One draw from N(0, K), K = gram(grid, theta), via the Cholesky factor.

    Raises:
        NotPositiveDefinite: if K cannot be factorised after the jitter ladder.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    K = gp.gram(gp.Dataset(X=grid, y=np.zeros(grid.shape[0])), theta)
    F = numerics.cholesky(K)
    return F.L @ rng.standard_normal(grid.shape[0])


def _draw_task(cfg: SuiteConfig, lattice: Lattice, role: int, index: int) -> Tuple[GridTask, np.random.Generator]:
    rng = derive_rng(cfg.seed, role, index)
    theta = HyperParams(
        lengthscale=float(rng.gamma(*cfg.l_prior)),
        signal_variance=float(rng.gamma(*cfg.v_prior)),
        noise_variance=cfg.noise_variance,
    )
    grid = lattice.points()
    values = sample_gp_on_grid(theta, grid, rng)
    prefix = "tuning" if role == TUNING_ROLE else "test"
    task = GridTask(
        grid=grid, values=values, name=f"{prefix}_{index:03d}", true_theta=theta,
        lattice=lattice, cells=np.arange(grid.shape[0]),
    )
    return task, rng


def build_suite(cfg: SuiteConfig) -> Suite:
    """Generate every task of ``cfg``; each task uses its own (seed, role, index) stream."""
    lattice = make_lattice(cfg)
    tuning, test = [], []
    for n in range(cfg.n_tuning):
        task, rng = _draw_task(cfg, lattice, TUNING_ROLE, n)
        task.start_indices = sorted(int(i) for i in rng.choice(task.n_points, cfg.tuning_evals, replace=False))
        tuning.append(task)
    for j in range(cfg.n_test):
        task, rng = _draw_task(cfg, lattice, TEST_ROLE, j)
        task.start_indices = [int(i) for i in rng.choice(task.n_points, cfg.n_start, replace=False)]
        test.append(task)
    logger.info(f"[build_suite] {len(tuning)} tuning and {len(test)} test tasks on a {lattice.rows}x{lattice.cols} grid")
    return Suite(config=cfg, tuning_tasks=tuning, test_tasks=test)


def generate_suite(cfg: SuiteConfig) -> Tuple[List[gp.Dataset], List[GridTask]]:
    """Tuning datasets (``tuning_evals`` random cells each) and test tasks with ``n_start`` start cells."""
    suite = build_suite(cfg)
    return suite.tuning_datasets(), suite.test_tasks


def load_grid_csv(path) -> GridTask:
    """
    Read a grid task file; ``nan`` cells are excluded.

    Raises:
        ParseError: on malformed content, with line and column.
        EmptyTask: if every cell is missing.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if len(lines) < 2:
        raise ParseError(f"{path}: missing header", line=len(lines) + 1)
    name_match = NAME_RE.match(lines[0].strip())
    if not name_match:
        raise ParseError(f"{path}: expected '# name=<id>'", line=1, column=1)
    geometry = GEOMETRY_RE.match(lines[1].strip())
    if not geometry:
        raise ParseError(f"{path}: expected '# rows=R cols=C x0= y0= dx= dy='", line=2, column=1)
    try:
        lattice = Lattice(
            rows=int(geometry["rows"]), cols=int(geometry["cols"]),
            x0=float(geometry["x0"]), y0=float(geometry["y0"]),
            dx=float(geometry["dx"]), dy=float(geometry["dy"]),
        )
    except ValueError as e:
        raise ParseError(f"{path}: bad geometry value ({e})", line=2) from e

    data = [line for line in lines[2:]]
    while data and not data[-1].strip():
        data.pop()
    if len(data) != lattice.rows:
        raise ParseError(f"{path}: expected {lattice.rows} data rows, found {len(data)}", line=3 + len(data))
    values = np.empty(lattice.rows * lattice.cols)
    for r, line in enumerate(data):
        cells = line.split(",")
        if len(cells) != lattice.cols:
            raise ParseError(f"{path}: expected {lattice.cols} values", line=r + 3, column=len(cells))
        for c, cell in enumerate(cells):
            try:
                values[r * lattice.cols + c] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: not a number: {cell.strip()!r}", line=r + 3, column=c + 1) from None
            if np.isinf(values[r * lattice.cols + c]):
                raise ParseError(f"{path}: infinite value", line=r + 3, column=c + 1)

    keep = np.flatnonzero(~np.isnan(values))
    if keep.size == 0:
        raise EmptyTask(f"{path}: every cell is missing")
    return GridTask(
        grid=lattice.points()[keep], values=values[keep], name=name_match["name"].strip(),
        lattice=lattice, cells=keep,
    )


def write_grid_csv(task: GridTask, path) -> Path:
    """Write ``task`` in the grid file format; cells not in the task are written as ``nan``."""
    if task.lattice is None or task.cells is None:
        raise ParseError(f"task {task.name} has no lattice geometry to write")
    lat = task.lattice
    full = np.full(lat.rows * lat.cols, np.nan)
    full[task.cells] = task.values
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# name={task.name}",
        f"# rows={lat.rows} cols={lat.cols} x0={lat.x0!r} y0={lat.y0!r} dx={lat.dx!r} dy={lat.dy!r}",
    ]
    for r in range(lat.rows):
        row = full[r * lat.cols:(r + 1) * lat.cols]
        lines.append(",".join("nan" if math.isnan(v) else repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return path


def preprocess_pollution(task: GridTask) -> GridTask:
    """
    Log transform (once) then standardise with the task's own mean and std.

    The log step is recorded in ``metadata["log_transformed"]`` and never
    reapplied, so a second call only re-standardises.

    Raises:
        DomainError: if a value is not positive before the log.
        DegenerateTask: if the standard deviation is below 1e-12.
    """
    values = task.values
    if not task.metadata.get("log_transformed", False):
        if np.any(values <= 0):
            raise DomainError(f"task {task.name}: log transform needs positive values")
        values = np.log(values)
    std = float(np.std(values))
    if std < 1e-12:
        raise DegenerateTask(f"task {task.name}: values are constant")
    standardised = (values - np.mean(values)) / std
    metadata = {**task.metadata, "log_transformed": True, "standardised": True}
    return replace(task, values=standardised, metadata=metadata)


def write_suite(suite: Suite, out_dir) -> Path:
    """Write every task CSV plus the suite manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    entries = []
    for role, tasks in (("tuning", suite.tuning_tasks), ("test", suite.test_tasks)):
        for task in tasks:
            rel = TASKS_SUBDIR / f"{task.name}{GRID_SUFFIX}"
            write_grid_csv(task, out_dir / rel)
            entries.append(TaskEntry(
                file=rel.as_posix(),
                role=role,
                start_indices=task.start_indices if role == "test" else [],
                observed_indices=task.start_indices if role == "tuning" else None,
                true_theta=task.true_theta,
                sha256=compute_file_hash(out_dir / rel),
            ))
    manifest = SuiteManifest(seed=suite.config.seed, suite=suite.config, tasks=entries)
    path = write_json(out_dir / MANIFEST_FILE, manifest.model_dump(mode="json", by_alias=True))
    logger.info(f"[write_suite] wrote {len(entries)} task files and {path}")
    return path


@dataclass
class LoadedSuite:
    manifest: SuiteManifest
    tuning_tasks: List[GridTask]
    test_tasks: List[GridTask]

    def tuning_datasets(self) -> List[gp.Dataset]:
        return [task.dataset() for task in self.tuning_tasks]

    def tuning_truth(self) -> Optional[List[HyperParams]]:
        thetas = [task.true_theta for task in self.tuning_tasks]
        return None if any(t is None for t in thetas) else thetas


def _load_entry(entry: TaskEntry, base: Path) -> GridTask:
    """Load, checksum and (when flagged) preprocess one manifest entry."""
    path = base / entry.file
    if not path.exists():
        raise ParseError(f"task file not found: {path}")
    if entry.sha256 and compute_file_hash(path) != entry.sha256:
        raise ParseError(f"checksum mismatch for {path}")
    task = load_grid_csv(path)
    if entry.role == "tuning":
        observed = entry.observed_indices
        starts = list(range(task.n_points)) if observed is None else observed
    else:
        starts = entry.start_indices
    task = GridTask(
        grid=task.grid, values=task.values, name=task.name, start_indices=starts,
        true_theta=entry.true_theta, lattice=task.lattice, cells=task.cells,
    )
    if entry.preprocess:
        task = preprocess_pollution(task)
        logger.debug(f"[load_suite] {task.name}: log-transformed and standardised")
    return task


def load_suite(manifest_path) -> LoadedSuite:
    """Read a suite manifest and the task files it lists."""
    manifest_path = Path(manifest_path)
    manifest = SuiteManifest.model_validate(read_json(manifest_path))
    base = manifest_path.parent
    tuning = [_load_entry(e, base) for e in manifest.tuning]
    test = [_load_entry(e, base) for e in manifest.test]
    return LoadedSuite(manifest=manifest, tuning_tasks=tuning, test_tasks=test)
