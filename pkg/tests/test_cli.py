import json
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest
import yaml
from loguru import logger

from plebo.cli import main, parse_args
from plebo.constants import AGGREGATE_COLUMNS, RESULTS_COLUMNS

GEN_FLAGS = ["--n-tuning", "3", "--n-test", "2", "--tuning-evals", "8", "--n-start", "2", "--grid-side", "6"]


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    yield tmp_path
    # main() binds sinks to the captured stderr of this test
    logger.remove()


def exit_code(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code


@pytest.fixture
def suite_dir(tmp_path):
    out = tmp_path / "suite"
    main(["--quiet", "gen-synthetic", "--out", str(out), "--seed", "5", *GEN_FLAGS])
    return out


def test_parse_args_defaults():
    args, unknown = parse_args(["run", "m.yaml"])
    assert args.command == "run" and not unknown
    assert args.seed is None and args.iterations is None


def test_unknown_flag():
    assert exit_code(["--quiet", "gen-synthetic", "--bogus"]) == 2


def test_missing_command():
    assert exit_code(["--quiet"]) == 2


def test_gen_synthetic(suite_dir):
    manifest = json.loads((suite_dir / "suite.json").read_text())
    roles = [t["role"] for t in manifest["tasks"]]
    assert roles.count("tuning") == 3 and roles.count("test") == 2
    for entry in manifest["tasks"]:
        assert (suite_dir / entry["file"]).exists()


def test_gen_synthetic_without_test_tasks(tmp_path):
    main(["--quiet", "gen-synthetic", "--out", str(tmp_path / "s"), "--n-test", "0",
          "--n-tuning", "2", "--tuning-evals", "4", "--grid-side", "4"])
    manifest = json.loads((tmp_path / "s" / "suite.json").read_text())
    assert all(t["role"] == "tuning" for t in manifest["tasks"])


@pytest.mark.slow
def test_gen_synthetic_defaults(tmp_path):
    main(["--quiet", "gen-synthetic", "--out", str(tmp_path / "s"), "--seed", "0"])
    manifest = json.loads((tmp_path / "s" / "suite.json").read_text())
    roles = [t["role"] for t in manifest["tasks"]]
    assert roles.count("tuning") == 10 and roles.count("test") == 100
    assert len(list((tmp_path / "s" / "tasks").glob("*.csv"))) == 110


def test_gen_synthetic_invalid_settings(tmp_path):
    assert exit_code(["--quiet", "gen-synthetic", "--out", str(tmp_path / "s"), "--n-tuning", "0"]) == 2


def test_fit_prior_and_report(suite_dir, tmp_path):
    main(["--quiet", "fit-prior", str(suite_dir / "suite.json"), "--chains", "2", "--warmup", "20",
          "--samples", "10", "--n-candidates", "4", "--seed", "1"])
    posterior = json.loads((suite_dir / "posterior.json").read_text())
    assert len(posterior["theta_draws"]) == 3
    candidates = json.loads((suite_dir / "candidates.json").read_text())
    assert len(candidates["thetas"]) == 4
    assert (suite_dir / "prior_quality.json").exists()

    out = tmp_path / "report"
    main(["--quiet", "report", str(suite_dir / "posterior.json"), str(suite_dir / "suite.json"),
          "--out", str(out), "--plot"])
    report = json.loads((out / "prior_quality.json").read_text())
    assert report["summary"]["n_tasks"] == 3
    ET.parse(out / "prior_quality.svg")


def test_fit_prior_missing_suite(tmp_path):
    assert exit_code(["--quiet", "fit-prior", str(tmp_path / "nowhere.json")]) == 2


def write_manifest(path, **fields):
    text = json.dumps(fields) if path.suffix == ".json" else yaml.safe_dump(fields)
    path.write_text(text)
    return path


def test_run_random_search(suite_dir, tmp_path):
    manifest = write_manifest(tmp_path / "run.yaml", suite="suite/suite.json", strategies=["RandomSearch"],
                              iterations=5, seed=3, output_dir="results", max_test_tasks=1)
    main(["--quiet", "run", str(manifest), "--jobs", "1"])
    raw = pd.read_csv(tmp_path / "results" / "results.csv")
    assert list(raw.columns) == RESULTS_COLUMNS
    assert len(raw) == 5
    assert list(raw["iteration"]) == [1, 2, 3, 4, 5]
    agg = pd.read_csv(tmp_path / "results" / "aggregate.csv")
    assert list(agg.columns) == AGGREGATE_COLUMNS


def test_run_seed_override_is_reproducible(suite_dir, tmp_path):
    manifest = write_manifest(tmp_path / "run.yaml", suite="suite/suite.json",
                              strategies=["RandomSearch", "Initial"], iterations=4, output_dir="results")
    main(["--quiet", "run", str(manifest), "--seed", "11", "--out", str(tmp_path / "a")])
    main(["--quiet", "run", str(manifest), "--seed", "11", "--out", str(tmp_path / "b"), "--jobs", "3"])
    a = pd.read_csv(tmp_path / "a" / "results.csv")
    b = pd.read_csv(tmp_path / "b" / "results.csv")
    pd.testing.assert_frame_equal(a.drop(columns="step_seconds"), b.drop(columns="step_seconds"))


def test_run_plebo_requires_prior(suite_dir, tmp_path):
    manifest = write_manifest(tmp_path / "run.yaml", suite="suite/suite.json", strategies=["PLeBO"])
    assert exit_code(["--quiet", "run", str(manifest)]) == 2


def test_run_unknown_strategy(suite_dir, tmp_path):
    manifest = write_manifest(tmp_path / "run.yaml", suite="suite/suite.json", strategies=["Bogus"])
    assert exit_code(["--quiet", "run", str(manifest)]) == 2


def test_plot_empty_csv(tmp_path):
    empty = tmp_path / "aggregate.csv"
    empty.write_text("")
    assert exit_code(["--quiet", "plot", str(empty)]) == 2
    empty.write_text(",".join(AGGREGATE_COLUMNS) + "\n")
    assert exit_code(["--quiet", "plot", str(empty)]) == 2


def test_plot_svg(tmp_path):
    frame = pd.DataFrame({
        "strategy": ["EI"] * 3 + ["UCB"] * 3,
        "iteration": [1, 2, 3] * 2,
        "mean": [0.5, 0.6, 0.7, 0.4, 0.5, 0.8],
        "stderr": [0.05] * 6,
        "J": [4] * 6,
        "reference": ["PLeBO"] * 6,
    })
    csv = tmp_path / "difference.csv"
    frame.to_csv(csv, index=False)
    main(["--quiet", "plot", str(csv), "--title", "difference"])
    root = ET.parse(tmp_path / "difference.svg").getroot()
    assert root.tag.endswith("svg")


def test_verbose_logs_configuration(tmp_path):
    main(["--verbose", "--quiet", "gen-synthetic", "--out", str(tmp_path / "s"), *GEN_FLAGS])
    logger.remove()
    log_text = (tmp_path / "logs" / "plebo.log").read_text()
    assert "configuration" in log_text and "JITTER_LADDER" in log_text


FIT_FLAGS = ["--chains", "2", "--warmup", "20", "--samples", "10", "--n-candidates", "5", "--seed", "2"]


def test_fit_prior_same_seed_same_candidates(suite_dir, tmp_path):
    manifest = str(suite_dir / "suite.json")
    main(["--quiet", "fit-prior", manifest, "--out", str(tmp_path / "a"), *FIT_FLAGS])
    main(["--quiet", "fit-prior", manifest, "--out", str(tmp_path / "b"), *FIT_FLAGS, "--jobs", "2"])
    assert (tmp_path / "a" / "candidates.json").read_bytes() == (tmp_path / "b" / "candidates.json").read_bytes()


def test_run_plebo_against_ei(suite_dir, tmp_path):
    main(["--quiet", "fit-prior", str(suite_dir / "suite.json"), *FIT_FLAGS])
    manifest = write_manifest(tmp_path / "run.json", suite="suite/suite.json", candidates="suite/candidates.json",
                              strategies=["PLeBO", {"name": "EI", "options": {"fit_restarts": 1}}],
                              iterations=3, seed=0, output_dir="results")
    main(["--quiet", "run", str(manifest), "--jobs", "1"])
    diff = pd.read_csv(tmp_path / "results" / "difference.csv")
    assert set(diff["strategy"]) == {"EI"} and set(diff["reference"]) == {"PLeBO"}
    assert list(diff["iteration"]) == [1, 2, 3]


def write_pollution_suite(root, rng, positive=True):
    root.mkdir()
    tasks = []
    for n in range(3):
        values = rng.lognormal(mean=1.0, sigma=0.5, size=(5, 5))
        if not positive:
            values[0, 0] = -1.0
        rows = "\n".join(",".join(repr(float(v)) for v in row) for row in values)
        (root / f"snap{n}.csv").write_text(f"# name=snap{n}\n# rows=5 cols=5 x0=0 y0=0 dx=0.25 dy=0.25\n{rows}\n")
        role = "tuning" if n < 2 else "test"
        entry = {"file": f"snap{n}.csv", "role": role, "preprocess": True}
        if role == "test":
            entry["start_indices"] = [0, 12, 24]
        tasks.append(entry)
    (root / "suite.json").write_text(json.dumps({"tasks": tasks}))
    return root / "suite.json"


def test_pollution_suite_pipeline(tmp_path):
    suite = write_pollution_suite(tmp_path / "no2", np.random.default_rng(0))
    main(["--quiet", "fit-prior", str(suite), "--chains", "1", "--warmup", "20", "--samples", "10",
          "--n-candidates", "3", "--seed", "0"])
    manifest = write_manifest(tmp_path / "run.yaml", suite="no2/suite.json", candidates="no2/candidates.json",
                              strategies=["PLeBO", "RandomSearch"], iterations=4, seed=0, output_dir="results")
    main(["--quiet", "run", str(manifest), "--jobs", "1"])
    raw = pd.read_csv(tmp_path / "results" / "results.csv")
    assert len(raw) == 8
    # a standardised sample of 25 values lies within sqrt(24) of zero
    assert raw["observed_y"].abs().max() <= np.sqrt(24) + 1e-9


def test_pollution_suite_non_positive_values(tmp_path):
    suite = write_pollution_suite(tmp_path / "no2", np.random.default_rng(0), positive=False)
    assert exit_code(["--quiet", "fit-prior", str(suite), "--chains", "1", "--samples", "5", "--warmup", "5"]) == 2


def test_run_unknown_strategy_option(suite_dir, tmp_path):
    manifest = write_manifest(tmp_path / "run.yaml", suite="suite/suite.json",
                              strategies=[{"name": "EI", "options": {"refit_evry": 3}}], iterations=2)
    assert exit_code(["--quiet", "run", str(manifest)]) == 2
    assert not (tmp_path / "results").exists()
