"""Integration tests for experiment runs, traces, summaries and plot data."""

import json
import logging
from pathlib import Path

import pandas as pd
import pytest

from environments import ClassificationBanditEnv, RegretTrace
from experiment_config import ExperimentConfig, config_hash
from harness import (
    emit_plot_data,
    expand_sweeps,
    load_resources,
    load_traces,
    regret_is_consistent,
    run_experiment,
    run_job,
    slugify,
    summarize,
    validate_experiment,
)
from road_network import NavigationEnv

SMALL_ENSEMBLE = {"n_trees": 5, "max_depth": 3}


def _toy_config(fixtures_dir: Path, schemas_dir: Path, **overrides) -> ExperimentConfig:
    data = {
        "name": "toy-test",
        "environment": {
            "kind": "classification",
            "dataset": str(fixtures_dir / "toy.csv"),
            "dataset_schema": str(schemas_dir / "toy.json"),
        },
        "agents": [
            {"kind": "teucb", "ensemble": {**SMALL_ENSEMBLE, "trainer": "boosting"}, "policy": {"initial_rounds": 15}},
            {"kind": "tets", "ensemble": {**SMALL_ENSEMBLE, "trainer": "bagging"}, "policy": {"initial_rounds": 15}},
            {"kind": "linucb"},
            {"kind": "random"},
            {"kind": "oracle"},
        ],
        "horizon": 60,
        "seeds": [0, 1],
        "workers": 1,
    }
    data.update(overrides)
    return ExperimentConfig.model_validate(data)


def _nav_config(fixtures_dir: Path, **overrides) -> ExperimentConfig:
    data = {
        "name": "nav-test",
        "environment": {"kind": "navigation", "network": str(fixtures_dir / "network-diamond.json"), "instance": "across"},
        "agents": [
            {"kind": "tets", "ensemble": {**SMALL_ENSEMBLE, "trainer": "bagging"}},
            {"kind": "linucb"},
            {"kind": "treebootstrap", "ensemble": {"max_depth": 3}},
            {"kind": "oracle"},
        ],
        "horizon": 30,
        "seeds": [0],
        "workers": 1,
    }
    data.update(overrides)
    return ExperimentConfig.model_validate(data)


def test_classification_run_writes_outputs(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path) -> None:
    """A run writes traces, metadata, checkpoints, summary and plot data."""
    config = _toy_config(fixtures_dir, schemas_dir)
    summaries = run_experiment(config, output_dir=tmp_path)
    labels = {s.agent for s in summaries}
    assert labels == {"teucb-gbdt", "tets-rf", "linucb", "random", "oracle"}
    for name in ("config.resolved.json", "summary.json", "timings.json", "plotdata.csv"):
        assert (tmp_path / name).is_file()
    assert (tmp_path / "traces" / "tets-rf" / "seed-1.csv").is_file()
    assert (tmp_path / "checkpoints" / "teucb-gbdt" / "seed-0.json").is_file()
    assert not (tmp_path / "checkpoints" / "linucb").exists()
    by_agent = {s.agent: s for s in summaries}
    assert by_agent["oracle"].final_regrets == [0.0, 0.0]
    assert by_agent["random"].mean > 0.0
    meta = json.loads((tmp_path / "traces" / "tets-rf" / "seed-0.meta.json").read_text())
    assert meta["config_hash"] == config_hash(config)
    assert meta["complete"] is True
    assert meta["rebuilds"] >= 1


def test_runs_are_byte_identical(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path) -> None:
    """Same config and seeds give identical traces, metadata and checkpoints."""
    config = _toy_config(fixtures_dir, schemas_dir, seeds=[3])
    first, second = tmp_path / "a", tmp_path / "b"
    run_experiment(config, output_dir=first)
    run_experiment(config, output_dir=second)
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    compared = [p for p in files if p.parts[0] in ("traces", "checkpoints")]
    assert compared
    for rel in compared:
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel
    assert (first / "plotdata.csv").read_bytes() == (second / "plotdata.csv").read_bytes()


def test_plot_data_matches_summary(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path) -> None:
    """The last plot-data step equals the summary mean; every trace is internally consistent."""
    config = _toy_config(fixtures_dir, schemas_dir)
    summaries = run_experiment(config, output_dir=tmp_path)
    plot = pd.read_csv(tmp_path / "plotdata.csv")
    assert list(plot.columns) == ["step", "agent", "mean", "sd"]
    for s in summaries:
        rows = plot[plot["agent"] == s.agent]
        assert len(rows) == config.horizon
        assert rows["mean"].iloc[-1] == pytest.approx(s.mean)
        assert rows["sd"].iloc[-1] == pytest.approx(s.sd)
        assert (rows["mean"].diff().dropna() >= -1e-12).all()
    for trace in load_traces(tmp_path):
        assert regret_is_consistent(trace)
    resummarized = summarize(tmp_path)
    assert [s.mean for s in resummarized] == [s.mean for s in sorted(summaries, key=lambda s: s.agent)]


def test_delayed_feedback_refresh_count(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path) -> None:
    """Batches of B rounds give ceil(T / B) model refreshes."""
    config = _toy_config(fixtures_dir, schemas_dir, horizon=55, feedback_batch_size=10, seeds=[0])
    run_experiment(config, output_dir=tmp_path)
    meta = json.loads((tmp_path / "traces" / "tets-rf" / "seed-0.meta.json").read_text())
    assert meta["model_refreshes"] == 6
    assert meta["feedback_batch_size"] == 10


def test_resume_skips_finished_jobs(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path) -> None:
    config = _toy_config(fixtures_dir, schemas_dir, seeds=[0])
    run_experiment(config, output_dir=tmp_path)
    variant = next(v for v in expand_sweeps(config) if v.label == "linucb")
    resources = load_resources(config)
    again = run_job(config, config_hash(config), variant, 0, resources, tmp_path)
    assert again.resumed
    changed = config.model_copy(update={"horizon": 40})
    rerun = run_job(changed, config_hash(changed), variant, 0, resources, tmp_path)
    assert not rerun.resumed
    assert len(RegretTrace.read_csv(tmp_path / "traces" / "linucb" / "seed-0.csv", "linucb", 0)) == 40


def test_sweep_labels(fixtures_dir: Path, schemas_dir: Path) -> None:
    """Sweeps expand every agent into labelled variants."""
    config = _toy_config(
        fixtures_dir,
        schemas_dir,
        agents=[{"kind": "teucb", "ensemble": SMALL_ENSEMBLE}],
        sweeps=[
            {"parameter": "ensemble.max_depth", "values": [2, 4]},
            {"parameter": "policy.exploration", "values": [0.5]},
        ],
    )
    variants = expand_sweeps(config)
    assert [v.label for v in variants] == [
        "teucb-gbdt[ensemble.max_depth=2][policy.exploration=0.5]",
        "teucb-gbdt[ensemble.max_depth=4][policy.exploration=0.5]",
    ]
    assert [v.spec.ensemble.max_depth for v in variants] == [2, 4]
    assert variants[0].spec.policy.exploration == 0.5
    batched = _toy_config(
        fixtures_dir,
        schemas_dir,
        agents=[{"kind": "random"}],
        sweeps=[{"parameter": "feedback_batch_size", "values": [1, 25]}],
    )
    assert [v.batch_size for v in expand_sweeps(batched)] == [1, 25]


def test_horizon_exceeding_dataset_is_rejected(fixtures_dir: Path, schemas_dir: Path) -> None:
    config = _toy_config(fixtures_dir, schemas_dir, horizon=241)
    with pytest.raises(ValueError, match="horizon exceeds dataset"):
        validate_experiment(config)


def test_missing_dataset_file(fixtures_dir: Path, schemas_dir: Path, tmp_path: Path) -> None:
    config = _toy_config(fixtures_dir, schemas_dir)
    data = config.model_dump(mode="json")
    data["environment"]["dataset"] = "no-such-file.csv"
    with pytest.raises(FileNotFoundError, match="dataset not found"):
        validate_experiment(ExperimentConfig.model_validate(data), tmp_path)


def test_navigation_run(tmp_path: Path, fixtures_dir: Path) -> None:
    """Combinatorial agents route on the diamond network; the oracle has zero regret."""
    config = _nav_config(fixtures_dir)
    summaries = {s.agent: s for s in run_experiment(config, output_dir=tmp_path)}
    assert set(summaries) == {"tets-rf", "linucb", "treebootstrap-tree", "oracle"}
    assert summaries["oracle"].final_regrets == [0.0]
    trace = RegretTrace.read_csv(tmp_path / "traces" / "tets-rf" / "seed-0.csv", "tets-rf", 0)
    assert len(trace) == 30
    assert all(reward < 0.0 for reward in trace.rewards)
    assert set(trace.choices) <= {"4", "0-1", "2-3"}
    assert regret_is_consistent(trace)


def test_emit_plot_data_rejects_mismatched_horizons() -> None:
    short = RegretTrace("a", 0, "h")
    short.record(0, 1.0, 0.0)
    long = RegretTrace("a", 1, "h")
    long.record(0, 1.0, 0.0)
    long.record(1, 0.0, 1.0)
    with pytest.raises(ValueError, match="mismatched horizons"):
        emit_plot_data([short, long])
    single = emit_plot_data([long])
    assert single["mean"].tolist() == [0.0, 1.0]
    assert single["sd"].tolist() == [0.0, 0.0]


def test_summarize_without_traces(tmp_path: Path) -> None:
    with pytest.raises(ValueError, match="no traces found"):
        summarize(tmp_path)


class _Interrupted(Exception):
    pass


def _interrupt_after(mp: pytest.MonkeyPatch, env_cls: type, rounds: int) -> None:
    """Make ``env_cls.step`` raise once ``rounds`` steps have been taken."""
    original = env_cls.step
    calls = [0]

    def step(self, *args):
        calls[0] += 1
        if calls[0] > rounds:
            raise _Interrupted
        return original(self, *args)

    mp.setattr(env_cls, "step", step)


def _assert_resume_matches(config: ExperimentConfig, env_cls: type, rounds: int, saved_step: int, root: Path, caplog) -> None:
    cfg_hash = config_hash(config)
    resources = load_resources(config)
    for variant in expand_sweeps(config):
        slug = slugify(variant.label)
        run_job(config, cfg_hash, variant, 0, resources, root / "straight")
        with pytest.MonkeyPatch.context() as mp:
            _interrupt_after(mp, env_cls, rounds)
            with pytest.raises(_Interrupted):
                run_job(config, cfg_hash, variant, 0, resources, root / "interrupted")
        partial = root / "interrupted" / "checkpoints" / slug / "seed-0.partial.json"
        assert json.loads(partial.read_text(encoding="utf-8"))["step"] == saved_step, variant.label
        assert not (root / "interrupted" / "traces" / slug / "seed-0.csv").exists()

        caplog.clear()
        with caplog.at_level(logging.INFO, logger="harness"):
            result = run_job(config, cfg_hash, variant, 0, resources, root / "interrupted")
        assert not result.resumed
        assert f"step={saved_step}" in caplog.text and "Resuming job from checkpoint" in caplog.text
        assert not partial.exists()
        for rel in (Path("traces") / slug / "seed-0.csv", Path("traces") / slug / "seed-0.meta.json"):
            assert (root / "interrupted" / rel).read_bytes() == (root / "straight" / rel).read_bytes(), (variant.label, rel)
        final = Path("checkpoints") / slug / "seed-0.json"
        if (root / "straight" / final).exists():
            assert (root / "interrupted" / final).read_bytes() == (root / "straight" / final).read_bytes()


def test_interrupted_classification_job_resumes_identically(
    tmp_path: Path, fixtures_dir: Path, schemas_dir: Path, caplog: pytest.LogCaptureFixture
) -> None:
    """Every agent kind picks up from its last checkpoint and writes the uninterrupted trace."""
    config = _toy_config(
        fixtures_dir,
        schemas_dir,
        agents=[
            {"kind": "teucb", "ensemble": {**SMALL_ENSEMBLE, "trainer": "boosting"}, "policy": {"initial_rounds": 15}},
            {"kind": "tets", "ensemble": {**SMALL_ENSEMBLE, "trainer": "bagging"}, "policy": {"initial_rounds": 15}},
            {"kind": "linucb"},
            {"kind": "lints"},
            {"kind": "ucb1_normal"},
            {"kind": "treebootstrap", "ensemble": {"max_depth": 3}},
            {"kind": "random"},
        ],
        seeds=[0],
        feedback_batch_size=3,
        checkpoint_every=10,
    )
    # Deliveries land every 3 rounds, so checkpoints fall on rounds 12 and 24.
    _assert_resume_matches(config, ClassificationBanditEnv, 35, 24, tmp_path, caplog)


def test_interrupted_navigation_job_resumes_identically(
    tmp_path: Path, fixtures_dir: Path, caplog: pytest.LogCaptureFixture
) -> None:
    """Travel-time draws continue from the saved generator state after a resume."""
    config = _nav_config(fixtures_dir, checkpoint_every=5)
    _assert_resume_matches(config, NavigationEnv, 17, 15, tmp_path, caplog)


def test_stale_job_checkpoint_is_ignored(
    tmp_path: Path, fixtures_dir: Path, schemas_dir: Path, caplog: pytest.LogCaptureFixture
) -> None:
    config = _toy_config(fixtures_dir, schemas_dir, agents=[{"kind": "linucb"}], seeds=[0], checkpoint_every=10)
    (variant,) = expand_sweeps(config)
    resources = load_resources(config)
    with pytest.MonkeyPatch.context() as mp:
        _interrupt_after(mp, ClassificationBanditEnv, 25)
        with pytest.raises(_Interrupted):
            run_job(config, config_hash(config), variant, 0, resources, tmp_path)
    changed = config.model_copy(update={"horizon": 50})
    with caplog.at_level(logging.WARNING, logger="harness"):
        run_job(changed, config_hash(changed), variant, 0, resources, tmp_path)
    assert "Ignoring stale job checkpoint" in caplog.text
    assert len(RegretTrace.read_csv(tmp_path / "traces" / "linucb" / "seed-0.csv", "linucb", 0)) == 50
    assert not (tmp_path / "checkpoints" / "linucb" / "seed-0.partial.json").exists()
