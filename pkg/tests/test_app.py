"""Tests for the command verbs and their exit codes."""

import json
from pathlib import Path

import pytest

from app import EXIT_INVALID, EXIT_OK, dispatch
from cli import main


def _write_config(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path, **overrides) -> Path:
    data = {
        "name": "cli-toy",
        "environment": {
            "kind": "classification",
            "dataset": str(fixtures_dir / "toy.csv"),
            "dataset_schema": str(schemas_dir / "toy.json"),
        },
        "agents": [{"kind": "random"}, {"kind": "oracle"}],
        "horizon": 20,
        "seeds": [0, 1],
    }
    data.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


def test_validate_ok(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path, capsys: pytest.CaptureFixture) -> None:
    """A valid config reports the dataset it found."""
    path = _write_config(tmp_path, fixtures_dir, schemas_dir)
    assert dispatch(["validate", str(path)]) == EXIT_OK
    assert "OK: cli-toy (dataset toy: 240 rows, 3 classes)" in capsys.readouterr().out


def test_validate_invalid_config(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path, capsys: pytest.CaptureFixture) -> None:
    """Field errors exit 2 and print the usage template."""
    path = _write_config(tmp_path, fixtures_dir, schemas_dir, horizon=0)
    assert dispatch(["validate", str(path)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "horizon:" in err
    assert "How to write an experiment config" in err


def test_validate_horizon_too_long(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path, capsys: pytest.CaptureFixture) -> None:
    path = _write_config(tmp_path, fixtures_dir, schemas_dir, horizon=500)
    assert dispatch(["validate", str(path)]) == EXIT_INVALID
    assert "horizon exceeds dataset" in capsys.readouterr().err


def test_validate_missing_and_malformed_files(tmp_path: Path) -> None:
    assert dispatch(["validate", str(tmp_path / "missing.json")]) == EXIT_INVALID
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert dispatch(["validate", str(bad)]) == EXIT_INVALID


def test_run_summarize_plotdata(tmp_path: Path, fixtures_dir: Path, schemas_dir: Path, capsys: pytest.CaptureFixture) -> None:
    """run writes results; summarize and plotdata read them back."""
    path = _write_config(tmp_path, fixtures_dir, schemas_dir)
    out = tmp_path / "results"
    assert dispatch(["run", str(path), "--output", str(out)]) == EXIT_OK
    assert "oracle: mean=0.000 sd=0.000 seeds=2" in capsys.readouterr().out
    assert dispatch(["summarize", str(out)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert {s["agent"] for s in summary} == {"random", "oracle"}
    target = tmp_path / "curves.csv"
    assert dispatch(["plotdata", str(out), "--output", str(target)]) == EXIT_OK
    assert target.read_text().splitlines()[0] == "step,agent,mean,sd"
    assert dispatch(["summarize", str(tmp_path / "empty")]) == EXIT_INVALID


def test_generate_network(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    target = tmp_path / "grid.json"
    assert dispatch(["generate-network", str(target), "--rows", "3", "--cols", "4", "--seed", "2"]) == EXIT_OK
    payload = json.loads(target.read_text())
    assert len(payload["vertices"]) == 12
    assert {p["name"] for p in payload["problem_instances"]} == {"diagonal", "anti-diagonal"}
    assert dispatch(["generate-network", str(target), "--rows", "1"]) == EXIT_INVALID


def test_main_maps_usage_errors(capsys: pytest.CaptureFixture) -> None:
    """Unknown verbs are argparse errors (exit 2)."""
    with pytest.raises(SystemExit) as excinfo:
        main(["nonsense"])
    assert excinfo.value.code == 2
