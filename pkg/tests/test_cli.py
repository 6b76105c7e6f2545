"""コマンドラインのテスト."""

import json
from pathlib import Path

import pytest
import yaml

from nlcontrol import cli
from nlcontrol.cli import main
from nlcontrol.core.database import DatabaseManager, get_session
from nlcontrol.models import ExperimentRun
from nlcontrol.utils.io import read_json, read_table, write_json

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _write(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


@pytest.fixture
def state_config(tmp_path):
    return _write(
        tmp_path / "state.yaml",
        {
            "kind": "solve-state",
            "grid": {"box": [[0.0, 1.0]], "h": 0.03125},
            "kernel": {"s": 0.5, "delta": 0.125},
            "energy": {"p": 3.0},
            "control": {"load": {"kind": "constant", "value": [1.0]}},
        },
    )


class TestValidate:
    def test_valid_config(self, capsys):
        code = main(
            ["validate", "--config", str(CONFIG_DIR / "solve-state-1d.yaml")]
        )
        assert code == 0
        assert json.loads(capsys.readouterr().out) == []

    def test_invalid_config(self, capsys):
        code = main(
            ["validate", "--config", str(CONFIG_DIR / "invalid-box.yaml")]
        )
        assert code == 2
        report = json.loads(capsys.readouterr().out)
        assert [v["path"] for v in report] == ["control.lower"]

    def test_needs_config(self):
        assert main(["validate"]) == 2


def test_check_writes_outputs(tmp_path):
    out = tmp_path / "check"
    code = main(["check", "--out", str(out), "--database-url", ""])
    assert code == 0
    for name in ("results.csv", "summary.json", "manifest.json", "run.log"):
        assert (out / name).exists()
    assert read_json(out / "summary.json")["passed"] is True
    manifest = read_json(out / "manifest.json")
    assert manifest["status"] == "success"
    assert manifest["exit_code"] == 0
    assert sorted(manifest["artifacts"]) == ["results.csv", "summary.json"]
    assert manifest["host"]["cpu_count"] >= 1


def test_check_is_deterministic(tmp_path):
    tables = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["check", "--out", str(out), "--database-url", ""]) == 0
        tables.append((out / "results.csv").read_text(encoding="utf-8"))
    assert tables[0] == tables[1]


def test_invalid_config_exits_before_running(tmp_path):
    out = tmp_path / "never"
    code = main(
        [
            "solve-control",
            "--config",
            str(CONFIG_DIR / "invalid-box.yaml"),
            "--out",
            str(out),
            "--database-url",
            "",
        ]
    )
    assert code == 2
    assert not out.exists()


def test_missing_config_for_solver_kind(tmp_path):
    assert main(["solve-state", "--out", str(tmp_path)]) == 2


def test_solve_state_writes_fields(state_config, tmp_path):
    out = tmp_path / "state"
    code = main(
        [
            "solve-state",
            "--config",
            str(state_config),
            "--out",
            str(out),
            "--database-url",
            "",
        ]
    )
    assert code == 0
    assert (out / "fields" / "u.bin").exists()
    assert (out / "fields" / "u.json").exists()
    table = read_table(out / "results.csv")
    assert list(table.columns) == ["iteration", "energy", "variation_norm"]
    summary = read_json(out / "summary.json")
    assert summary["energy"] < 0.0


def test_solver_failure_exit_code(state_config, tmp_path):
    data = yaml.safe_load(state_config.read_text(encoding="utf-8"))
    data["solver"] = {"state": {"max_iter": 1}}
    config = _write(tmp_path / "short.yaml", data)
    out = tmp_path / "short"
    code = main(
        [
            "solve-state",
            "--config",
            str(config),
            "--out",
            str(out),
            "--database-url",
            "",
        ]
    )
    assert code == 3
    assert read_json(out / "manifest.json")["status"] == "solver"


def test_probe_is_recorded(tmp_path):
    config = _write(
        tmp_path / "probe.yaml",
        {
            "kind": "operator-probe",
            "grid": {"box": [[0.0, 1.0]], "h": 0.03125},
            "kernel": {"delta": 0.125},
            "sweep": {"variable": "s", "ladder": [0.5, 0.9]},
        },
    )
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    out = tmp_path / "probe"
    try:
        code = main(
            [
                "operator-probe",
                "--config",
                str(config),
                "--out",
                str(out),
                "--seed",
                "9",
                "--database-url",
                url,
            ]
        )
        assert code == 0
        summary = read_json(out / "summary.json")
        assert summary["ladder"] == [0.5, 0.9]
        assert "strictly_decreasing" in summary
        with get_session(url) as db:
            run = db.get(ExperimentRun, 1)
            assert run.kind == "operator-probe"
            assert run.seed == 9
            assert run.status == "success"
            assert len(run.points) == 2
    finally:
        DatabaseManager(url).close()


def _run(kind, config, out, url=""):
    return main(
        [
            kind,
            "--config",
            str(config),
            "--out",
            str(out),
            "--database-url",
            url,
        ]
    )


def _small_sweep(tmp_path, ladder, **sweep):
    return _write(
        tmp_path / "sweep.yaml",
        {
            "kind": "sweep-s",
            "grid": {"box": [[0.0, 1.0]], "h": 0.03125},
            "kernel": {"delta": 0.125},
            "control": {
                "u_des": {"kind": "constant", "value": [0.1]},
                "load": {"kind": "constant", "value": [1.0]},
            },
            "sweep": {"ladder": ladder, **sweep},
        },
    )


def test_control_max_iter_is_a_solver_failure(tmp_path):
    config = _write(
        tmp_path / "control.yaml",
        {
            "kind": "solve-control",
            "grid": {"box": [[0.0, 1.0]], "h": 0.03125},
            "kernel": {"s": 0.5, "delta": 0.125},
            "control": {"u_des": {"kind": "constant", "value": [0.1]}},
            "solver": {"control": {"max_iter": 1}},
        },
    )
    out = tmp_path / "control"
    assert _run("solve-control", config, out) == 3
    manifest = read_json(out / "manifest.json")
    assert manifest["status"] == "solver"
    assert manifest["summary"]["status"] == "max_iter"
    assert "results.csv" in manifest["artifacts"]


def test_failed_trend_verdict_is_a_solver_failure(tmp_path):
    # 梯子点が 1 つでは傾向判定が成立しない
    config = _small_sweep(tmp_path, [0.9])
    out = tmp_path / "sweep"
    assert _run("sweep-s", config, out) == 3
    manifest = read_json(out / "manifest.json")
    assert manifest["status"] == "solver"
    assert manifest["verdicts"]["trends"] is False
    assert read_json(out / "summary.json")["passed"] is False


def test_artifacts_survive_a_later_stage_failure(tmp_path, monkeypatch):
    def _broken(config):
        raise RuntimeError("poincare stage exploded")

    monkeypatch.setattr(cli, "poincare_sweep", _broken)
    config = _small_sweep(tmp_path, [0.6, 0.9], poincare=True)
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    out = tmp_path / "sweep"
    try:
        assert _run("sweep-s", config, out, url) == 3
        manifest = read_json(out / "manifest.json")
        assert manifest["status"] == "solver"
        assert manifest["exit_code"] == 3
        assert {"results.csv", "summary.json"} <= set(manifest["artifacts"])
        assert "poincare_spread" not in manifest["verdicts"]
        with get_session(url) as db:
            run = db.get(ExperimentRun, 1)
            assert run.status == "solver"
            assert run.exit_code == 3
            assert run.finished_at is not None
            assert {p.value for p in run.points} == {0.6, 0.9}
    finally:
        DatabaseManager(url).close()


def test_unexpected_exception_maps_to_solver_exit(
    state_config, tmp_path, monkeypatch
):
    def _broken(config, out_dir, outcome):
        outcome.artifacts["partial"] = write_json(
            out_dir / "partial.json", {"stage": 1}
        )
        raise ValueError("unexpected")

    monkeypatch.setitem(cli.RUNNERS, "solve-state", _broken)
    out = tmp_path / "state"
    assert _run("solve-state", state_config, out) == 3
    manifest = read_json(out / "manifest.json")
    assert manifest["status"] == "solver"
    assert manifest["artifacts"] == ["partial.json"]
    log = (out / "run.log").read_text(encoding="utf-8")
    assert "ValueError: unexpected" in log
