"""実行記録データベースのテスト."""

import math

import pytest
from sqlalchemy import select

from nlcontrol.core.database import (
    DatabaseManager,
    RunRecorder,
    finish_run,
    get_session,
    points_frame,
    record_run,
    record_sweep_points,
    runs_frame,
)
from nlcontrol.models import ExperimentRun, SweepPoint
from nlcontrol.services.localization import ProbeRecord


@pytest.fixture
def db_url(tmp_path):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    yield url
    DatabaseManager(url).close()


def test_manager_is_shared_per_url(db_url):
    assert DatabaseManager(db_url) is DatabaseManager(db_url)


def test_run_lifecycle(db_url):
    run_id = record_run(
        db_url, "poincare", 3, "0" * 32, {"kind": "poincare"}, "out"
    )
    records = [
        ProbeRecord(0.5, operator_error=0.25),
        ProbeRecord(0.9, error="GridError: broken"),
    ]
    assert record_sweep_points(db_url, run_id, records) == 2
    finish_run(db_url, run_id, "success", 0, 1.5)

    with get_session(db_url) as db:
        run = db.get(ExperimentRun, run_id)
        assert run.kind == "poincare"
        assert run.seed == 3
        assert run.status == "success"
        assert run.exit_code == 0
        assert run.wall_time == pytest.approx(1.5)
        assert run.finished_at is not None
        points = db.scalars(
            select(SweepPoint).order_by(SweepPoint.value)
        ).all()
        assert [p.metric for p in points] == ["operator_error"] * 2
        assert points[0].metric_value == pytest.approx(0.25)
        assert points[1].metric_value is None


def test_finish_unknown_run_is_ignored(db_url):
    finish_run(db_url, 999, "success", 0, 0.0)
    with get_session(db_url) as db:
        assert db.get(ExperimentRun, 999) is None


class TestRunRecorder:
    def test_disabled_without_url(self):
        recorder = RunRecorder("")
        assert not recorder.enabled
        assert recorder.start("check", 0, "x", {}, "out") is None
        assert recorder.add_points([ProbeRecord(0.5, 1.0)]) == 0
        recorder.finish("success", 0, 0.0)

    def test_records_a_run(self, db_url):
        recorder = RunRecorder(db_url)
        run_id = recorder.start("check", 1, "y" * 32, {"seed": 1}, "out")
        assert run_id is not None
        assert recorder.add_points([ProbeRecord(0.5, math.nan)]) == 1
        recorder.finish("solver", 3, 0.1)
        with get_session(db_url) as db:
            run = db.get(ExperimentRun, run_id)
            assert run.status == "solver"
            assert run.exit_code == 3
            assert len(run.points) == 1


class TestFrames:
    def test_runs_frame_filters_by_kind(self, db_url):
        for kind in ("check", "poincare", "check"):
            record_run(db_url, kind, 0, "z" * 32, {}, "out")
        frame = runs_frame(db_url, kind="check")
        assert list(frame["kind"]) == ["check", "check"]
        assert list(frame["id"]) == [3, 1]
        assert len(runs_frame(db_url, limit=1)) == 1

    def test_points_frame_pivots_metrics(self, db_url):
        run_id = record_run(db_url, "sweep-s", 0, "z" * 32, {}, "out")
        records = [
            ProbeRecord(0.5, operator_error=0.3),
            ProbeRecord(0.9, operator_error=0.1),
        ]
        record_sweep_points(db_url, run_id, records)
        frame = points_frame(db_url, run_id)
        assert list(frame.index) == [0.5, 0.9]
        assert list(frame["operator_error"]) == pytest.approx([0.3, 0.1])
        assert points_frame(db_url, run_id + 1).empty
