"""標準設定ファイルによる局所化実験の合否判定のテスト."""

from pathlib import Path

import pytest

from nlcontrol.cli import main
from nlcontrol.utils.io import read_json

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

pytestmark = pytest.mark.slow


def _run(kind, name, out):
    code = main(
        [
            kind,
            "--config",
            str(CONFIG_DIR / name),
            "--out",
            str(out),
            "--database-url",
            "",
        ]
    )
    return code, read_json(out / "manifest.json")


def test_delta_ladder_passes_every_verdict(tmp_path):
    code, manifest = _run("sweep-delta", "sweep-delta-1d.yaml", tmp_path)
    assert manifest["verdicts"] == {
        "trends": True,
        "recovery_bounds": True,
        "gamma_trends": True,
        "poincare_spread": True,
    }
    assert code == 0
    assert manifest["summary"]["poincare_spread"] <= 5.0
    rows = read_json(tmp_path / "summary.json")
    assert rows["failed"] == []


def test_operator_convergence_along_delta_ladder(tmp_path):
    code, manifest = _run(
        "operator-probe", "operator-probe-delta.yaml", tmp_path
    )
    assert code == 0
    assert manifest["verdicts"]["strictly_decreasing"] is True
    slope = manifest["summary"]["loglog_slope"]
    assert 1.0 / 3.0 <= slope <= 3.0


@pytest.fixture(scope="module")
def s_ladder(tmp_path_factory):
    return _run(
        "sweep-s", "sweep-s-1d.yaml", tmp_path_factory.mktemp("sweep-s")
    )


@pytest.mark.xfail(
    strict=False,
    reason=(
        "the collocated stencil annihilates the odd-even grid mode; its "
        "boundary remnant dominates the smallest eigenvalue at small s"
    ),
)
def test_s_ladder_passes_every_verdict(s_ladder):
    code, manifest = s_ladder
    assert all(manifest["verdicts"].values())
    assert code == 0


def test_s_ladder_reports_its_verdicts(s_ladder):
    code, manifest = s_ladder
    verdicts = manifest["verdicts"]
    assert set(verdicts) == {
        "trends",
        "recovery_bounds",
        "gamma_trends",
        "poincare_spread",
    }
    spread = manifest["summary"]["poincare_spread"]
    assert verdicts["poincare_spread"] == (spread <= 5.0)
    if not all(verdicts.values()):
        assert code == 3
    assert manifest["status"] == ("success" if code == 0 else "solver")
