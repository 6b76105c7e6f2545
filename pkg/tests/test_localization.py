"""局所化スイープと診断のテスト."""

import math
import threading

import numpy as np
import pytest
import scipy.linalg

from nlcontrol.core.exceptions import ConfigValidationError
from nlcontrol.discretization import (
    CutoffSpec,
    KernelMode,
    KernelSpec,
    assemble_nl_gradient,
    build_grid,
    kernel_mass,
)
from nlcontrol.services.energy import (
    EnergyParams,
    constant_coefficient,
    eval_hessian_matrix,
)
from nlcontrol.services.localization import (
    PoincareRecord,
    ProbeRecord,
    SweepConfig,
    constant_spread,
    estimate_poincare,
    gamma_proxy,
    map_ladder,
    operator_localization_probe,
    poincare,
    spread_passed,
    sweep,
    trend_verdict,
    weighted_lp,
    write_sweep_outputs,
)
from nlcontrol.services.setup import FieldSpec, ProblemSpec
from nlcontrol.services.state import LocalDomain
from nlcontrol.utils.io import read_json, read_table

UNIT = ((0.0, 1.0),)


class TestTrendVerdict:
    def test_decreasing_series_passes(self):
        verdict = trend_verdict("e", [1.0, 0.6, 0.3, 0.1])
        assert verdict.passed
        assert verdict.near_monotone
        assert verdict.ratio == pytest.approx(0.1)
        assert verdict.points == 4

    def test_insufficient_reduction_fails(self):
        verdict = trend_verdict("e", [1.0, 0.9, 0.8])
        assert verdict.near_monotone
        assert not verdict.passed

    def test_increase_beyond_slack_fails(self):
        verdict = trend_verdict("e", [1.0, 1.2, 0.3])
        assert not verdict.near_monotone
        assert not verdict.passed

    def test_small_increase_within_slack(self):
        assert trend_verdict("e", [1.0, 1.04, 0.2]).passed

    def test_all_zero_passes(self):
        verdict = trend_verdict("e", [0.0, 1e-14, 0.0])
        assert verdict.passed
        assert verdict.ratio == 0.0

    def test_failed_points_are_skipped(self):
        verdict = trend_verdict("e", [math.nan, 1.0, 0.2])
        assert verdict.points == 2
        assert verdict.first == 1.0
        assert verdict.passed

    @pytest.mark.parametrize("values", [[math.nan, math.nan], [1.0]])
    def test_too_few_points_fail(self, values):
        assert not trend_verdict("e", values).passed

    def test_to_dict_replaces_nan(self):
        data = trend_verdict("e", [math.nan]).to_dict()
        assert data["first"] is None
        assert data["passed"] is False


def test_write_sweep_outputs(tmp_path):
    records = [
        ProbeRecord(0.3, operator_error=1.0),
        ProbeRecord(0.5, operator_error=0.4),
        ProbeRecord(0.7, error="GridError: broken"),
    ]
    artifacts = write_sweep_outputs(
        records, tmp_path / "sweep", "s", extra={"seed": 5}
    )
    table = read_table(artifacts["results"])
    assert list(table["value"]) == [0.3, 0.5, 0.7]
    assert "operator_error" in table.columns

    plot = np.loadtxt(artifacts["plot:operator_error"])
    assert plot.shape == (3, 2)
    np.testing.assert_allclose(plot[:2, 1], [1.0, 0.4])

    summary = read_json(artifacts["summary"])
    assert summary["variable"] == "s"
    assert summary["points"] == 3
    assert summary["failed"] == [{"value": 0.7, "error": "GridError: broken"}]
    assert summary["trends"]["operator_error"]["points"] == 2
    assert summary["passed"] is True
    assert summary["seed"] == 5


def test_weighted_lp():
    values = np.array([[3.0, 4.0], [0.0, 0.0]])
    weights = np.array([0.5, 0.5])
    assert weighted_lp(values, weights, 2.0) == pytest.approx(
        math.sqrt(12.5)
    )
    assert weighted_lp(values, weights, np.inf) == 5.0
    assert weighted_lp(values[:0], weights[:0], 2.0) == 0.0


def test_map_ladder_keeps_order():
    seen = set()

    def square(value):
        seen.add(threading.get_ident())
        return value * value

    ladder = [0.1, 0.2, 0.3, 0.4, 0.5]
    assert map_ladder(square, ladder, threads=3) == pytest.approx(
        [v * v for v in ladder]
    )
    assert map_ladder(square, ladder, threads=1) == pytest.approx(
        [v * v for v in ladder]
    )
    assert seen


class TestSweepConfig:
    def test_s_sweep_requires_unit_a0(self):
        with pytest.raises(ConfigValidationError) as info:
            SweepConfig(
                variable="s",
                ladder=(0.5, 0.9),
                box=UNIT,
                h=1 / 16,
                cutoff=CutoffSpec(a0=2.0),
            )
        assert [v.path for v in info.value.violations] == ["kernel.a0"]

    @pytest.mark.parametrize(
        "variable,ladder,path",
        [
            ("s", (0.5, 1.0), "sweep.ladder[1]"),
            ("delta", (0.25, 0.1), "sweep.ladder[1]"),
            ("delta", (0.0625,), "sweep.ladder[0]"),
            ("t", (0.5,), "sweep.variable"),
            ("s", (), "sweep.ladder"),
        ],
    )
    def test_violations(self, variable, ladder, path):
        with pytest.raises(ConfigValidationError) as info:
            SweepConfig(variable=variable, ladder=ladder, box=UNIT, h=1 / 16)
        assert path in [v.path for v in info.value.violations]

    def test_delta_sweep_rescales_to_mass_n(self):
        config = SweepConfig(
            variable="delta", ladder=(0.25, 0.125), box=UNIT, h=1 / 32
        )
        for delta in config.ladder:
            kernel = config.kernel_at(delta)
            assert kernel.mode == KernelMode.RESCALED
            assert kernel_mass(kernel) == pytest.approx(1.0, rel=1e-10)
            assert config.grid_at(delta).delta == pytest.approx(delta)

    def test_references(self):
        s_config = SweepConfig(
            variable="s", ladder=(0.5,), box=UNIT, h=1 / 16, delta=0.25
        )
        reference = s_config.reference()
        assert reference.domain == LocalDomain.DEFLATED
        assert reference.grid.layers == 4
        delta_config = SweepConfig(
            variable="delta", ladder=(0.25,), box=UNIT, h=1 / 16
        )
        reference = delta_config.reference()
        assert reference.domain == LocalDomain.FULL
        assert reference.grid.layers == 1


class TestPoincare:
    def test_quadratic_constant_matches_dense_eigenvalue(
        self, op_1d, grid_1d
    ):
        estimate = estimate_poincare(op_1d, p=2.0)
        params = EnergyParams(
            p=2.0, coefficient=constant_coefficient(grid_1d, 1.0)
        )
        K = eval_hessian_matrix(grid_1d.zeros(), op_1d, params).toarray()
        smallest = scipy.linalg.eigvalsh(K / grid_1d.cell_volume)[0]
        assert estimate.method == "inverse-power"
        assert not estimate.lower_bound
        assert estimate.constant == pytest.approx(
            1.0 / math.sqrt(smallest), rel=1e-6
        )

    def test_inequality_holds_for_random_fields(
        self, op_1d, grid_1d, free_field
    ):
        constant = estimate_poincare(op_1d, p=2.0).constant
        h = grid_1d.cell_volume
        for _ in range(5):
            u = free_field(grid_1d)
            Du = op_1d.apply(u.values)
            lhs = math.sqrt(np.sum(u.values**2) * h)
            rhs = math.sqrt(
                np.sum(op_1d.quad_weights[:, None, None] * Du**2)
            )
            assert lhs <= constant * rhs * (1.0 + 1e-9)

    def test_other_exponents_give_lower_bound(self, op_1d):
        estimate = estimate_poincare(op_1d, p=3.0, starts=2, seed=1)
        assert estimate.method == "ascent"
        assert estimate.lower_bound
        assert estimate.constant > 0.0

    def test_constant_spread(self):
        records = [
            PoincareRecord(0.5, constant=1.0),
            PoincareRecord(0.7, constant=2.0),
            PoincareRecord(0.9, error="EstimationError: stuck"),
        ]
        assert constant_spread(records) == 2.0
        assert math.isnan(constant_spread(records[2:]))

    def test_spread_verdict(self):
        records = [
            PoincareRecord(0.5, constant=1.0),
            PoincareRecord(0.9, constant=4.0),
        ]
        assert spread_passed(records)
        assert not spread_passed(records + [PoincareRecord(0.95, 6.0)])
        assert not spread_passed(
            records + [PoincareRecord(0.95, error="EstimationError: stuck")]
        )
        assert not spread_passed([])

    def test_frozen_instance_matches_dense_eigensolve(self):
        grid = build_grid(UNIT, 1 / 64, 0.25)
        op = assemble_nl_gradient(grid, KernelSpec(1, 0.5, 0.25))
        params = EnergyParams(
            p=2.0, coefficient=constant_coefficient(grid, 1.0)
        )
        K = eval_hessian_matrix(grid.zeros(), op, params).toarray()
        smallest = scipy.linalg.eigvalsh(K / grid.cell_volume)[0]
        estimate = estimate_poincare(op, p=2.0)
        assert estimate.constant == pytest.approx(
            1.0 / math.sqrt(smallest), rel=1e-6
        )

    def test_other_exponents_skip_the_eigenpair(self, op_1d, monkeypatch):
        def _unexpected(*args, **kwargs):
            raise AssertionError("eigenpair computed for p != 2")

        monkeypatch.setattr(poincare, "_smallest_eigenpair", _unexpected)
        estimate = estimate_poincare(op_1d, p=4.0, starts=2, seed=3)
        assert estimate.method == "ascent"
        assert estimate.constant > 0.0


class TestProbe:
    def test_affine_field_is_exact_with_mass_normalization(self):
        config = SweepConfig(
            variable="s", ladder=(0.3, 0.8), box=UNIT, h=1 / 32, delta=0.125
        )
        affine = FieldSpec(kind="affine", value=(0.5,), matrix=((2.0,),))
        records = operator_localization_probe(
            config, u_test=affine, mass_normalized=True
        )
        assert [r.value for r in records] == [0.3, 0.8]
        for record in records:
            assert record.ok
            assert record.operator_error < 1e-9

    def test_bump_error_shrinks_as_s_grows(self):
        config = SweepConfig(
            variable="s",
            ladder=(0.3, 0.9, 0.99),
            box=UNIT,
            h=1 / 64,
            delta=0.125,
        )
        records = operator_localization_probe(config)
        errors = [r.operator_error for r in records]
        assert all(np.isfinite(errors))
        assert errors[-1] < errors[0]


@pytest.mark.slow
class TestSweeps:
    @pytest.fixture
    def config(self):
        return SweepConfig(
            variable="s",
            ladder=(0.6, 0.9),
            box=UNIT,
            h=1 / 32,
            delta=0.125,
            problem=ProblemSpec(
                u_des=FieldSpec(kind="constant", value=(0.1,)),
                load=FieldSpec(kind="constant", value=(1.0,)),
            ),
        )

    def test_control_sweep_records_every_point(self, config):
        records = sweep(config)
        assert [r.value for r in records] == [0.6, 0.9]
        for record in records:
            assert record.ok
            assert record.status in ("converged", "stalled", "max_iter")
            assert all(np.isfinite(list(record.metrics().values())))

    def test_gamma_proxy_recovery_dominates_minimum(self, config):
        for record in gamma_proxy(config):
            assert record.ok
            assert record.recovery >= record.nonlocal_min - 1e-10


@pytest.mark.slow
class TestDeltaSweeps:
    @pytest.fixture
    def config(self):
        return SweepConfig(
            variable="delta",
            ladder=(0.25, 0.125, 0.0625),
            box=UNIT,
            h=1 / 32,
            problem=ProblemSpec(
                u_des=FieldSpec(kind="constant", value=(0.1,)),
                load=FieldSpec(kind="constant", value=(1.0,)),
            ),
        )

    def test_control_sweep_converges_at_every_point(self, config):
        records = sweep(config)
        assert [r.value for r in records] == [0.25, 0.125, 0.0625]
        for record in records:
            assert record.ok
            assert record.converged
        assert records[-1].state_error < records[0].state_error

    def test_gamma_proxy_gap_shrinks(self, config):
        records = gamma_proxy(config)
        for record in records:
            assert record.ok
            assert record.recovery >= record.nonlocal_min - 1e-10
        assert records[-1].gap < records[0].gap
