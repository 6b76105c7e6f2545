"""状態ソルバーのテスト."""

import numpy as np
import pytest

from nlcontrol.core.exceptions import GridError, StateSolverError
from nlcontrol.discretization import (
    Field,
    assemble_local_gradient,
    build_grid,
)
from nlcontrol.services.energy import (
    EnergyParams,
    constant_coefficient,
    double_well,
    eval_hessian_matrix,
    eval_Y,
    free_dofs,
)
from nlcontrol.services.state import (
    FactorizedP2Solver,
    LocalDomain,
    SolveOptions,
    admissible_state_bound,
    multistart_state,
    solve_state,
    solve_state_auto,
    solve_state_local,
    solve_state_p2,
)
from nlcontrol.utils.io import read_table


@pytest.fixture
def load_1d(grid_1d, rng):
    return Field(grid_1d, rng.standard_normal((grid_1d.num_nodes, 1)))


@pytest.fixture
def params_p3(grid_1d):
    return EnergyParams(p=3.0, coefficient=constant_coefficient(grid_1d, 1.0))


def _weak_residual(u, g, v, op, params):
    lhs = eval_Y(u, v, op, params)
    rhs = float(np.sum(g.values * v.values)) * u.grid.cell_volume
    return abs(lhs - rhs) / max(1.0, abs(rhs))


class TestQuadratic:
    def test_cg_matches_dense_solve(self, op_1d, grid_1d, params_1d, load_1d):
        u, report = solve_state_p2(load_1d, op_1d, params_1d)
        K = eval_hessian_matrix(grid_1d.zeros(), op_1d, params_1d).toarray()
        dofs = free_dofs(op_1d)
        rhs = grid_1d.cell_volume * load_1d.values.reshape(-1)[dofs]
        dense = np.linalg.solve(K, rhs)
        np.testing.assert_allclose(
            u.values.reshape(-1)[dofs], dense, rtol=1e-7, atol=1e-12
        )
        assert report.method == "cg"
        assert report.converged
        assert np.all(u.values[~grid_1d.free_mask] == 0.0)

    def test_lbfgs_agrees_with_cg(self, op_1d, params_1d, load_1d):
        exact, _ = solve_state_p2(load_1d, op_1d, params_1d)
        u, report = solve_state(
            load_1d, op_1d, params_1d, options=SolveOptions(tol=1e-10)
        )
        assert report.status in ("converged", "stalled")
        scale = np.max(np.abs(exact.values))
        np.testing.assert_allclose(u.values, exact.values, atol=1e-4 * scale)

    def test_cg_requires_quadratic_energy(self, op_1d, params_p3, load_1d):
        with pytest.raises(StateSolverError):
            solve_state_p2(load_1d, op_1d, params_p3)

    def test_factorized_matches_dense_solve(
        self, op_1d, grid_1d, params_1d, load_1d
    ):
        solver = FactorizedP2Solver(op_1d, params_1d)
        u, report = solver(load_1d)
        K = eval_hessian_matrix(grid_1d.zeros(), op_1d, params_1d).toarray()
        dofs = free_dofs(op_1d)
        rhs = grid_1d.cell_volume * load_1d.values.reshape(-1)[dofs]
        dense = np.linalg.solve(K, rhs)
        np.testing.assert_allclose(
            u.values.reshape(-1)[dofs],
            dense,
            rtol=1e-9,
            atol=1e-12 * np.max(np.abs(dense)),
        )
        assert report.method == "lu"
        assert report.converged
        assert solver.solves == 1
        assert np.all(u.values[~grid_1d.free_mask] == 0.0)
        np.testing.assert_allclose(solver.solve_dofs(rhs), dense, rtol=1e-9)

    def test_factorized_requires_quadratic_energy(self, op_1d, params_p3):
        with pytest.raises(StateSolverError):
            FactorizedP2Solver(op_1d, params_p3)

    def test_auto_dispatch(self, op_1d, params_1d, params_p3, load_1d):
        _, report = solve_state_auto(load_1d, op_1d, params_1d)
        assert report.method == "cg"
        _, report = solve_state_auto(
            load_1d, op_1d, params_p3, options=SolveOptions(method="newton")
        )
        assert report.method == "newton"


class TestNonlinear:
    def test_newton_satisfies_weak_form(
        self, op_1d, params_p3, load_1d, free_field
    ):
        u, report = solve_state(
            load_1d,
            op_1d,
            params_p3,
            options=SolveOptions(tol=1e-10, method="newton"),
        )
        assert report.status in ("converged", "stalled")
        for _ in range(3):
            v = free_field(op_1d.grid)
            assert _weak_residual(u, load_1d, v, op_1d, params_p3) < 1e-6

    def test_p4_satisfies_weak_form(
        self, op_1d, grid_1d, load_1d, free_field
    ):
        params = EnergyParams(
            p=4.0, coefficient=constant_coefficient(grid_1d, 1.0)
        )
        u, report = solve_state(
            load_1d,
            op_1d,
            params,
            options=SolveOptions(tol=1e-10, method="newton"),
        )
        assert report.status in ("converged", "stalled")
        h = grid_1d.cell_volume
        for _ in range(20):
            v = free_field(grid_1d)
            norm = np.sqrt(np.sum(v.values**2) * h)
            lhs = eval_Y(u, v, op_1d, params)
            rhs = float(np.sum(load_1d.values * v.values)) * h
            assert abs(lhs - rhs) <= 1e-6 * norm

    def test_energy_history_decreases(self, op_1d, params_p3, load_1d):
        _, report = solve_state(load_1d, op_1d, params_p3)
        energies = [energy for _, energy, _ in report.history]
        assert len(energies) > 1
        assert np.all(np.diff(energies) <= 1e-12 * max(1.0, abs(energies[0])))
        assert report.energy == energies[-1]

    def test_max_iter_status(self, op_1d, params_p3, load_1d):
        _, report = solve_state(
            load_1d, op_1d, params_p3, options=SolveOptions(max_iter=1)
        )
        assert report.status == "max_iter"
        assert not report.converged

    def test_unknown_method(self, op_1d, params_p3, load_1d):
        with pytest.raises(StateSolverError):
            solve_state(
                load_1d, op_1d, params_p3, options=SolveOptions(method="sgd")
            )

    def test_newton_rejects_custom_density(self, op_1d, grid_1d, load_1d):
        params = EnergyParams(
            p=2.0,
            coefficient=constant_coefficient(grid_1d, 1.0),
            density=double_well(2.0),
        )
        with pytest.raises(StateSolverError):
            solve_state(
                load_1d, op_1d, params, options=SolveOptions(method="newton")
            )

    def test_report_files(self, op_1d, params_p3, load_1d, tmp_path):
        _, report = solve_state(load_1d, op_1d, params_p3)
        report.write_json(tmp_path / "report.json")
        path = report.write_history_csv(tmp_path / "history.csv")
        table = read_table(path)
        assert list(table.columns) == [
            "iteration",
            "energy",
            "variation_norm",
        ]
        assert len(table) == len(report.history)
        assert "history" not in report.to_dict()


class TestLocalState:
    def test_deflated_domain(self, grid_1d):
        op = assemble_local_gradient(grid_1d, grid_1d.layers)
        params = EnergyParams(
            p=2.0, coefficient=constant_coefficient(grid_1d, 1.0)
        )
        g = Field(grid_1d, np.ones((grid_1d.num_nodes, 1)))
        u, report = solve_state_local(g, op, params, LocalDomain.DEFLATED)
        assert report.converged
        assert np.all(u.values[~op.free_mask] == 0.0)
        # 領域と荷重が x = 1/2 について対称
        np.testing.assert_allclose(
            u.values[:, 0], u.values[::-1, 0], atol=1e-10
        )
        v = Field(grid_1d, np.where(op.free_mask, 1.0, 0.0)[:, None])
        assert _weak_residual(u, g, v, op, params) < 1e-8

    def test_full_domain_is_second_order(self):
        # -u'' = 1, u(0) = u(1) = 0 の厳密解 x(1 - x)/2 との L² 誤差
        errors = []
        for h in (1 / 16, 1 / 32, 1 / 64):
            grid = build_grid([(0.0, 1.0)], h, 0.125)
            op = assemble_local_gradient(grid, 0)
            params = EnergyParams(
                p=2.0, coefficient=constant_coefficient(grid, 1.0)
            )
            g = Field(grid, np.ones((grid.num_nodes, 1)))
            u, report = solve_state_local(g, op, params, LocalDomain.FULL)
            assert report.converged
            x = grid.coords[grid.omega_mask, 0]
            diff = u.values[grid.omega_mask, 0] - x * (1.0 - x) / 2.0
            errors.append(np.sqrt(np.sum(diff**2) * h))
        rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        np.testing.assert_allclose(rates, 2.0, atol=0.25)
        assert errors[-1] < 1e-3

    def test_domain_mismatch(self, grid_1d, params_1d):
        op = assemble_local_gradient(grid_1d, 0)
        with pytest.raises(GridError):
            solve_state_local(
                grid_1d.zeros(), op, params_1d, LocalDomain.DEFLATED
            )


class TestMultistart:
    def test_convex_starts_agree(self, op_1d, params_p3, load_1d):
        result = multistart_state(
            load_1d,
            op_1d,
            params_p3,
            k=4,
            seed=7,
            options=SolveOptions(tol=1e-10, method="newton"),
        )
        assert len(result.states) == 4
        assert result.spread < 1e-8 * max(1.0, abs(result.energies[0]))
        bound = admissible_state_bound(result, load_1d, op_1d, params_p3)
        assert bound.holds
        assert bound.max_energy <= bound.zero_energy

    def test_seeded_runs_are_reproducible(self, op_1d, grid_1d, load_1d):
        params = EnergyParams(
            p=2.0,
            coefficient=constant_coefficient(grid_1d, 1.0),
            density=double_well(2.0, height=0.5),
        )
        runs = [
            multistart_state(load_1d, op_1d, params, k=3, seed=11)
            for _ in range(2)
        ]
        assert runs[0].energies == runs[1].energies
        assert runs[0].best_index == runs[1].best_index
        assert runs[0].energies[runs[0].best_index] == min(runs[0].energies)

    def test_double_well_has_several_limits(self, op_1d, grid_1d):
        params = EnergyParams(
            p=2.0,
            coefficient=constant_coefficient(grid_1d, 1.0),
            density=double_well(2.0, height=5.0),
        )
        result = multistart_state(grid_1d.zeros(), op_1d, params, k=8, seed=5)
        assert len(result.states) == 8
        h = grid_1d.cell_volume
        limits = []
        for u in result.states:
            if all(
                np.sqrt(np.sum((u.values - w.values) ** 2) * h) > 1e-3
                for w in limits
            ):
                limits.append(u)
        assert len(limits) >= 2
        assert result.energies[result.best_index] == min(result.energies)
        assert result.spread > 0.0

    def test_rejects_zero_starts(self, op_1d, params_p3, load_1d):
        with pytest.raises(StateSolverError):
            multistart_state(load_1d, op_1d, params_p3, k=0, seed=0)
