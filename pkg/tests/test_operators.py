"""非局所勾配と局所差分勾配のテスト."""

import numpy as np
import pytest

from nlcontrol.core.exceptions import GridError
from nlcontrol.discretization import (
    Field,
    KernelSpec,
    MatrixField,
    apply_nl_divergence,
    apply_nl_gradient,
    assemble_local_gradient,
    assemble_nl_gradient,
    build_grid,
    dump_operator,
    kernel_mass,
)


class TestNonlocalGradient:
    def test_stencil(self, op_1d, grid_1d):
        # 0 < |k| < δ/h = 4
        np.testing.assert_array_equal(
            np.sort(op_1d.offsets[:, 0]), [-3, -2, -1, 1, 2, 3]
        )
        assert np.all(op_1d.weights > 0.0)
        assert op_1d.neighbors.shape == (
            np.count_nonzero(grid_1d.omega_mask),
            6,
        )

    def test_symmetric_weights(self, op_2d):
        lookup = {
            tuple(k): w for k, w in zip(op_2d.offsets, op_2d.weights)
        }
        for k, w in lookup.items():
            mirrored = tuple(-c for c in k)
            swapped = tuple(reversed(k))
            assert np.isclose(lookup[mirrored], w, rtol=1e-12)
            assert np.isclose(lookup[swapped], w, rtol=1e-12)

    def test_affine_reproduction_1d(self, op_1d, grid_1d):
        values = 3.0 * grid_1d.coords + 1.0
        Du = apply_nl_gradient(op_1d, Field(grid_1d, values))
        expected = 3.0 * kernel_mass(op_1d.kernel)
        np.testing.assert_allclose(Du.values[:, 0, 0], expected, rtol=1e-10)
        np.testing.assert_array_equal(Du.nodes, grid_1d.omega_indices)

    def test_affine_reproduction_2d(self, op_2d, grid_2d, rng):
        A = rng.standard_normal((2, 2))
        values = grid_2d.coords @ A.T + rng.standard_normal(2)
        Du = op_2d.apply(values)
        expected = A * kernel_mass(op_2d.kernel) / 2.0
        np.testing.assert_allclose(
            Du, np.broadcast_to(expected, Du.shape), atol=1e-10
        )

    def test_without_moment_correction(self, grid_1d):
        op = assemble_nl_gradient(
            grid_1d, KernelSpec(1, 0.6, 0.125), moment_correction=False
        )
        assert op.moment_factor == 1.0
        corrected = assemble_nl_gradient(grid_1d, KernelSpec(1, 0.6, 0.125))
        np.testing.assert_allclose(
            corrected.weights, corrected.moment_factor * op.weights
        )

    def test_integration_by_parts(self, op_2d, grid_2d, free_field, rng):
        u = free_field(grid_2d)
        phi = MatrixField(
            grid_2d,
            op_2d.eval_nodes,
            rng.standard_normal((op_2d.eval_nodes.shape[0], 2, 2)),
        )
        h_n = grid_2d.cell_volume
        lhs = np.sum(op_2d.apply(u.values) * phi.values) * h_n
        div = apply_nl_divergence(op_2d, phi)
        rhs = -np.sum(u.values * div.values) * h_n
        assert np.isclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize(
        "box,h,delta",
        [
            ([(0.0, 1.0)], 1 / 128, 0.125),
            ([(0.0, 1.0), (0.0, 1.0)], 1 / 64, 1 / 16),
        ],
        ids=["1d-128", "2d-64"],
    )
    def test_integration_by_parts_random_pairs(
        self, box, h, delta, free_field, rng
    ):
        grid = build_grid(box, h, delta)
        op = assemble_nl_gradient(grid, KernelSpec(grid.n, 0.5, delta))
        h_n = grid.cell_volume
        shape = (op.eval_nodes.shape[0], grid.n, grid.n)
        for _ in range(50):
            u = free_field(grid)
            phi = MatrixField(grid, op.eval_nodes, rng.standard_normal(shape))
            Du = op.apply(u.values)
            lhs = np.sum(Du * phi.values) * h_n
            div = apply_nl_divergence(op, phi)
            rhs = np.sum(u.values * div.values) * h_n
            bound = np.sqrt(np.sum(Du**2) * h_n * np.sum(phi.values**2) * h_n)
            assert abs(lhs + rhs) <= 1e-12 * bound

    def test_alternating_field_is_annihilated(self):
        # 対称な重みでは ±k の寄与が打ち消し合い、(-1)^j は Ω 全体で零になる
        grid = build_grid([(0.0, 1.0)], 1 / 64, 0.25)
        op = assemble_nl_gradient(grid, KernelSpec(1, 0.5, 0.25))
        index = np.rint(grid.coords[:, 0] / grid.h).astype(int)
        values = ((-1.0) ** index)[:, None]
        Du = op.apply(values)
        assert np.abs(Du).max() <= 1e-12 * np.sum(op.weights)

    def test_matrix_matches_apply(self, op_2d, grid_2d, rng):
        values = rng.standard_normal((grid_2d.num_nodes, 2))
        G = op_2d.to_matrix()
        assert G.shape == (
            op_2d.eval_nodes.shape[0] * 4,
            grid_2d.num_nodes * 2,
        )
        np.testing.assert_allclose(
            G @ values.ravel(), op_2d.apply(values).ravel(), atol=1e-12
        )

    def test_adjoint_is_transpose(self, op_2d, rng):
        phi = rng.standard_normal((op_2d.eval_nodes.shape[0], 2, 2))
        G = op_2d.to_matrix()
        np.testing.assert_allclose(
            G.T @ phi.ravel(), op_2d.adjoint(phi).ravel(), atol=1e-12
        )

    def test_kernel_delta_must_match_grid(self, grid_1d):
        with pytest.raises(GridError):
            assemble_nl_gradient(grid_1d, KernelSpec(1, 0.5, 0.25))

    def test_single_layer_leaves_empty_stencil(self):
        grid = build_grid([(0.0, 1.0)], 0.125, 0.125)
        with pytest.raises(GridError):
            assemble_nl_gradient(grid, KernelSpec(1, 0.5, 0.125))


class TestLocalGradient:
    @pytest.mark.parametrize("inset", [0, 2])
    def test_affine_exact_2d(self, grid_2d, rng, inset):
        op = assemble_local_gradient(grid_2d, inset)
        A = rng.standard_normal((2, 2))
        values = grid_2d.coords @ A.T + rng.standard_normal(2)
        np.testing.assert_allclose(
            op.apply(values),
            np.broadcast_to(A, (op.nodes.shape[0], 2, 2)),
            atol=1e-12,
        )

    def test_trapezoid_weights(self, grid_2d):
        op = assemble_local_gradient(grid_2d, 0)
        assert np.isclose(op.quad_weights.sum(), 1.0)
        h_n = grid_2d.cell_volume
        assert set(np.round(op.quad_weights / h_n, 12)) == {0.25, 0.5, 1.0}

    def test_domain_masks(self, grid_1d):
        op = assemble_local_gradient(grid_1d, grid_1d.layers)
        np.testing.assert_array_equal(op.free_mask, grid_1d.free_mask)
        assert np.count_nonzero(op.domain_mask) == (
            np.count_nonzero(op.free_mask) + 2
        )

    def test_matrix_and_adjoint(self, grid_1d, rng):
        op = assemble_local_gradient(grid_1d, 0)
        values = rng.standard_normal((grid_1d.num_nodes, 1))
        phi = rng.standard_normal((op.nodes.shape[0], 1, 1))
        G = op.to_matrix()
        np.testing.assert_allclose(
            G @ values.ravel(), op.apply(values).ravel()
        )
        np.testing.assert_allclose(G.T @ phi.ravel(), op.adjoint(phi).ravel())

    @pytest.mark.parametrize("inset", [-1, 5])
    def test_rejects_inset(self, grid_1d, inset):
        with pytest.raises(GridError):
            assemble_local_gradient(grid_1d, inset)


def test_dump_operator(op_1d, tmp_path):
    path = dump_operator(op_1d, tmp_path / "op" / "operator.txt")
    G = op_1d.to_matrix().tocoo()
    with open(path, encoding="utf-8") as f:
        header = f.readline()
    assert header.startswith(
        f"# rows={G.shape[0]} cols={G.shape[1]} nnz={G.nnz}"
    )
    table = np.loadtxt(path)
    assert table.shape == (G.nnz, 3)
    np.testing.assert_array_equal(table[:, 0], G.row)
    np.testing.assert_array_equal(table[:, 1], G.col)
    np.testing.assert_array_equal(table[:, 2], G.data)
