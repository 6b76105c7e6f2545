"""計算格子のテスト."""

import math

import numpy as np
import pytest

from nlcontrol.core.exceptions import GridError
from nlcontrol.discretization import (
    Field,
    MatrixField,
    NodeLabel,
    apply_collar_zero,
    build_grid,
    lp_norm,
    transfer_nodes,
)


@pytest.fixture
def small_grid():
    return build_grid([(0.0, 1.0)], 1.0 / 8, 0.25)


class TestBuildGrid:
    def test_shape_and_labels(self, small_grid):
        grid = small_grid
        assert grid.shape == (13,)
        assert grid.layers == 2
        assert grid.num_nodes == 13
        assert np.count_nonzero(grid.omega_mask) == 7
        assert np.count_nonzero(grid.free_mask) == 3
        counts = grid.mask_counts()
        assert counts == {
            "exterior_collar": 6,
            "interior_collar": 4,
            "free": 3,
        }

    def test_coordinates_cover_dilated_box(self, small_grid):
        coords = small_grid.coords[:, 0]
        assert math.isclose(coords[0], -0.25)
        assert math.isclose(coords[-1], 1.25)
        np.testing.assert_allclose(np.diff(coords), 0.125)

    def test_node_at_distance_delta_is_collar(self, small_grid):
        # x = 0.25 は ∂Ω からちょうど δ
        node = int(np.argmin(np.abs(small_grid.coords[:, 0] - 0.25)))
        assert small_grid.labels[node] == NodeLabel.INTERIOR_COLLAR
        assert small_grid.labels[node + 1] == NodeLabel.FREE

    def test_boundary_nodes_are_exterior(self, small_grid):
        for x in (0.0, 1.0):
            node = int(np.argmin(np.abs(small_grid.coords[:, 0] - x)))
            assert small_grid.labels[node] == NodeLabel.EXTERIOR_COLLAR

    def test_two_dimensional_counts(self):
        grid = build_grid([(0.0, 1.0), (0.0, 0.5)], 1.0 / 16, 0.125)
        assert grid.shape == (21, 13)
        assert np.count_nonzero(grid.omega_mask) == 15 * 7
        assert np.count_nonzero(grid.free_mask) == 11 * 3
        assert sum(grid.mask_counts().values()) == grid.num_nodes

    @pytest.mark.parametrize(
        "box,h,delta",
        [
            ([(0.0, 1.0)], 0.125, 0.3),
            ([(0.0, 1.0)], 0.125, 0.0625),
            ([(0.0, 1.0)], 0.3, 0.6),
            ([(1.0, 0.0)], 0.125, 0.25),
            ([(0.0, 1.0)], -0.125, 0.25),
        ],
    )
    def test_rejects(self, box, h, delta):
        with pytest.raises(GridError):
            build_grid(box, h, delta)

    def test_single_layer_is_allowed(self):
        grid = build_grid([(0.0, 1.0)], 0.125, 0.125)
        assert grid.layers == 1


class TestFieldHelpers:
    def test_lp_norm_of_constant(self, small_grid):
        ones = Field(small_grid, np.ones((small_grid.num_nodes, 1)))
        region = small_grid.omega_mask
        assert math.isclose(
            lp_norm(ones, 2.0, region), math.sqrt(7 * 0.125)
        )
        assert lp_norm(ones, np.inf, region) == 1.0
        assert math.isclose(lp_norm(ones, 1.0), 13 * 0.125)

    def test_lp_norm_of_matrix_field(self, small_grid):
        nodes = small_grid.omega_indices
        values = np.full((nodes.shape[0], 1, 1), 2.0)
        f = MatrixField(small_grid, nodes, values)
        assert math.isclose(lp_norm(f, 2.0), math.sqrt(4.0 * 7 * 0.125))

    def test_lp_norm_rejects_small_exponent(self, small_grid):
        with pytest.raises(ValueError):
            lp_norm(small_grid.zeros(), 0.5)

    def test_matrix_field_must_be_finite(self, small_grid):
        with pytest.raises(GridError):
            MatrixField(
                small_grid, np.array([0]), np.full((1, 1, 1), np.nan)
            )

    def test_apply_collar_zero_is_idempotent(self, grid_2d, rng):
        f = Field(grid_2d, rng.standard_normal((grid_2d.num_nodes, 2)))
        once = apply_collar_zero(f)
        twice = apply_collar_zero(once)
        np.testing.assert_array_equal(once.values, twice.values)
        assert np.all(once.values[~grid_2d.free_mask] == 0.0)
        np.testing.assert_array_equal(
            once.values[grid_2d.free_mask], f.values[grid_2d.free_mask]
        )

    def test_omega_round_trip(self, small_grid):
        values = np.arange(small_grid.num_nodes, dtype=float)
        restricted = small_grid.restrict_to_omega(values)
        extended = small_grid.extend_from_omega(restricted)
        np.testing.assert_array_equal(
            extended[small_grid.omega_mask], values[small_grid.omega_mask]
        )
        assert np.all(extended[~small_grid.omega_mask] == 0.0)


class TestTransferNodes:
    def test_omega_nodes_keep_coordinates(self):
        narrow = build_grid([(0.0, 1.0), (0.0, 1.0)], 0.125, 0.25)
        wide = build_grid([(0.0, 1.0), (0.0, 1.0)], 0.125, 0.5)
        mapped = transfer_nodes(narrow, wide, narrow.omega_indices)
        np.testing.assert_allclose(
            wide.coords[mapped], narrow.coords[narrow.omega_indices]
        )
        np.testing.assert_array_equal(mapped, wide.omega_indices)

    def test_rejects_different_spacing(self):
        a = build_grid([(0.0, 1.0)], 0.125, 0.25)
        b = build_grid([(0.0, 1.0)], 0.0625, 0.25)
        with pytest.raises(GridError):
            transfer_nodes(a, b, a.omega_indices)

    def test_rejects_nodes_outside_destination(self):
        wide = build_grid([(0.0, 1.0)], 0.125, 0.5)
        narrow = build_grid([(0.0, 1.0)], 0.125, 0.25)
        with pytest.raises(GridError):
            transfer_nodes(wide, narrow, np.array([0]))
