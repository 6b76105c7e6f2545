"""テスト共通のフィクスチャ."""

import numpy as np
import pytest

from nlcontrol.discretization import (
    Field,
    KernelSpec,
    assemble_nl_gradient,
    build_grid,
)
from nlcontrol.services.energy import EnergyParams, constant_coefficient


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid_1d():
    # h = 1/32, δ = 4h
    return build_grid([(0.0, 1.0)], 1.0 / 32, 0.125)


@pytest.fixture(scope="session")
def op_1d(grid_1d):
    return assemble_nl_gradient(grid_1d, KernelSpec(1, 0.6, 0.125))


@pytest.fixture(scope="session")
def grid_2d():
    return build_grid([(0.0, 1.0), (0.0, 1.0)], 1.0 / 8, 0.25)


@pytest.fixture(scope="session")
def op_2d(grid_2d):
    return assemble_nl_gradient(grid_2d, KernelSpec(2, 0.4, 0.25))


@pytest.fixture(scope="session")
def params_1d(grid_1d):
    return EnergyParams(p=2.0, coefficient=constant_coefficient(grid_1d, 1.0))


@pytest.fixture
def free_field(rng):
    """自由節点でのみ非ゼロの乱数場を作る関数."""

    def make(grid):
        values = rng.standard_normal((grid.num_nodes, grid.n))
        values[~grid.free_mask] = 0.0
        return Field(grid, values)

    return make


@pytest.fixture
def omega_field():
    """Ω の外でゼロにした場を作る関数."""

    def make(grid, values):
        values = np.broadcast_to(
            np.asarray(values, dtype=float), (grid.num_nodes, grid.n)
        ).copy()
        values[~grid.omega_mask] = 0.0
        return Field(grid, values)

    return make
