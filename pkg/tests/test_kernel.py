"""切断 Riesz カーネルのテスト."""

import math

import numpy as np
import pytest

from nlcontrol.core.exceptions import KernelDomainError, SingularKernelError
from nlcontrol.discretization import (
    CutoffSpec,
    KernelMode,
    KernelSpec,
    cutoff_eval,
    gamma_const,
    kernel_eval,
    kernel_mass,
    kernel_moment,
    normalize_mass,
    riesz_normalizer,
)


def test_gamma_const_closed_form():
    # Γ(1/4) が約分され π^{1/2} 2^{1/2} が残る
    assert math.isclose(gamma_const(1, 0.5), math.sqrt(2.0 * math.pi))


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("s", [0.1, 0.5, 0.9])
def test_riesz_normalizer(n, s):
    expected = (n + s - 1.0) / gamma_const(n, 1.0 - s)
    assert math.isclose(riesz_normalizer(n, s), expected, rel_tol=1e-14)
    assert riesz_normalizer(n, s) > 0.0


@pytest.mark.parametrize("s", [0.0, 1.0, -0.2, 1.5])
def test_fractional_order_outside_unit_interval(s):
    with pytest.raises(KernelDomainError):
        KernelSpec(1, s, 0.25)
    with pytest.raises(KernelDomainError):
        riesz_normalizer(1, s)


def test_unsupported_dimension():
    with pytest.raises(KernelDomainError):
        KernelSpec(3, 0.5, 0.25)


@pytest.mark.parametrize(
    "kwargs", [{"b0": 0.0}, {"b0": 1.0}, {"a0": 0.0}, {"profile": "cubic"}]
)
def test_cutoff_spec_rejects(kwargs):
    with pytest.raises(KernelDomainError):
        CutoffSpec(**kwargs)


def test_kernel_is_singular_at_origin():
    spec = KernelSpec(2, 0.5, 0.25)
    with pytest.raises(SingularKernelError):
        kernel_eval(spec, np.array([[0.1, 0.0], [0.0, 0.0]]))


@pytest.mark.parametrize("profile", ["quintic", "septic", "smooth"])
class TestCutoff:
    delta = 0.4

    def test_plateau_and_support(self, profile):
        spec = CutoffSpec(b0=0.5, a0=2.0, profile=profile)
        values = cutoff_eval(spec, self.delta, [0.0, 0.1, 0.2, 0.4, 0.6])
        np.testing.assert_allclose(values, [2.0, 2.0, 2.0, 0.0, 0.0])

    def test_nonincreasing(self, profile):
        spec = CutoffSpec(b0=0.3, profile=profile)
        r = np.linspace(0.0, 1.2 * self.delta, 400)
        values = cutoff_eval(spec, self.delta, r)
        assert np.all(np.diff(values) <= 1e-15)
        assert np.all((values >= 0.0) & (values <= spec.a0))


def test_fixed_kernel_matches_riesz_formula():
    spec = KernelSpec(1, 0.5, 0.25)
    r = np.array([0.01, 0.05, 0.1])
    expected = riesz_normalizer(1, 0.5) * r**-0.5
    np.testing.assert_allclose(kernel_eval(spec, r[:, None]), expected)
    assert kernel_eval(spec, [[0.3]])[0] == 0.0


def test_kernel_depends_on_distance_only():
    spec = KernelSpec(2, 0.3, 0.5)
    x = np.array([[0.2, 0.1], [-0.1, 0.2], [0.1, -0.2], [-0.2, -0.1]])
    values = kernel_eval(spec, x)
    np.testing.assert_allclose(values, values[0])


class TestMass:
    def test_frozen_unit_horizon_mass(self):
        # 2c∫₀¹ r^{-1/2}(1 - T) dr を複合 Simpson 則 (2e6 区間) で評価した値
        spec = KernelSpec(
            1, 0.5, 1.0, cutoff=CutoffSpec(b0=0.5, a0=1.0, profile="quintic")
        )
        assert math.isclose(kernel_mass(spec), 0.68960098463930, rel_tol=1e-9)

    def test_moment_of_order_zero_is_mass(self):
        spec = KernelSpec(2, 0.6, 0.25)
        assert math.isclose(kernel_moment(spec, 0.0), kernel_mass(spec))

    def test_linear_in_plateau_value(self):
        one = KernelSpec(1, 0.5, 0.25, cutoff=CutoffSpec(a0=1.0))
        two = KernelSpec(1, 0.5, 0.25, cutoff=CutoffSpec(a0=2.0))
        assert math.isclose(
            kernel_mass(two), 2.0 * kernel_mass(one), rel_tol=1e-10
        )

    @pytest.mark.parametrize("n", [1, 2])
    def test_fixed_horizon_scales_with_delta(self, n):
        s = 0.4
        unit = kernel_mass(KernelSpec(n, s, 1.0))
        small = kernel_mass(KernelSpec(n, s, 0.125))
        assert math.isclose(small, 0.125 ** (1.0 - s) * unit, rel_tol=1e-9)

    @pytest.mark.parametrize("n", [1, 2])
    def test_rescaled_mass_independent_of_delta(self, n):
        masses = [
            kernel_mass(KernelSpec(n, 0.5, d, mode=KernelMode.RESCALED))
            for d in (1.0, 0.25, 0.03125)
        ]
        np.testing.assert_allclose(masses, masses[0], rtol=1e-9)

    def test_normalize_mass(self):
        spec = normalize_mass(KernelSpec(2, 0.7, 0.25), 2.0)
        assert spec.mass_target == 2.0
        assert math.isclose(kernel_mass(spec), 2.0, rel_tol=1e-9)

    def test_normalize_mass_rejects_nonpositive_target(self):
        with pytest.raises(KernelDomainError):
            normalize_mass(KernelSpec(1, 0.5, 0.25), 0.0)

    def test_rescaled_with_target_keeps_mass_across_ladder(self):
        for delta in (0.5, 0.125):
            spec = KernelSpec(
                1,
                0.5,
                delta,
                mode=KernelMode.RESCALED,
                mass_target=1.0,
            )
            assert math.isclose(kernel_mass(spec), 1.0, rel_tol=1e-9)
