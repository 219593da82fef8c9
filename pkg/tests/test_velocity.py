import numpy as np
import pytest
from scipy.interpolate import BSpline

from wavesvgd.velocity import (
    BSplineBasis,
    VelocityField,
    basis_value,
    clamped_uniform_knots,
    evaluate_field,
)
from wavesvgd.wavesolver import VelocityError


class TestKnots:
    def test_clamped(self):
        t = clamped_uniform_knots(5, 2, 4.0)
        np.testing.assert_allclose(t, [0, 0, 0, 4 / 3, 8 / 3, 4, 4, 4])

    def test_degree_zero_has_no_repeats(self):
        np.testing.assert_allclose(clamped_uniform_knots(4, 0, 2.0), [0, 0.5, 1.0, 1.5, 2.0])

    @pytest.mark.parametrize("args", [(2, 2, 1.0), (3, -1, 1.0), (3, 1, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            clamped_uniform_knots(*args)


class TestBasis:
    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    def test_matches_scipy(self, degree):
        basis = BSplineBasis.uniform(7, degree, 2000.0)
        x = np.linspace(0.0, 1999.0, 57)
        Phi = basis.design_matrix(x)
        for j in range(basis.n):
            ref = BSpline.basis_element(basis.knots[j:j + degree + 2], extrapolate=False)(x)
            np.testing.assert_allclose(Phi[:, j], np.nan_to_num(ref), atol=1e-12)

    @pytest.mark.parametrize("degree", [0, 1, 2])
    def test_partition_of_unity_including_right_end(self, degree):
        basis = BSplineBasis.uniform(5, degree, 1.0)
        x = np.linspace(0.0, 1.0, 41)
        np.testing.assert_allclose(basis.design_matrix(x).sum(axis=1), 1.0, atol=1e-12)
        assert basis.design_matrix([1.0])[0, -1] == pytest.approx(1.0)

    def test_recursive_matches_bottom_up(self):
        basis = BSplineBasis.uniform(6, 2, 3.0)
        x = np.linspace(0, 3, 23)
        Phi = basis.design_matrix(x)
        for j in range(basis.n):
            np.testing.assert_allclose(basis_value(j, 2, x, basis.knots), Phi[:, j], atol=1e-13)

    def test_scalar_input(self):
        t = clamped_uniform_knots(4, 1, 1.0)
        assert isinstance(basis_value(1, 1, 0.25, t), float)
        assert basis_value(1, 1, 1 / 3, t) == pytest.approx(1.0)

    def test_local_support(self):
        basis = BSplineBasis.uniform(8, 2, 1.0)
        x = np.linspace(0, 1, 101)
        Phi = basis.design_matrix(x)
        for j in range(basis.n):
            lo, hi = basis.knots[j], basis.knots[j + 3]
            outside = (x < lo) | (x > hi)
            assert np.all(Phi[outside, j] == 0.0)

    def test_decreasing_knots(self):
        with pytest.raises(ValueError):
            BSplineBasis(1, [0.0, 1.0, 0.5, 2.0])


class TestVelocityField:
    def test_linear_reproduction(self):
        # degree >= 1 splines reproduce linear functions from Greville-point coefficients
        basis = BSplineBasis.uniform(6, 2, 10.0)
        greville = np.array([basis.knots[j + 1:j + 3].mean() for j in range(basis.n)])
        field = VelocityField(basis, 4.0 + 0.5 * greville)
        x = np.linspace(0, 10, 17)
        np.testing.assert_allclose(field(x), 4.0 + 0.5 * x, atol=1e-12)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            VelocityField(BSplineBasis.uniform(4, 1, 1.0), np.ones(3))

    def test_evaluate_field_names_node(self):
        field = VelocityField(BSplineBasis.uniform(4, 0, 4.0), [1.0, 1.0, -2.0, 1.0])
        with pytest.raises(VelocityError, match="node 2"):
            evaluate_field(field, np.arange(5.0))

    def test_evaluate_outside_domain(self):
        field = VelocityField(BSplineBasis.uniform(4, 1, 1.0), np.ones(4))
        with pytest.raises(ValueError):
            evaluate_field(field, [0.0, 1.5])
        np.testing.assert_allclose(evaluate_field(field, [0.0, 0.5, 1.0]), 1.0)
