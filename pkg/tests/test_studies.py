import numpy as np
import pytest

from wavesvgd.config import parse_config
from wavesvgd.experiments import (
    build_problem,
    grid_nodes_per_segment,
    observation_positions,
    predictive_bands,
    run_sampler,
    sample_losses,
    thin,
    true_speed_field,
)
from wavesvgd.studies import boundary_errors, convergence_order, derivative_errors, derivative_study, min_ppw


class TestHelpers:
    def test_convergence_order_of_power_law(self):
        ppw = np.array([8, 16, 32, 64])
        assert convergence_order(ppw, 3.0 * ppw**-4.0) == pytest.approx(4.0)

    def test_min_ppw_needs_to_stay_below(self):
        ppw = [8, 16, 32, 64]
        assert min_ppw(ppw, [1.0, 1e-3, 2e-2, 1e-4], 1e-2) == 64
        assert min_ppw(ppw, [1.0, 1e-3, 1e-4, 1e-5], 1e-2) == 16
        assert min_ppw(ppw, [1.0, 1.0, 1.0, 1.0], 1e-2) is None


class TestDerivativeStudy:
    @pytest.mark.parametrize("kind", ["cosine", "gaussian", "sum"])
    def test_error_shrinks(self, kind):
        coarse, _ = derivative_errors(kind, 1, 8)
        fine, _ = derivative_errors(kind, 1, 32)
        assert fine < coarse / 50

    def test_second_derivative_interior_order(self):
        res = derivative_study(ppw=(16, 24, 32, 48), kinds=("cosine",), orders=(2,))
        assert len(res) == 1
        assert res[0].interior_order > 3.5
        assert len(res[0].rows()) == 4

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            derivative_errors("square", 1, 16)


class TestBoundaryStudy:
    def test_five_point_beats_backward(self):
        e5, r5 = boundary_errors("five_point", 24)
        eb, rb = boundary_errors("backward", 24)
        assert e5 < eb and r5 < rb
        assert e5 < 1e-2


class TestProblems:
    def test_grid_and_observations(self):
        cfg = parse_config({})
        assert grid_nodes_per_segment(cfg) == [11, 11]
        assert observation_positions(cfg)[-1] == 2000.0

    def test_high_contrast_problem(self):
        problem = build_problem(parse_config({}))
        np.testing.assert_allclose(problem.theta_true, [2000.0**2, 2600.0**2])
        assert np.all((problem.z_true > 0) & (problem.z_true < 1))
        assert problem.names == ["c2_layer0", "c2_layer1"]

    def test_low_contrast_problem(self):
        cfg = parse_config({"kind": "low_contrast", "low_contrast": {"n_coeffs": 4}})
        problem = build_problem(cfg, 1)
        assert problem.degree == 1 and problem.theta_true.shape == (4,)
        np.testing.assert_allclose(problem.true_field, true_speed_field(cfg, problem.grid) ** 2)
        bands = predictive_bands(problem, np.tile(problem.theta_true, (5, 1)))
        assert bands.shape == (3, problem.grid.size)
        np.testing.assert_allclose(bands[1], problem.basis.design_matrix(problem.grid) @ problem.theta_true)

    def test_thin(self):
        x = np.arange(10.0)[:, None]
        np.testing.assert_array_equal(thin(x, 3)[:, 0], [0.0, 4.0, 9.0])
        assert thin(x, 20).shape == (10, 1)

    def test_sample_losses_affine_in_omega(self):
        cfg = parse_config({"sampler": {"gsvgd": {"elbo_samples": 6}}})
        problem = build_problem(cfg)
        X = problem.z_true + 0.02 * np.random.default_rng(0).standard_normal((6, 2))
        s = sample_losses(problem, cfg, X, [0.0, 0.5, 1.0], seed=3)
        assert s[0.0]["loss"] == pytest.approx(s[0.0]["sup_norm"])
        assert s[1.0]["loss"] == pytest.approx(-s[1.0]["elbo"])
        assert s[0.5]["loss"] == pytest.approx(0.5 * (s[0.0]["loss"] + s[1.0]["loss"]))

    def test_asvgd_budget_ignores_reporting(self):
        cfg = parse_config({"sampler": {"particles": 4, "asvgd": {"report_every": 1},
                                        "gsvgd": {"omega": 1.0, "elbo_samples": 4}}})
        out = run_sampler(build_problem(cfg), cfg, method="asvgd", budget=40)
        assert out["forward_solves"] == 40
        assert out["total_solves"] > out["forward_solves"]
