import numpy as np
import pytest

from wavesvgd.baseline import InfeasibleInit, read_chain_csv, rwm_sample, write_chain_csv
from wavesvgd.posterior import QuadraticModel


def std_normal_1d():
    return QuadraticModel.standard_normal_posterior(1)


class TestRwm:
    def test_standard_gaussian_moments(self):
        chain = rwm_sample(std_normal_1d(), 20000, [0.0], 1.0, np.random.default_rng(0))
        x = chain.sampling()[:, 0]
        assert abs(x.mean()) <= 0.1
        assert x.var() == pytest.approx(1.0, rel=0.15)
        assert 0.0 < chain.acceptance_rate() < 1.0

    def test_adaptation_targets_band(self):
        chain = rwm_sample(std_normal_1d(), 5000, [0.0], 20.0, np.random.default_rng(1))
        assert chain.scale < 20.0
        assert 0.15 < chain.acceptance_rate() < 0.6
        assert chain.burn_in == 1000

    def test_scale_frozen_without_adaptation(self):
        chain = rwm_sample(std_normal_1d(), 200, [0.0], 0.3, np.random.default_rng(2), adapt=False)
        assert chain.scale == 0.3 and chain.burn_in == 0

    def test_tiny_steps_barely_move(self):
        chain = rwm_sample(std_normal_1d(), 2000, [0.5], 1e-6, np.random.default_rng(3), adapt=False)
        assert chain.acceptance_rate() > 0.99
        assert chain.autocorrelation()[0] > 0.99
        assert np.ptp(chain.samples) < 1e-3

    def test_respects_bounds(self):
        model = QuadraticModel([0.0], [[1.0]], [0.0], [[4.0]], bounds=[[0.0, 1.0]])

        def lp(x):
            return -np.inf if not model.in_bounds(np.asarray(x)) else QuadraticModel.log_posterior(model, x)

        model.log_posterior = lp
        chain = rwm_sample(model, 2000, [0.5], 0.5, np.random.default_rng(4))
        assert np.all((chain.samples >= 0.0) & (chain.samples <= 1.0))

    def test_infeasible_init(self):
        model = QuadraticModel([0.0], [[1.0]], [0.0], [[1.0]])
        model.log_posterior = lambda x: -np.inf
        with pytest.raises(InfeasibleInit):
            rwm_sample(model, 10, [0.0], 0.1, np.random.default_rng(0))

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            rwm_sample(std_normal_1d(), 10, [0.0], 0.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            rwm_sample(std_normal_1d(), 0, [0.0], 1.0, np.random.default_rng(0))

    def test_counts_solves(self):
        model = std_normal_1d()
        chain = rwm_sample(model, 50, [0.0], 1.0, np.random.default_rng(0))
        assert chain.forward_solves == 51

    def test_seeded(self):
        a = rwm_sample(std_normal_1d(), 300, [0.0], 1.0, np.random.default_rng(9))
        b = rwm_sample(std_normal_1d(), 300, [0.0], 1.0, np.random.default_rng(9))
        np.testing.assert_array_equal(a.samples, b.samples)


class TestChainIO:
    def test_roundtrip(self, tmp_path):
        chain = rwm_sample(QuadraticModel.standard_normal_posterior(2), 100, [0.0, 0.0], 0.5,
                           np.random.default_rng(0))
        write_chain_csv(tmp_path / "chain.csv", chain, header={"seed": 0})
        back = read_chain_csv(tmp_path / "chain.csv")
        np.testing.assert_array_equal(back.samples, chain.samples)
        np.testing.assert_array_equal(back.accepted, chain.accepted)
        assert back.burn_in == chain.burn_in and back.scale == chain.scale
