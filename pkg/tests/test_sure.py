import numpy as np
import pytest
from numpy.testing import assert_allclose

from hparam_transfer.core import SeededRng
from hparam_transfer.solvers import HyperVector, denoise_tv_l2
from hparam_transfer.sure import (avg_oracle_baseline, default_epsilon, mc_divergence, sure_curve,
                                  sure_risk, sure_select_lambda)


def _noisy(seed=0, size=16, sigma=0.1):
    rng = np.random.default_rng(seed)
    x = np.tile(np.linspace(0.2, 0.8, size)[None, :, None], (size, 1, 1))
    x[4:10, 4:10] = 0.9
    return x, x + sigma * rng.standard_normal(x.shape)


class TestDivergence:
    @pytest.mark.parametrize("c", [0.0, 0.3, 1.0, 2.5])
    def test_linear_exact(self, c):
        y = np.random.default_rng(1).random((5, 6, 3))
        for seed in range(3):
            assert_allclose(mc_divergence(lambda z: c * z, y, 1e-3, SeededRng(seed)), c * y.size)

    def test_identity(self):
        y = np.random.default_rng(2).random((4, 4, 1))
        assert_allclose(mc_divergence(lambda z: z, y, 1e-3, SeededRng(0)), 16)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            mc_divergence(lambda z: z, np.zeros(3), 0.0, SeededRng(0))

    def test_tv_l2_against_trace(self):
        _, y = _noisy()
        lam = 0.03

        def f(z):
            return denoise_tv_l2(z, lam)
        eps = default_epsilon(y)
        fy = f(y).ravel()
        trace = 0.0
        for k in range(y.size):
            e = np.zeros(y.size)
            e[k] = eps
            trace += (f(y + e.reshape(y.shape)).ravel()[k] - fy[k]) / eps
        est = mc_divergence(f, y, eps, SeededRng(0))
        assert abs(est - trace) <= 0.1 * trace


class TestRisk:
    def test_identity(self):
        y = np.random.default_rng(3).random((6, 6, 1))
        r = sure_risk(y, lambda z: z, 0.2, 1e-3, SeededRng(0))
        assert_allclose(r.risk, 0.2 ** 2)

    def test_constant_zero(self):
        y = np.random.default_rng(4).random((6, 6, 3))
        r = sure_risk(y, np.zeros_like, 0.1, 1e-3, SeededRng(0))
        assert_allclose(r.risk, np.mean(y ** 2) - 0.01)

    def test_probe_invariance_linear(self):
        y = np.random.default_rng(5).random((6, 6, 1))
        a = sure_risk(y, lambda z: 0.5 * z, 0.1, 1e-3, SeededRng(1)).risk
        b = sure_risk(y, lambda z: 0.5 * z, 0.1, 1e-3, SeededRng(2)).risk
        assert_allclose(a, b)

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            sure_risk(np.zeros(3), lambda z: z, 0.0, 1e-3, SeededRng(0))


class TestSelect:
    def test_singleton(self):
        _, y = _noisy()
        assert sure_select_lambda(y, 0.1, [0.05]) == 0.05

    def test_against_direct_risk(self):
        _, y = _noisy(seed=6, sigma=0.3)
        grid = [1e-9, 0.2]
        for sigma in (0.05, 0.3):
            curve = sure_curve(y, sigma, grid)
            direct = []
            b = SeededRng(0).rademacher(y.shape)
            eps = default_epsilon(y)
            for lam in grid:
                fy = denoise_tv_l2(y, lam)
                div = np.sum(b * (denoise_tv_l2(y + eps * b, lam) - fy)) / eps
                direct.append(np.mean((fy - y) ** 2) - sigma ** 2 + 2 * sigma ** 2 * div / y.size)
            assert_allclose([e.risk for e in curve], direct)
            want = grid[int(np.argmin(direct))]
            assert sure_select_lambda(y, sigma, grid) == want
        # at large sigma smoothing wins
        assert sure_select_lambda(y, 0.3, grid) == 0.2

    def test_ties_pick_smaller(self):
        y = np.full((6, 6, 1), 0.4)
        assert sure_select_lambda(y, 0.1, [0.5, 0.05, 0.2]) == 0.05

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            sure_curve(np.zeros((4, 4, 1)), 0.1, [])


class TestAvgOracle:
    def test_single(self):
        p = HyperVector.for_config("l2", "tv", lam=-1.3, domain="learning")
        assert avg_oracle_baseline([p]) == p

    def test_mean_log_lambda(self):
        ps = [HyperVector.for_config("l2", "tv", lam=v, domain="learning") for v in (-1.0, -3.0)]
        out = avg_oracle_baseline(ps)
        assert_allclose(out.lam, -2.0)
        assert out.mask == (False, True, False)

    def test_solver_domain_inputs(self):
        ps = [HyperVector.for_config("l2", "tv", lam=v) for v in (0.1, 0.001)]
        assert_allclose(avg_oracle_baseline(ps).lam, -2.0)

    def test_mixed_masks(self):
        ps = [HyperVector.for_config("l2", "tv", lam=-1.0, domain="learning"),
              HyperVector.for_config("huber", "tv", delta=0.1, lam=-1.0, domain="learning")]
        with pytest.raises(ValueError):
            avg_oracle_baseline(ps)

    def test_empty(self):
        with pytest.raises(ValueError):
            avg_oracle_baseline([])
