"""Interference-channel rates, prices, and waterfilling best responses."""

import numpy as np
import pytest

from parbest.core import (
    StrategyProfile,
    SurrogateKind,
    SurrogatePolicy,
    make_schedule_power,
    run,
)
from parbest.errors import ContractError
from parbest.siso import (
    SisoChannelSample,
    SisoProblem,
    best_response,
    own_rate_grad,
    pricing,
    rate_user,
    sample_sum_grad,
    sum_rate,
    waterfill_budget,
)

from oracles import fd_grad, simplex_cap_project, spg_max


def rate_loops(pblocks, h, i):
    """Definitional per-subchannel rate, plain loops."""
    I, _, N = h.h.shape
    total = 0.0
    for n in range(N):
        mui = h.sigma2[i, n]
        for j in range(I):
            if j != i:
                mui += abs(h.h[i, j, n]) ** 2 * pblocks[j][n]
        total += np.log(1.0 + abs(h.h[i, i, n]) ** 2 * pblocks[i][n] / mui)
    return total


def symmetric_sample():
    h = np.ones((2, 2, 1), dtype=complex)
    return SisoChannelSample(h, np.ones((2, 1)))


def random_instance(rng, I, N, cross=0.5):
    h = (rng.standard_normal((I, I, N))
         + 1j * rng.standard_normal((I, I, N))) / np.sqrt(2)
    mask = ~np.eye(I, dtype=bool)
    h[mask] *= cross
    sigma2 = rng.uniform(0.5, 1.5, size=(I, N))
    sample = SisoChannelSample(h, sigma2)
    budgets = rng.uniform(1.0, 4.0, size=I)
    blocks = [rng.uniform(0, 1, size=N) for _ in range(I)]
    blocks = [b * (budgets[i] * rng.uniform(0.3, 1.0) / max(b.sum(), 1e-9))
              for i, b in enumerate(blocks)]
    p = StrategyProfile(blocks, list(budgets))
    return p, sample


class TestChannelSample:
    def test_shape_checks(self):
        with pytest.raises(ContractError):
            SisoChannelSample(np.ones((2, 3, 4)), np.ones((2, 4)))
        with pytest.raises(ContractError):
            SisoChannelSample(np.ones((2, 2, 4)), np.ones((2, 3)))

    def test_noise_must_be_positive(self):
        s2 = np.ones((2, 1))
        s2[0, 0] = 0.0
        with pytest.raises(ContractError):
            SisoChannelSample(np.ones((2, 2, 1)), s2)


class TestRateUser:
    def test_single_user_log2(self):
        h = SisoChannelSample(np.ones((1, 1, 1)), np.ones((1, 1)))
        p = StrategyProfile([np.array([1.0])], [1.0])
        assert rate_user(p, h, 0) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_symmetric_pair(self):
        h = symmetric_sample()
        p = StrategyProfile([np.array([1.0]), np.array([1.0])], [1.0, 1.0])
        for i in range(2):
            assert rate_user(p, h, i) == pytest.approx(np.log(1.5), rel=1e-12)

    def test_zero_power_zero_rate(self):
        h = symmetric_sample()
        p = StrategyProfile([np.array([0.0]), np.array([1.0])], [1.0, 1.0])
        assert rate_user(p, h, 0) == 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            p, h = random_instance(rng, 4, 3)
            for i in range(4):
                assert rate_user(p, h, i) == pytest.approx(
                    rate_loops(p.blocks, h, i), rel=1e-12)
            assert sum_rate(p, h) == pytest.approx(
                sum(rate_loops(p.blocks, h, i) for i in range(4)), rel=1e-12)


class TestPricing:
    def test_symmetric_pair_value(self):
        h = symmetric_sample()
        p = StrategyProfile([np.array([1.0]), np.array([1.0])], [1.0, 1.0])
        assert pricing(p, h, 0)[0] == pytest.approx(-1.0 / 6.0, rel=1e-12)

    def test_single_user_empty_sum(self):
        h = SisoChannelSample(np.ones((1, 1, 2)), np.ones((1, 2)))
        p = StrategyProfile([np.array([0.4, 0.6])], [1.0])
        assert np.array_equal(pricing(p, h, 0), np.zeros(2))

    def test_zero_cross_channels(self):
        h = np.zeros((2, 2, 2), dtype=complex)
        h[0, 0], h[1, 1] = 1.0, 1.0
        s = SisoChannelSample(h, np.ones((2, 2)))
        p = StrategyProfile([np.array([0.4, 0.6])] * 2, [1.0, 1.0])
        assert np.array_equal(pricing(p, s, 0), np.zeros(2))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(15):
            p, h = random_instance(rng, 3, 4)
            for i in range(3):
                def others(pi):
                    blocks = [b.copy() for b in p.blocks]
                    blocks[i] = pi
                    return sum(rate_loops(blocks, h, j)
                               for j in range(3) if j != i)
                fd = fd_grad(others, p.blocks[i].copy(), h=1e-6)
                got = pricing(p, h, i)
                assert np.abs(got - fd).max() <= 1e-5 * max(
                    1.0, np.abs(fd).max())

    def test_nonpositive_everywhere(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            p, h = random_instance(rng, 5, 6, cross=1.0)
            for i in range(5):
                assert pricing(p, h, i).max() <= 0.0


class TestSampleSumGrad:
    def test_single_user_value(self):
        h = SisoChannelSample(np.ones((1, 1, 1)), np.ones((1, 1)))
        p = StrategyProfile([np.array([1.0])], [1.0])
        assert sample_sum_grad(p, h)[0][0] == pytest.approx(0.5, rel=1e-12)

    def test_symmetric_pair_value(self):
        h = symmetric_sample()
        p = StrategyProfile([np.array([1.0]), np.array([1.0])], [1.0, 1.0])
        grads = sample_sum_grad(p, h)
        for g in grads:
            assert g[0] == pytest.approx(1.0 / 3.0 - 1.0 / 6.0, rel=1e-12)

    def test_zero_cross_reduces_to_own_gradient(self):
        h = np.zeros((2, 2, 3), dtype=complex)
        h[0, 0] = 1.0
        h[1, 1] = 2.0
        s = SisoChannelSample(h, np.ones((2, 3)))
        p = StrategyProfile([np.array([0.1, 0.2, 0.3])] * 2, [1.0, 1.0])
        for i in range(2):
            assert np.allclose(sample_sum_grad(p, s)[i],
                               own_rate_grad(p, s, i), rtol=1e-13)

    def test_matches_finite_differences_interior(self):
        rng = np.random.default_rng(7)
        for _ in range(12):
            p, h = random_instance(rng, 4, 5)
            grads = sample_sum_grad(p, h)
            for i in range(4):
                def total(pi):
                    blocks = [b.copy() for b in p.blocks]
                    blocks[i] = pi
                    return sum(rate_loops(blocks, h, j) for j in range(4))
                fd = fd_grad(total, p.blocks[i].copy(), h=1e-6)
                assert np.abs(grads[i] - fd).max() <= 1e-5 * max(
                    1.0, np.abs(fd).max())


class TestWaterfillBudget:
    def test_slack_budget_zero_multiplier(self):
        # strongly penalized powers stay interior
        p, mu = waterfill_budget(1.0, np.ones(3), 1.0,
                                 -np.ones(3) * 0.5, 10.0)
        assert mu == 0.0
        assert p.sum() < 10.0

    def test_complementarity_random(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            N = int(rng.integers(1, 9))
            b = rng.uniform(0.01, 5.0, N)
            d = rng.normal(0.0, 1.0, N)
            tau = 10.0 ** rng.uniform(-8, 0)
            rho = rng.uniform(0.05, 1.0)
            P = rng.uniform(0.5, 5.0)
            p, mu = waterfill_budget(rho, b, tau, d, P)
            assert p.min() >= 0.0
            assert p.sum() <= P * (1 + 1e-12)
            assert mu * abs(p.sum() - P) <= 1e-8 * P

    def test_matches_projected_gradient(self):
        rng = np.random.default_rng(9)
        for _ in range(40):
            N = int(rng.integers(2, 9))
            b = rng.uniform(0.05, 4.0, N)
            d = rng.normal(0.0, 1.0, N)
            tau = 10.0 ** rng.uniform(-4, 0)
            rho = rng.uniform(0.1, 1.0)
            P = rng.uniform(0.5, 3.0)

            def f(p):
                return float(np.sum(rho * np.log1p(b * p) + d * p
                                    - 0.5 * tau * p * p))

            def grad(p):
                return rho * b / (1.0 + b * p) + d - tau * p

            x0 = np.full(N, P / (2 * N))
            xs, info = spg_max(f, grad,
                               lambda v: simplex_cap_project(v, P), x0)
            p, _ = waterfill_budget(rho, b, tau, d, P)
            assert f(p) >= info["value"] - 1e-6

    def test_tau_zero_branch(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            N = int(rng.integers(2, 6))
            b = rng.uniform(0.2, 3.0, N)
            d = rng.normal(0.0, 0.5, N)
            rho = rng.uniform(0.2, 1.0)
            P = rng.uniform(0.5, 2.0)

            def f(p):
                return float(np.sum(rho * np.log1p(b * p) + d * p))

            def grad(p):
                return rho * b / (1.0 + b * p) + d

            xs, info = spg_max(f, grad,
                               lambda v: simplex_cap_project(v, P),
                               np.full(N, P / (2 * N)))
            p, mu = waterfill_budget(rho, b, 0.0, d, P)
            assert f(p) >= info["value"] - 1e-6

    def test_tau_zero_needs_concavity(self):
        with pytest.raises(ContractError):
            waterfill_budget(1.0, np.array([0.0, 1.0]), 0.0,
                             np.zeros(2), 1.0)

    def test_bad_budget(self):
        with pytest.raises(ContractError):
            waterfill_budget(1.0, np.ones(2), 1.0, np.zeros(2), 0.0)


class TestBestResponse:
    def test_proximal_anchor_dominates(self):
        rng = np.random.default_rng(11)
        p, h = random_instance(rng, 3, 4)
        for i in range(3):
            out = best_response(p, h, np.zeros(4), 1.0, 1e6, i)
            assert np.abs(out - p.blocks[i]).max() <= 1e-3

    def test_budget_binds_single_user(self):
        h = SisoChannelSample(np.ones((1, 1, 1)), np.ones((1, 1)))
        p = StrategyProfile([np.array([0.2])], [1.0])
        out = best_response(p, h, np.zeros(1), 1.0, 1e-8, 0)
        assert out[0] == pytest.approx(1.0, rel=1e-9)

    def test_matches_projected_gradient_oracle(self):
        # inner problem: rho*r_i + <p, rho*pi + (1-rho)*f> - tau/2 ||p-pt||^2
        rng = np.random.default_rng(13)
        for trial in range(100):
            I = int(rng.integers(1, 6))
            N = int(rng.integers(1, 9))
            p, h = random_instance(rng, I, N)
            i = int(rng.integers(0, I))
            rho = rng.uniform(0.05, 1.0)
            tau = 10.0 ** rng.uniform(-6, 0)
            f_prev = rng.normal(0.0, 0.3, N)
            lin = rho * pricing(p, h, i) + (1.0 - rho) * f_prev
            P = p.budgets[i]
            pt = p.blocks[i]
            mui = np.array([h.sigma2[i, n] + sum(
                abs(h.h[i, j, n]) ** 2 * p.blocks[j][n]
                for j in range(I) if j != i) for n in range(N)])
            b = np.abs(h.h[i, i, :]) ** 2 / mui

            def f(q):
                return float(np.sum(rho * np.log1p(b * q) + lin * q
                                    - 0.5 * tau * (q - pt) ** 2))

            def grad(q):
                return rho * b / (1.0 + b * q) + lin - tau * (q - pt)

            xs, info = spg_max(f, grad,
                               lambda v: simplex_cap_project(v, P),
                               np.full(N, P / (2 * N)))
            out = best_response(p, h, f_prev, rho, tau, i)
            assert out.min() >= 0 and out.sum() <= P * (1 + 1e-12)
            assert f(out) >= info["value"] - 1e-6

    def test_zero_power_profile_is_fine(self):
        rng = np.random.default_rng(14)
        _, h = random_instance(rng, 3, 4)
        p0 = StrategyProfile([np.zeros(4)] * 3, [2.0, 2.0, 2.0])
        out = best_response(p0, h, np.zeros(4), 1.0, 1e-8, 0)
        assert np.isfinite(out).all()
        assert out.sum() == pytest.approx(2.0, rel=1e-8)

    def test_rho_out_of_range(self):
        rng = np.random.default_rng(15)
        p, h = random_instance(rng, 2, 2)
        with pytest.raises(ContractError):
            best_response(p, h, np.zeros(2), 0.0, 1.0, 0)


class TestDriverIntegration:
    def make_problem(self, I=5, N=8, cross_gain=0.2, tau=1e-8):
        def draw(seed, t):
            ss = np.random.SeedSequence(entropy=seed, spawn_key=(0, t))
            rng = np.random.default_rng(ss)
            h = (rng.standard_normal((I, I, N))
                 + 1j * rng.standard_normal((I, I, N))) / np.sqrt(2)
            mask = ~np.eye(I, dtype=bool)
            h[mask] *= cross_gain
            return SisoChannelSample(h, np.full((I, N), 0.1))

        return SisoProblem(I, N, [1.0] * I, draw, tau=tau)

    def test_run_feasible_tiny_tau(self):
        # tau ~ 0 keeps every iterate feasible even though the raw
        # per-sample gap saturates (prox map amplifies noise by 1/tau)
        prob = self.make_problem(tau=1e-8)
        sched = make_schedule_power(0.61, 0.6, 2.0)
        pol = SurrogatePolicy(SurrogateKind.PRICING, tau=1e-8)
        traj = run(prob, sched, pol, seed=21, T=120)
        for snap in traj.profiles:
            snap.validate()

    def test_run_settling_with_unit_tau(self):
        prob = self.make_problem(tau=1.0)
        sched = make_schedule_power(0.61, 0.6, 2.0)
        pol = SurrogatePolicy(SurrogateKind.PRICING, tau=1.0)
        traj = run(prob, sched, pol, seed=21, T=501)
        for snap in traj.profiles:
            snap.validate()
        assert traj.gaps[500] < traj.gaps[10]

    def test_run_deterministic(self):
        prob = self.make_problem(I=3, N=4)
        sched = make_schedule_power(0.61, 0.6, 2.0)
        pol = SurrogatePolicy(SurrogateKind.PRICING, tau=1e-8)
        t1 = run(prob, sched, pol, seed=4, T=25)
        t2 = run(prob, sched, pol, seed=4, T=25)
        assert t1.objective_samples == t2.objective_samples
