"""Tests for the trace-constrained log-det proximal solver."""

import numpy as np
import pytest

import oracles
from parbest import logdet_prox as ldp


def herm(M):
    return 0.5 * (M + M.conj().T)


def rand_herm(rng, n, scale=1.0):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * herm(A)


def rand_psd(rng, n):
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (B @ B.conj().T) / n


class TestSolveX:

    def test_interior_point_returned_unchanged(self):
        rng = np.random.default_rng(2)
        Xck = rand_psd(rng, 3)
        Xck *= 0.5 / np.trace(Xck).real
        X, mu = ldp.solve_X(np.zeros((3, 3), dtype=complex), Xck, 0.5, 2.0)
        np.testing.assert_allclose(X, Xck, atol=1e-10)
        assert mu == 0.0

    def test_waterlevel_clip(self):
        # tau = 1/2 makes the map [Xcheck - mu I]+ exactly
        X, mu = ldp.solve_X(np.zeros((2, 2), dtype=complex),
                            np.diag([3.0, 1.0]).astype(complex), 0.5, 2.0)
        np.testing.assert_allclose(X, np.diag([2.0, 0.0]), atol=1e-9)
        assert mu == pytest.approx(1.0, abs=1e-9)

    def test_matches_projected_gradient_oracle(self):
        rng = np.random.default_rng(31)
        n, k, tau, P = 4, 3, 0.7, 2.5
        Z = rand_herm(rng, k)
        Xck = rand_herm(rng, n, scale=1.2)
        Zf = np.zeros((n, n), dtype=complex)
        Zf[:k, :k] = Z

        def f(X):
            dX = X - Xck
            return (-tau * float(np.real(np.trace(dX.conj().T @ dX)))
                    - float(np.real(np.trace(Z.conj().T @ X[:k, :k]))))

        X, mu = ldp.solve_X(Z, Xck, tau, P)
        Xo, _ = oracles.spg_max(f, lambda X: -2 * tau * (X - Xck) - Zf,
                                lambda X: oracles.psd_cap_project(X, P),
                                np.zeros((n, n), dtype=complex), tol=1e-11)
        assert f(X) >= f(Xo) - 1e-8
        assert np.trace(X).real <= P + 1e-9
        assert np.linalg.eigvalsh(X).min() >= -1e-12


class TestSolveY:

    def test_scalar_interior(self):
        Y, mu, br = ldp.solve_Y(np.array([[-1.0 + 0j]]), np.array([[2.0]]),
                                1.0, 10.0)
        assert Y[0, 0].real == pytest.approx(0.5, abs=1e-10)
        assert mu == 0.0
        np.testing.assert_allclose(br, (0.0, 1.0))

    def test_dominant_penalty_kills_y(self):
        Y, mu, _ = ldp.solve_Y(np.array([[-1e6 + 0j]]), np.array([[2.0]]),
                               1.0, 10.0)
        assert abs(Y[0, 0]) <= 1e-5

    def test_mu_inside_reported_bracket(self):
        rng = np.random.default_rng(37)
        for _ in range(25):
            k = int(rng.integers(1, 5))
            Z = rand_herm(rng, k)
            D1 = np.diag(rng.uniform(0.2, 4.0, size=k))
            rho = float(rng.choice([0.3, 1.0]))
            P = float(rng.choice([1.0, 5.0]))
            Y, mu, (lb, ub) = ldp.solve_Y(Z, D1, rho, P)
            assert lb - 1e-9 <= mu <= ub + 1e-8 * (1.0 + ub)
            assert np.trace(Y).real <= P * (1 + 1e-9)
            assert np.linalg.eigvalsh(Y).min() >= -1e-12
            # complementarity of the budget multiplier
            if mu > 1e-9:
                assert abs(np.trace(Y).real - P) <= 1e-7 * max(1.0, P)

    def test_matches_projected_gradient_oracle(self):
        rng = np.random.default_rng(41)
        k, rho, P = 3, 0.8, 2.0
        Z = rand_herm(rng, k)
        D1 = np.diag(rng.uniform(0.3, 3.0, size=k))
        S = np.sqrt(D1)

        def f(Y):
            sign, val = np.linalg.slogdet(np.eye(k) + S @ Y @ S)
            return rho * float(val) + float(np.real(np.trace(Z.conj().T @ Y)))

        def g(Y):
            return rho * S @ np.linalg.inv(np.eye(k) + S @ Y @ S) @ S + Z

        Y, mu, _ = ldp.solve_Y(Z, D1, rho, P)
        Yo, _ = oracles.spg_max(f, g, lambda M: oracles.psd_cap_project(M, P),
                                np.eye(k, dtype=complex) * (P / k), tol=1e-10)
        assert f(Y) >= f(Yo) - 1e-6


class TestFullSolver:

    def rand_instance(self, rng, n, m, tau):
        H = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
        R0 = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        R = herm(R0 @ R0.conj().T) + 0.1 * np.eye(m)
        A = rand_herm(rng, n)
        Xb = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        Xbar = herm(Xb @ Xb.conj().T) / n
        rho = float(rng.choice([0.3, 1.0]))
        P = float(rng.choice([1.0, 5.0]))
        return R, H, A, Xbar, rho, tau, P

    @pytest.mark.parametrize("tau", [1e-8, 0.01, 1.0])
    def test_converges_and_feasible(self, tau):
        rng = np.random.default_rng(int(tau * 1e9) % 1000 + 5)
        for _ in range(6):
            R, H, A, Xbar, rho, _, P = self.rand_instance(rng, 3, 3, tau)
            X, info = ldp.solve_logdet_prox(R, H, A, Xbar, rho, tau, P)
            assert info["gap"] <= 1e-7
            assert np.trace(X).real <= P * (1 + 1e-8)
            assert np.linalg.eigvalsh(X).min() >= -1e-10
            assert np.abs(X - X.conj().T).max() <= 1e-12

    def test_against_spg_oracle(self):
        rng = np.random.default_rng(53)
        R, H, A, Xbar, rho, tau, P = self.rand_instance(rng, 3, 2, 0.01)
        X, info = ldp.solve_logdet_prox(R, H, A, Xbar, rho, tau, P)

        def f(Xv):
            return ldp.primal_value(Xv, R, H, A, Xbar, rho, tau)

        def g(Xv):
            Rin = np.linalg.inv(herm(R + H @ Xv @ H.conj().T))
            return herm(rho * H.conj().T @ Rin @ H + A - 2 * tau * (Xv - Xbar))

        Xo, _ = oracles.spg_max(f, g, lambda M: oracles.psd_cap_project(M, P),
                                np.eye(3, dtype=complex) * (P / 6), tol=1e-10)
        assert f(X) >= f(Xo) - 1e-6 * max(1.0, abs(f(Xo)))

    def test_dual_value_monotone_on_accepted_steps(self):
        rng = np.random.default_rng(59)
        for _ in range(8):
            n = int(rng.integers(2, 5))
            tau = float(rng.choice([0.01, 1.0]))
            R, H, A, Xbar, rho, _, P = self.rand_instance(rng, n, n, tau)
            _, info = ldp.solve_logdet_prox(R, H, A, Xbar, rho, tau, P)
            dv = info["dvals"]
            for (t0, d0), (t1, d1) in zip(dv, dv[1:]):
                if t1 in ("newton", "fallback"):
                    assert d1 <= d0 + 1e-9 * (1.0 + abs(d0))

    def test_zero_duality_gap(self):
        # dual value omits the rho*logdet(R) constant of the primal
        rng = np.random.default_rng(61)
        for _ in range(5):
            R, H, A, Xbar, rho, tau, P = self.rand_instance(rng, 3, 3, 0.01)
            X, info = ldp.solve_logdet_prox(R, H, A, Xbar, rho, tau, P)
            assert info["gap"] <= 1e-7
            dual = info["dvals"][-1][1] + rho * np.linalg.slogdet(R)[1]
            primal = ldp.primal_value(X, R, H, A, Xbar, rho, tau)
            assert abs(dual - primal) <= 1e-6 * (1.0 + abs(primal))

    def test_unitary_transform_invariance(self):
        # the solver works in the eigenbasis of H^H R^-1 H; the objective at
        # the solution must agree between original and transformed coordinates
        rng = np.random.default_rng(67)
        R, H, A, Xbar, rho, tau, P = self.rand_instance(rng, 3, 4, 1.0)
        X, info = ldp.solve_logdet_prox(R, H, A, Xbar, rho, tau, P)
        U = info["U"]
        np.testing.assert_allclose(U.conj().T @ U, np.eye(3), atol=1e-10)
        v1 = ldp.primal_value(X, R, H, A, Xbar, rho, tau)
        v2 = ldp.primal_value(U.conj().T @ X @ U, R, H @ U,
                              herm(U.conj().T @ A @ U),
                              herm(U.conj().T @ Xbar @ U), rho, tau)
        assert abs(v1 - v2) <= 1e-10 * (1.0 + abs(v1))

    def test_zero_channel_reduces_to_projection(self):
        rng = np.random.default_rng(71)
        n, tau, P = 3, 0.4, 1.5
        A = rand_herm(rng, n)
        Xbar = rand_psd(rng, n)
        R = np.eye(2)
        H = np.zeros((2, n))
        X, info = ldp.solve_logdet_prox(R, H, A, Xbar, 1.0, tau, P)
        want = oracles.psd_cap_project(Xbar + A / (2 * tau), P)
        np.testing.assert_allclose(X, want, atol=1e-8)
        assert info["k"] == 0

    def test_rank_deficient_channel(self):
        rng = np.random.default_rng(73)
        n = 3
        h = rng.standard_normal((1, n)) + 1j * rng.standard_normal((1, n))
        R = np.array([[1.0]])
        A = rand_herm(rng, n)
        Xbar = rand_psd(rng, n)
        X, info = ldp.solve_logdet_prox(R, h, A, Xbar, 1.0, 0.01, 2.0)
        assert info["k"] == 1
        assert info["gap"] <= 1e-7

    def test_continuation_rescue_on_hard_sliver(self):
        # this exact draw chatters across dual kinks when cold-started at
        # tau=1e-8; the cascade must still deliver the certified gap
        rng = np.random.default_rng(7)
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 5))
        rho = float(rng.choice([0.3, 1.0]))
        P = float(rng.choice([1.0, 5.0]))
        H = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
        H[:, -1] = H[:, 0]
        R0 = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        R = herm(R0 @ R0.conj().T) + 0.1 * np.eye(m)
        A = rand_herm(rng, n)
        Xb0 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        Xbar = herm(Xb0 @ Xb0.conj().T) / n
        X, info = ldp.solve_logdet_prox(R, H, A, Xbar, rho, 1e-8, P)
        assert info["gap"] <= 1e-7
        assert info["rescue"]
        cp = pytest.importorskip("cvxpy")
        Xv = cp.Variable((n, n), hermitian=True)
        obj = (rho * cp.log_det(R + H @ Xv @ H.conj().T)
               + cp.real(cp.trace(A.conj().T @ Xv))
               - 1e-8 * cp.sum_squares(Xv - Xbar))
        prob = cp.Problem(cp.Maximize(obj),
                          [Xv >> 0, cp.real(cp.trace(Xv)) <= P])
        prob.solve(solver=cp.CLARABEL)
        ours = ldp.primal_value(X, R, H, A, Xbar, rho, 1e-8)
        assert abs(prob.value - ours) <= 1e-6 * max(1.0, abs(prob.value))
