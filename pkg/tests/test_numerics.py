import numpy as np
import pytest

from dualmpc import numerics as num
from dualmpc.numerics import NumericsError

from conftest import BT_AC, BT_BC, random_schur


def taylor_expm(A, t, terms=200):
    """Plain Taylor-series oracle summed to machine convergence."""
    M = A * t
    E = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        E = E + term
        if np.max(np.abs(term)) < 1e-18:
            break
    return E


def rk4_zoh(Ac, Bc, dt, steps=20000):
    """Integrate xdot = Ac x + Bc u with constant u columnwise, RK4."""
    n, m = Bc.shape
    h = dt / steps
    A = np.eye(n)
    B = np.zeros((n, m))

    def f(X, U):
        return Ac @ X + Bc @ U

    U_A = np.zeros((m, n))
    for _ in range(steps):
        k1 = f(A, U_A)
        k2 = f(A + 0.5 * h * k1, U_A)
        k3 = f(A + 0.5 * h * k2, U_A)
        k4 = f(A + h * k3, U_A)
        A = A + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        U_B = np.eye(m)
        k1 = f(B, U_B)
        k2 = f(B + 0.5 * h * k1, U_B)
        k3 = f(B + 0.5 * h * k2, U_B)
        k4 = f(B + h * k3, U_B)
        B = B + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return A, B


def power_iteration_radius(M, iters=20000, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[0])
    v /= np.linalg.norm(v)
    growth = 1.0
    for i in range(iters):
        w = M @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        if i >= iters - 50:
            growth *= nw ** (1 / 50)
        v = w / nw
    return growth


class TestMatExp:
    def test_zero_matrix(self):
        assert np.allclose(num.mat_exp(np.zeros((3, 3)), 1.0), np.eye(3))

    def test_scalar_decay(self):
        E = num.mat_exp(np.array([[-0.1]]), 1.0)
        assert abs(E[0, 0] - np.exp(-0.1)) < 1e-14

    def test_bt_matrix_vs_taylor(self):
        E = num.mat_exp(BT_AC, 1.0)
        assert np.max(np.abs(E - taylor_expm(BT_AC, 1.0))) < 1e-13

    def test_semigroup_property(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            A = rng.standard_normal((4, 4))
            s, t = rng.uniform(0.1, 1.5, size=2)
            lhs = num.mat_exp(A, s + t)
            rhs = num.mat_exp(A, s) @ num.mat_exp(A, t)
            assert np.max(np.abs(lhs - rhs)) < 1e-9 * (1 + np.max(np.abs(lhs)))

    def test_rejects_nonsquare(self):
        with pytest.raises(NumericsError):
            num.mat_exp(np.zeros((2, 3)), 1.0)


class TestZohDiscretize:
    def test_pure_integrator(self):
        A, B = num.zoh_discretize(np.zeros((2, 2)), np.eye(2), 1.0)
        assert np.allclose(A, np.eye(2))
        assert np.allclose(B, np.eye(2))

    def test_scalar_closed_form(self):
        A, B = num.zoh_discretize(np.array([[-1.0]]), np.array([[1.0]]), 1.0)
        assert abs(A[0, 0] - np.exp(-1)) < 1e-14
        assert abs(B[0, 0] - (1 - np.exp(-1))) < 1e-14

    def test_bt_vs_rk4(self):
        A, B = num.zoh_discretize(BT_AC, BT_BC, 1.0)
        A_o, B_o = rk4_zoh(BT_AC, BT_BC, 1.0)
        assert np.max(np.abs(A - A_o)) < 1e-9
        assert np.max(np.abs(B - B_o)) < 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(NumericsError):
            num.zoh_discretize(np.eye(2), np.zeros((3, 1)), 1.0)

    def test_nonpositive_dt(self):
        with pytest.raises(NumericsError):
            num.zoh_discretize(np.eye(2), np.eye(2), 0.0)


class TestLyapunov:
    def test_f_zero_gives_q(self):
        Q = np.diag([1.0, 2.0, 3.0])
        assert np.allclose(num.solve_discrete_lyapunov(np.zeros((3, 3)), Q), Q)

    def test_scalar_geometric_series(self):
        P = num.solve_discrete_lyapunov(np.array([[0.5]]), np.array([[1.0]]))
        assert abs(P[0, 0] - 4.0 / 3.0) < 1e-12

    def test_residual_on_random_problems(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            F = random_schur(rng, 4)
            G = rng.standard_normal((4, 4))
            Q = G @ G.T
            P = num.solve_discrete_lyapunov(F, Q)
            resid = np.linalg.norm(F.T @ P @ F - P + Q, "fro")
            assert resid <= 1e-10 * (1 + np.linalg.norm(Q, "fro"))

    def test_unstable_f_rejected(self):
        with pytest.raises(NumericsError):
            num.solve_discrete_lyapunov(np.eye(2) * 1.5, np.eye(2))


class TestDare:
    def test_scalar_deadbeat(self):
        K, P = num.solve_dare_gain(np.array([[0.0]]), np.array([[1.0]]),
                                   np.array([[1.0]]), np.array([[1.0]]))
        assert abs(P[0, 0] - 1.0) < 1e-9
        assert abs(K[0, 0]) < 1e-9

    def test_scalar_golden_ratio(self):
        K, P = num.solve_dare_gain(np.array([[1.0]]), np.array([[1.0]]),
                                   np.array([[1.0]]), np.array([[1.0]]))
        assert abs(P[0, 0] - (1 + np.sqrt(5)) / 2) < 1e-9
        assert abs(K[0, 0] + (np.sqrt(5) - 1) / 2) < 1e-8

    def test_residual_and_stability_random(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            A = rng.standard_normal((4, 4)) * 0.8
            B = rng.standard_normal((4, 2))
            G = rng.standard_normal((4, 4))
            Q = G @ G.T + 0.1 * np.eye(4)
            R = np.diag(rng.uniform(0.5, 3.0, size=2))
            K, P = num.solve_dare_gain(A, B, Q, R)
            F = A + B @ K
            assert num.is_schur_stable(F).is_schur
            resid = np.linalg.norm(A.T @ P @ F + Q - P, "fro")
            assert resid <= 1e-9

    def test_non_stabilizable_pair(self):
        # scalar x+ = x + 0*u with state cost: no stabilizing gain exists
        with pytest.raises(NumericsError):
            num.solve_dare_gain(np.array([[1.0]]), np.array([[0.0]]),
                                np.array([[1.0]]), np.array([[1.0]]))


class TestSchurStability:
    def test_half_identity(self):
        rep = num.is_schur_stable(0.5 * np.eye(3))
        assert rep.is_schur
        assert rep.certificate is not None
        F = 0.5 * np.eye(3)
        assert np.allclose(F.T @ rep.certificate @ F - rep.certificate, -np.eye(3), atol=1e-9)

    def test_identity_is_marginal(self):
        assert not num.is_schur_stable(np.eye(3)).is_schur

    def test_agrees_with_power_iteration_oracle(self):
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 100:
            M = rng.standard_normal((4, 4)) * rng.uniform(0.2, 0.6)
            rho = power_iteration_radius(M, iters=4000, seed=checked)
            if abs(rho - 1.0) < 1e-6:
                continue
            assert num.is_schur_stable(M).is_schur == (rho < 1.0)
            checked += 1


class TestRank:
    def test_identity(self):
        assert num.rank_with_tolerance(np.eye(3), 1e-9) == 3

    def test_outer_product(self):
        u = np.array([1.0, 2.0, -1.0])
        v = np.array([0.5, 1.5])
        assert num.rank_with_tolerance(np.outer(u, v), 1e-9) == 1

    def test_zero_matrix(self):
        assert num.rank_with_tolerance(np.zeros((3, 4)), 1e-9) == 0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(9)
        M = rng.standard_normal((5, 3)) @ rng.standard_normal((3, 6))
        base = num.rank_with_tolerance(M, 1e-9)
        assert base == 3
        for _ in range(10):
            pr = rng.permutation(5)
            pc = rng.permutation(6)
            assert num.rank_with_tolerance(M[pr][:, pc], 1e-9) == base

    def test_gram_determinant_oracle(self):
        # rank == largest subset of columns with nonsingular Gram matrix
        rng = np.random.default_rng(17)
        from itertools import combinations
        for _ in range(10):
            r = rng.integers(1, 4)
            M = rng.standard_normal((5, r)) @ rng.standard_normal((r, 5))
            best = 0
            for size in range(1, 6):
                for cols in combinations(range(5), size):
                    G = M[:, cols].T @ M[:, cols]
                    if abs(np.linalg.det(G)) > 1e-9 * max(1.0, np.trace(G) ** size):
                        best = max(best, size)
            assert num.rank_with_tolerance(M, 1e-9) == best


class TestInvariantZero:
    def test_simple_integrator_pair(self):
        ok = num.check_no_unit_invariant_zero(np.array([[0.0]]), np.array([[1.0]]),
                                              np.array([[1.0]]))
        assert ok

    def test_constructed_unit_zero(self):
        # x1+ = x1 + u, x2+ = x2 + u, y = x1 - x2: the difference is
        # uncontrollable and constant, so Phi is singular.
        A = np.eye(2)
        B = np.array([[1.0], [1.0]])
        C = np.array([[1.0, -1.0]])
        assert not num.check_no_unit_invariant_zero(A, B, C)

    def test_determinant_oracle_random(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            A = random_schur(rng, 3)
            B = rng.standard_normal((3, 2))
            C = rng.standard_normal((2, 3))
            Phi = np.block([[np.eye(3) - A, -B], [C, np.zeros((2, 2))]])
            expect = abs(np.linalg.det(Phi)) > 1e-9 * max(
                1.0, float(np.prod(np.linalg.norm(Phi, axis=1))))
            assert num.check_no_unit_invariant_zero(A, B, C) == expect

    def test_non_square_rejected(self):
        with pytest.raises(NumericsError):
            num.check_no_unit_invariant_zero(np.eye(2), np.ones((2, 1)), np.eye(2))


class TestPbhVelocity:
    def test_zero_input_matrix(self):
        A = 0.5 * np.eye(3)
        Bs = np.zeros((3, 1))
        Cs = np.array([[1.0, 0.0, 0.0]])
        assert not num.check_pbh_stabilizable_velocity(A, Bs, Cs)

    def test_diagonal_toy_system(self):
        A = 0.5 * np.eye(2)
        Bs = np.array([[1.0], [0.3]])
        Cs = np.array([[1.0, 0.0]])
        assert num.check_pbh_stabilizable_velocity(A, Bs, Cs)

    def test_dare_existence_oracle(self):
        # When the PBH test passes, a stabilizing gain for the velocity pair exists.
        rng = np.random.default_rng(2)
        for _ in range(10):
            A = random_schur(rng, 3, rho_max=0.8)
            Bs = rng.standard_normal((3, 1))
            Cs = rng.standard_normal((1, 3))
            n, ps = 3, 1
            Abar = np.block([[np.eye(ps), Cs @ A], [np.zeros((n, ps)), A]])
            Bbar = np.vstack([Cs @ Bs, Bs])
            if num.check_pbh_stabilizable_velocity(A, Bs, Cs):
                K, P = num.solve_dare_gain(Abar, Bbar, np.eye(n + ps), np.eye(1))
                assert num.is_schur_stable(Abar + Bbar @ K).is_schur


class TestPositiveDefinite:
    def test_positive(self):
        assert num.is_positive_definite(np.diag([1.0, 2.0]))

    def test_indefinite(self):
        assert not num.is_positive_definite(np.diag([1.0, -0.1]))

    def test_semidefinite(self):
        assert not num.is_positive_definite(np.diag([1.0, 0.0]))
