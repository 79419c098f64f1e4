import numpy as np
import pytest

from dualmpc import model as mdl
from dualmpc import numerics as num
from dualmpc.model import ModelError

from conftest import random_schur


def two_block_partition():
    return mdl.Partition(n_s=2, n_f=2, m_s=1, m_f=1, p_s=1, p_f=1)


def random_two_block_model(rng):
    """Random stable 4-state model with 2+2 partition and valid assumptions."""
    while True:
        A = random_schur(rng, 4, rho_max=0.85)
        B = rng.standard_normal((4, 2))
        C = np.zeros((2, 4))
        C[0, :2] = rng.standard_normal(2)
        C[1, 2:] = rng.standard_normal(2)
        try:
            return mdl.DiscreteLtiModel(A=A, B=B, C=C,
                                        partition=two_block_partition())
        except ModelError:
            continue


class TestModelValidation:
    def test_bt_model_constructs(self, bt_model):
        assert bt_model.n == 3 and bt_model.m == 3 and bt_model.p == 3

    def test_unstable_a_rejected(self):
        part = mdl.Partition(n_s=1, n_f=0, m_s=1, m_f=0, p_s=1, p_f=0)
        with pytest.raises(ModelError, match="spectral radius"):
            mdl.DiscreteLtiModel(A=[[1.5]], B=[[1.0]], C=[[1.0]], partition=part)

    def test_channel_count_mismatch_rejected(self):
        part = mdl.Partition(n_s=1, n_f=1, m_s=1, m_f=1, p_s=1, p_f=0)
        with pytest.raises(ModelError):
            mdl.DiscreteLtiModel(A=0.5 * np.eye(2), B=np.eye(2),
                                 C=np.array([[1.0, 0.0]]), partition=part)

    def test_non_block_diagonal_c_rejected(self):
        part = two_block_partition()
        C = np.ones((2, 4))
        with pytest.raises(ModelError, match="block diagonal"):
            mdl.DiscreteLtiModel(A=0.5 * np.eye(4), B=np.ones((4, 2)),
                                 C=C, partition=part)


class TestTargets:
    def test_zero_reference(self, bt_model):
        t = mdl.steady_state_targets(bt_model, np.zeros(3))
        assert np.allclose(t.x_r, 0) and np.allclose(t.u_r, 0)

    def test_bt_phase1_reference(self, bt_model):
        y_r = np.array([10.0, 1.0, -2.0])
        t = mdl.steady_state_targets(bt_model, y_r)
        assert np.allclose(t.x_r, y_r)  # C = I
        assert np.linalg.norm(bt_model.A @ t.x_r + bt_model.B @ t.u_r - t.x_r) < 1e-9
        assert np.linalg.norm(bt_model.C @ t.x_r - y_r) < 1e-9

    def test_bt_phase2_reference(self, bt_model):
        t = mdl.steady_state_targets(bt_model, np.array([5.0, 2.0, 4.0]))
        assert np.linalg.norm(bt_model.A @ t.x_r + bt_model.B @ t.u_r - t.x_r) < 1e-9


class TestResample:
    def test_n1_is_identity(self, bt_model):
        s = mdl.resample(bt_model, 1)
        assert np.allclose(s.AN, bt_model.A)
        assert np.allclose(s.BN, bt_model.B)

    def test_remark_nonstabilizable_example(self):
        part = mdl.Partition(n_s=1, n_f=0, m_s=1, m_f=0, p_s=1, p_f=0)
        m = mdl.DiscreteLtiModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], partition=part)
        with pytest.raises(ModelError, match="not stabilizable"):
            mdl.resample(m, 2)

    def test_bt_n20_vs_naive_loop(self, bt_model, bt_sampled):
        A, B = bt_model.A, bt_model.B
        AN = np.eye(3)
        for _ in range(20):
            AN = AN @ A
        BN = np.zeros_like(B)
        for j in range(20):
            BN += np.linalg.matrix_power(A, 20 - j - 1) @ B
        assert np.max(np.abs(bt_sampled.AN - AN)) < 1e-9
        assert np.max(np.abs(bt_sampled.BN - BN)) < 1e-9

    def test_composition_law_trivial(self, bt_model):
        ok, diff = mdl.compose_resample_law(bt_model, 1, 1)
        assert ok and diff == 0.0

    def test_composition_law_random(self):
        rng = np.random.default_rng(4)
        m = random_two_block_model(rng)
        ok, diff = mdl.compose_resample_law(m, 2, 3)
        assert ok, diff

    def test_composition_law_bt(self, bt_model):
        ok, diff = mdl.compose_resample_law(bt_model, 4, 5)
        assert ok, diff

    def test_detectability_preserved(self):
        # PBH detectability of (A^N, C) for random detectable pairs
        rng = np.random.default_rng(8)
        done = 0
        while done < 20:
            A = random_schur(rng, 3, rho_max=0.9)
            C = rng.standard_normal((1, 3))
            def detectable(Ax):
                M = np.vstack([np.eye(3) - Ax, C])
                return num.rank_with_tolerance(M, 1e-9) == 3
            if not detectable(A):
                continue
            for N in (2, 3, 5):
                assert detectable(np.linalg.matrix_power(A, N))
            done += 1


class TestTildeSystem:
    def test_decoupled_system_blocks(self):
        rng = np.random.default_rng(6)
        # block diagonal A and B: coupling terms of the tilde system vanish
        while True:
            As = random_schur(rng, 2, 0.8)
            Af = random_schur(rng, 2, 0.8)
            A = np.block([[As, np.zeros((2, 2))], [np.zeros((2, 2)), Af]])
            B = np.block([[rng.standard_normal((2, 1)), np.zeros((2, 1))],
                          [np.zeros((2, 1)), rng.standard_normal((2, 1))]])
            C = np.zeros((2, 4))
            C[0, :2] = rng.standard_normal(2)
            C[1, 2:] = rng.standard_normal(2)
            try:
                m = mdl.DiscreteLtiModel(A=A, B=B, C=C, partition=mdl.Partition(2, 2, 1, 1, 1, 1))
                s = mdl.resample(m, 3)
                tilde = mdl.build_tilde_system(s, m.C_ff)
                break
            except ModelError:
                continue
        nf = 2
        assert np.allclose(tilde.A_tilde[2:, :2], 0.0, atol=1e-12)
        assert np.allclose(tilde.Bs_tilde[:2], s.B_ss)

    def test_bt_one_step_closure(self, bt_model, bt_sampled):
        tilde = mdl.build_tilde_system(bt_sampled, bt_model.C_ff)
        rng = np.random.default_rng(12)
        for _ in range(100):
            x = rng.standard_normal(3)
            u_s = rng.standard_normal(1)
            ytil = rng.standard_normal(2)
            u_f = mdl.fast_input_for_reference(tilde, x, u_s, ytil)
            u = np.concatenate([u_s, u_f])
            x_direct = bt_sampled.step(x, u)
            x_tilde = tilde.A_tilde @ x + tilde.Bs_tilde @ u_s + tilde.Bf_tilde @ ytil
            assert np.max(np.abs(x_direct - x_tilde)) < 1e-9
            # defining property: next fast output equals the reference
            assert np.max(np.abs(bt_model.C_ff @ x_direct[1:] - ytil)) < 1e-9

    def test_random_two_block_closure(self):
        rng = np.random.default_rng(23)
        m = random_two_block_model(rng)
        s = mdl.resample(m, 4)
        tilde = mdl.build_tilde_system(s, m.C_ff)
        for _ in range(50):
            x = rng.standard_normal(4)
            u_s = rng.standard_normal(1)
            ytil = rng.standard_normal(1)
            u_f = mdl.fast_input_for_reference(tilde, x, u_s, ytil)
            u = np.concatenate([u_s, u_f])
            lhs = s.step(x, u)
            rhs = tilde.A_tilde @ x + tilde.Bs_tilde @ u_s + tilde.Bf_tilde @ ytil
            assert np.max(np.abs(lhs - rhs)) < 1e-9


class TestVelocityForm:
    def test_cbar_extracts_slow_output(self, bt_velocity):
        v = bt_velocity
        assert np.allclose(v.C_bar, np.hstack([np.eye(1), np.zeros((1, 3))]))

    def test_gamma_inverse_residual(self, bt_velocity):
        v = bt_velocity
        n, ps = 3, 1
        M = np.block([[v.tilde.Cs_tilde @ v.tilde.A_tilde,
                       v.tilde.Cs_tilde @ v.tilde.Bs_tilde],
                      [v.tilde.A_tilde - np.eye(n), v.tilde.Bs_tilde]])
        assert np.max(np.abs(v.gamma @ M - np.eye(n + ps))) <= 1e-10

    def test_parallel_simulation_of_tilde_and_velocity(self, bt_model, bt_sampled, bt_velocity):
        # drive both forms with the same increments; slow outputs must agree
        rng = np.random.default_rng(3)
        v = bt_velocity
        tilde = v.tilde
        y_fr = np.array([1.0, -2.0])
        y_f0 = np.zeros(2)
        x = np.zeros(3)
        x_prev = x.copy()
        us_prev = np.zeros(1)
        alpha_prev = 0.0
        xbar = np.concatenate([[0.0], x - x_prev])
        for step in range(50):
            dus = 0.05 * rng.standard_normal(1)
            dal = float(np.clip(rng.uniform(-0.02, 0.1), 0, 1 - alpha_prev))
            us = us_prev + dus
            alpha = alpha_prev + dal
            ytil = y_f0 + alpha * (y_fr - y_f0)
            # tilde system step
            x_next = tilde.A_tilde @ x + tilde.Bs_tilde @ us + tilde.Bf_tilde @ ytil
            # velocity step
            xbar = v.A_bar @ xbar + v.Bs_bar @ dus + v.Bf_bar @ (dal * (y_fr - y_f0))
            y_s_vel = v.C_bar @ xbar
            assert np.max(np.abs(y_s_vel - tilde.Cs_tilde @ x_next)) < 1e-8
            x_prev, x = x, x_next
            us_prev, alpha_prev = us, alpha

    def test_reconstruction_matches_direct_simulation(self, bt_model, bt_sampled, bt_velocity):
        rng = np.random.default_rng(14)
        v = bt_velocity
        tilde = v.tilde
        y_fr = np.array([2.0, 1.0])
        y_f0 = np.array([0.3, -0.4])
        x = rng.standard_normal(3)
        x_prev = rng.standard_normal(3)
        us_prev = rng.standard_normal(1)
        alpha_prev = 0.2
        # evolve the true sampled system one step under the slaved fast input
        for _ in range(10):
            dus = 0.1 * rng.standard_normal(1)
            dal = float(rng.uniform(0, 0.2))
            us = us_prev + dus
            alpha = min(alpha_prev + dal, 1.0)
            dal = alpha - alpha_prev
            ytil = y_f0 + alpha * (y_fr - y_f0)
            u_f = mdl.fast_input_for_reference(tilde, x, us, ytil)
            x_next = bt_sampled.step(x, np.concatenate([us, u_f]))
            xbar_next = np.concatenate([tilde.Cs_tilde @ x_next, x_next - x])
            x_rec, us_rec, uf_rec = mdl.reconstruct_from_velocity(v, xbar_next, ytil)
            assert np.max(np.abs(x_rec - x)) < 1e-8
            assert np.max(np.abs(us_rec - us)) < 1e-8
            assert np.max(np.abs(uf_rec - u_f)) < 1e-8
            x_prev, x = x, x_next
            us_prev, alpha_prev = us, alpha

    def test_pbh_failure_raises(self):
        rng = np.random.default_rng(2)
        m = random_two_block_model(rng)
        s = mdl.resample(m, 3)
        tilde = mdl.build_tilde_system(s, m.C_ff)
        crippled = mdl.TildeSystem(A_tilde=tilde.A_tilde,
                                   Bs_tilde=np.zeros_like(tilde.Bs_tilde),
                                   Bf_tilde=tilde.Bf_tilde, Cs_tilde=tilde.Cs_tilde,
                                   CffBff_inv=tilde.CffBff_inv, C_ff=tilde.C_ff,
                                   sampled=s)
        with pytest.raises(ModelError):
            mdl.build_velocity_form(crippled)


class TestConstraintSet:
    def test_bounds_must_order(self):
        with pytest.raises(ModelError):
            mdl.ConstraintSet(u_lo=[1.0], u_hi=[0.0], x_lo=[-1.0], x_hi=[1.0])

    def test_target_interiority(self, bt_model):
        cs = mdl.ConstraintSet(u_lo=-np.ones(3) * 0.01, u_hi=np.ones(3) * 0.01,
                               x_lo=-np.ones(3) * mdl.INF_BOUND,
                               x_hi=np.ones(3) * mdl.INF_BOUND)
        t = mdl.steady_state_targets(bt_model, np.array([10.0, 1.0, -2.0]))
        with pytest.raises(ModelError):
            cs.validate_targets(t)

    def test_unbounded_helper(self):
        cs = mdl.ConstraintSet.unbounded(3, 2)
        assert not cs.has_rate_bounds
        assert np.all(cs.u_hi >= mdl.INF_BOUND)
