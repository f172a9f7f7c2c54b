"""Tests for the sparse matrix-completion problem with exponential penalties.

The packed variable Z stacks [U; V^T]; the kernel is the polynomial
c1 * s^2 + c2 * s in s = ||Z||^2 / 2, so every closed form below can be
re-derived from the scalar cubic it induces.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bmme import datakit, verify
from bmme.bregman import RelSmoothConstants, check_gradient, check_relative_smoothness
from bmme.matcomp import (
    McProblem,
    McState,
    cubic_step_scale,
    mc_backtracking_problem,
    mc_block_problem,
    mc_kernel,
    mc_objective,
    mc_objective_packed,
    mc_random_init,
    mc_subproblem,
    mc_surrogate,
    pack_state,
    rmse,
    soft_threshold,
    surrogate_weights,
    unpack_state,
)
from bmme.solver import SolverConfig, run, run_backtracking


def diagonal_problem():
    obs = datakit.ObservedMatrix(
        rows=3, cols=3,
        row_idx=np.array([0, 1, 2]), col_idx=np.array([0, 1, 2]),
        values=np.array([1.0, 2.0, 3.0]))
    return McProblem(observed=obs, r=2, lam=0.1, theta=5.0)


def penalty(lam, theta, M):
    return lam * float(np.sum(1.0 - np.exp(-theta * np.abs(M))))


class TestObjective:
    def test_zero_factors_leave_data_term(self):
        p = diagonal_problem()
        st = McState(U=np.zeros((3, 2)), V=np.zeros((2, 3)))
        # penalties vanish at zero; only 0.5 * sum A_ij^2 remains
        assert_allclose(mc_objective(p, st), 0.5 * (1 + 4 + 9))

    def test_no_observations_no_data_term(self):
        obs = datakit.ObservedMatrix(
            rows=2, cols=2, row_idx=np.zeros(0, dtype=np.int64),
            col_idx=np.zeros(0, dtype=np.int64), values=np.zeros(0))
        p = McProblem(observed=obs, r=1, lam=0.1, theta=5.0)
        st = McState(U=np.zeros((2, 1)), V=np.zeros((1, 2)))
        assert mc_objective(p, st) == 0.0

    def test_matches_elementwise_formula(self):
        rng = np.random.default_rng(0)
        obs = datakit.gen_synthetic_ratings(6, 5, 2, 0.6, seed=3)
        p = McProblem(observed=obs, r=2, lam=0.3, theta=2.0)
        st = McState(U=rng.standard_normal((6, 2)),
                     V=rng.standard_normal((2, 5)))
        want = 0.0
        full = st.U @ st.V
        for i, j, a in zip(obs.row_idx, obs.col_idx, obs.values):
            want += 0.5 * (full[i, j] - a) ** 2
        want += penalty(0.3, 2.0, st.U) + penalty(0.3, 2.0, st.V)
        assert_allclose(mc_objective(p, st), want, rtol=1e-12)

    def test_packed_objective_agrees(self):
        rng = np.random.default_rng(1)
        p = diagonal_problem()
        st = McState(U=rng.standard_normal((3, 2)),
                     V=rng.standard_normal((2, 3)))
        f = mc_objective_packed(p)
        assert_allclose(f(pack_state(st)), mc_objective(p, st), rtol=1e-14)


class TestKernel:
    def test_gradient_vanishes_at_zero(self):
        kern = mc_kernel(diagonal_problem())
        Z0 = np.zeros((6, 2))
        assert kern.eval(Z0) == 0.0
        assert np.all(kern.grad(Z0) == 0.0)

    def test_gradient_against_finite_differences(self):
        p = diagonal_problem()
        kern = mc_kernel(p)
        rng = np.random.default_rng(2)
        err = check_gradient(kern.eval, kern.grad,
                             rng.standard_normal((6, 2)), rng=rng)
        assert err < 1e-5

    def test_smooth_part_is_one_one_relative_to_kernel(self):
        p = diagonal_problem()
        kern = mc_kernel(p)
        f = mc_objective_packed(p)
        smooth = lambda Z: f(Z) - penalty(p.lam, p.theta, Z)
        grad = mc_block_problem(p).partial_grad
        rng = np.random.default_rng(3)
        samples = [(rng.standard_normal((6, 2)), rng.standard_normal((6, 2)))
                   for _ in range(300)]
        rep = check_relative_smoothness(
            smooth, lambda Z: grad([Z]), kern,
            RelSmoothConstants(L=1.0, l=1.0), samples)
        assert rep.ok(tol=1e-9)


class TestSurrogateWeights:
    def test_weight_at_zero(self):
        # d/dM of lam (1 - exp(-theta |M|)) evaluated at 0+ is lam * theta
        w = surrogate_weights(np.zeros((2, 2)), 0.1, 5.0)
        assert np.all(w == 0.5)

    def test_known_value(self):
        # 0.1 * 5 * exp(-5 * 0.2) = 0.5 / e
        w = surrogate_weights(np.array([0.2]), 0.1, 5.0)
        assert_allclose(w, [0.18393972058572116], rtol=1e-15)

    def test_monotone_decay_in_magnitude(self):
        M = np.linspace(0.0, 3.0, 50)
        w = surrogate_weights(M, 0.1, 5.0)
        assert np.all(np.diff(w) < 0.0)
        assert w[-1] > 0.0


class TestSoftThreshold:
    def test_zero_threshold_is_identity(self):
        A = np.array([[1.0, -2.0], [0.5, 0.0]])
        assert np.array_equal(soft_threshold(A, np.zeros((2, 2))), A)

    def test_small_entries_zeroed(self):
        A = np.array([0.5, -0.3, 1.0])
        B = np.array([1.0, 1.0, 1.0])
        assert np.array_equal(soft_threshold(A, B), [0.0, 0.0, 0.0])

    def test_worked_example(self):
        out = soft_threshold(np.array([[-3.0, 1.0]]), np.array([[1.0, 2.0]]))
        assert np.array_equal(out, [[-2.0, 0.0]])


class TestCubicStepScale:
    def test_zero_s_linear_case(self):
        # c1 s tau^3 + c2 tau = 1 degenerates to tau = 1/c2
        assert cubic_step_scale(3.0, 2.0, 0.0) == 0.5

    def test_worked_example(self):
        # 3 * (4/3) * tau^3 + tau = 1 has the root tau = 0.5
        assert_allclose(cubic_step_scale(3.0, 1.0, 4.0 / 3.0), 0.5, rtol=1e-12)

    def test_residual_across_scales(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            c1 = 10.0 ** rng.uniform(-1, 1)
            c2 = 10.0 ** rng.uniform(-2, 3)
            s = 10.0 ** rng.uniform(-6, 4)
            tau = cubic_step_scale(c1, c2, s)
            assert 0.0 < tau <= 1.0 / c2
            assert abs(c1 * s * tau**3 + c2 * tau - 1.0) <= 1e-10


class TestSubproblem:
    def test_zero_anchor_zero_gradient_stays_at_zero(self):
        p = diagonal_problem()
        z0 = McState(U=np.zeros((3, 2)), V=np.zeros((2, 3)))
        out = mc_subproblem(p, z0, z0, 1.0)
        assert np.all(out.U == 0.0)
        assert np.all(out.V == 0.0)

    def test_reconstruction_identity(self):
        # re-derive the minimizer from its pieces: threshold the shifted
        # gradient, rescale by the cubic root, flip sign
        p = diagonal_problem()
        rng = np.random.default_rng(2)
        st = McState(U=rng.standard_normal((3, 2)) * 0.5,
                     V=rng.standard_normal((2, 3)) * 0.5)
        L = 2.0
        out = pack_state(mc_subproblem(p, st, st, L))

        kern = mc_kernel(p)
        Z_bar = pack_state(st)
        g = mc_block_problem(p).partial_grad([Z_bar])
        W = surrogate_weights(Z_bar, p.lam, p.theta)
        S = soft_threshold(g - L * kern.grad(Z_bar), W) / L
        s = float(np.vdot(S, S))
        tau = cubic_step_scale(3.0, p.observed.frobenius(), s)
        assert np.linalg.norm(out - (-tau * S)) <= 1e-12
        assert abs(3.0 * s * tau**3
                   + p.observed.frobenius() * tau - 1.0) <= 1e-10

    def test_against_numerical_oracle(self):
        p = diagonal_problem()
        rng = np.random.default_rng(5)
        st = McState(U=rng.standard_normal((3, 2)) * 0.5,
                     V=rng.standard_normal((2, 3)) * 0.5)
        got = mc_subproblem(p, st, st, 1.5)
        want = verify.oracle_mc_subproblem(p, st, st, 1.5)
        diff = np.linalg.norm(pack_state(got) - pack_state(want))
        assert diff <= 1e-5

    def test_unobserved_entries_do_not_steer_the_step(self):
        # two observation patterns that agree on the observed set produce
        # identical steps even though the dense matrices they came from differ
        rng = np.random.default_rng(6)
        idx = (np.array([0, 1, 2, 0]), np.array([0, 1, 2, 2]))
        vals = rng.standard_normal(4)
        obs_a = datakit.ObservedMatrix(3, 3, idx[0], idx[1], vals)
        obs_b = datakit.ObservedMatrix(3, 3, idx[0].copy(), idx[1].copy(),
                                       vals.copy())
        st = McState(U=rng.standard_normal((3, 2)) * 0.3,
                     V=rng.standard_normal((2, 3)) * 0.3)
        p_a = McProblem(observed=obs_a, r=2, lam=0.1, theta=5.0)
        p_b = McProblem(observed=obs_b, r=2, lam=0.1, theta=5.0)
        out_a = mc_subproblem(p_a, st, st, 1.0)
        out_b = mc_subproblem(p_b, st, st, 1.0)
        assert np.array_equal(out_a.U, out_b.U)
        assert np.array_equal(out_a.V, out_b.V)

    def test_rejects_nonpositive_L(self):
        p = diagonal_problem()
        z0 = McState(U=np.zeros((3, 2)), V=np.zeros((2, 3)))
        with pytest.raises(ValueError):
            mc_subproblem(p, z0, z0, 0.0)


class TestSurrogate:
    def test_equals_penalty_at_anchor(self):
        p = diagonal_problem()
        su = mc_surrogate(p)
        rng = np.random.default_rng(7)
        for _ in range(10):
            z = rng.standard_normal((6, 2))
            assert_allclose(su.eval(z, z), penalty(p.lam, p.theta, z),
                            rtol=1e-12)

    def test_majorizes_penalty(self):
        # concavity of 1 - exp(-theta t) in t = |M| makes the tangent-plane
        # surrogate an upper bound everywhere
        p = diagonal_problem()
        su = mc_surrogate(p)
        rng = np.random.default_rng(8)
        anchor = rng.standard_normal((6, 2)) * 0.4
        for _ in range(1000):
            x = anchor + rng.standard_normal((6, 2)) * 10.0 ** rng.uniform(-3, 1)
            gap = su.eval(x, anchor) - penalty(p.lam, p.theta, x)
            assert gap >= -1e-12


class TestStateHandling:
    def test_pack_unpack_roundtrip(self):
        rng = np.random.default_rng(9)
        st = McState(U=rng.standard_normal((4, 2)),
                     V=rng.standard_normal((2, 5)))
        back = unpack_state(pack_state(st), 4)
        assert np.array_equal(back.U, st.U)
        assert np.array_equal(back.V, st.V)

    def test_mismatched_factor_shapes_rejected(self):
        with pytest.raises(ValueError):
            McState(U=np.zeros((3, 2)), V=np.zeros((3, 3)))

    def test_random_init_shapes_and_determinism(self):
        p = diagonal_problem()
        a = mc_random_init(p, seed=3)
        b = mc_random_init(p, seed=3)
        assert a.U.shape == (3, 2) and a.V.shape == (2, 3)
        assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)
        c = mc_random_init(p, seed=4)
        assert not np.array_equal(a.U, c.U)


class TestRmse:
    def test_exact_fit_is_zero(self):
        rng = np.random.default_rng(10)
        U = rng.standard_normal((4, 2))
        V = rng.standard_normal((2, 5))
        full = U @ V
        ri = np.array([0, 1, 2, 3])
        ci = np.array([1, 0, 4, 2])
        obs = datakit.ObservedMatrix(4, 5, ri, ci, full[ri, ci])
        assert rmse(obs, McState(U=U, V=V)) <= 1e-15

    def test_zero_prediction(self):
        obs = datakit.ObservedMatrix(2, 2, np.array([0, 1]),
                                     np.array([0, 1]), np.array([3.0, 4.0]))
        st = McState(U=np.zeros((2, 1)), V=np.zeros((1, 2)))
        assert_allclose(rmse(obs, st), np.sqrt((9.0 + 16.0) / 2.0))

    def test_empty_observation_set_rejected(self):
        obs = datakit.ObservedMatrix(2, 2, np.zeros(0, dtype=np.int64),
                                     np.zeros(0, dtype=np.int64), np.zeros(0))
        with pytest.raises(ValueError):
            rmse(obs, McState(U=np.zeros((2, 1)), V=np.zeros((1, 2))))


class TestEndToEnd:
    def test_fixed_constants_run_decreases_objective(self):
        obs = datakit.gen_synthetic_ratings(20, 15, 2, 0.4, seed=11)
        p = McProblem(observed=obs, r=2, lam=0.1, theta=5.0)
        z0 = pack_state(mc_random_init(p, seed=1))
        cfg = SolverConfig(max_iters=50, tol_rel_change=0.0,
                           verify_descent=True)
        f = mc_objective_packed(p)
        res = run([mc_block_problem(p)], [z0], cfg,
                  lambda blocks: f(blocks[0]), algorithm="bmme")
        objs = res.trace.objectives()
        assert objs[-1] < objs[0]

    def test_backtracked_run_decreases_objective(self):
        obs = datakit.gen_synthetic_ratings(20, 15, 2, 0.4, seed=11)
        p = McProblem(observed=obs, r=2, lam=0.1, theta=5.0)
        z0 = pack_state(mc_random_init(p, seed=1))
        cfg = SolverConfig(max_iters=50, tol_rel_change=0.0)
        res = run_backtracking(mc_backtracking_problem(p), z0, cfg,
                               mc_objective_packed(p))
        objs = res.trace.objectives()
        assert objs[-1] < objs[0]
        final = unpack_state(res.final[0], 20)
        assert rmse(obs, final) < rmse(obs, unpack_state(z0, 20))
