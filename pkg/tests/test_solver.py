"""Solver-layer tests: extrapolation search, multi-block sweeps, line search.

A single Euclidean block with a strongly convex quadratic objective is enough
to exercise most of the control flow, because the subproblem minimizer is the
exact closed-form prox step and every quantity can be checked by hand.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bmme.bregman import RelSmoothConstants, quadratic_kernel, zero_surrogate
from bmme.solver import (
    BacktrackingProblem,
    BlockProblem,
    DescentViolation,
    SolverConfig,
    StopReason,
    initial_state,
    nesterov_next,
    run,
    run_backtracking,
    search_extrapolation,
)


def quadratic_block(a):
    """min over x of 0.5||x - a||^2 as a single Euclidean block."""
    kern = quadratic_kernel()
    return BlockProblem(
        partial_grad=lambda blocks: blocks[0] - a,
        kernel_for=lambda blocks: kern,
        constants_for=lambda blocks: RelSmoothConstants(L=1.0, l=0.0),
        surrogate=zero_surrogate(),
        solve_subproblem=lambda blocks, x_bar, g, L, x_prev: x_bar - g / L,
        feasible=lambda x: True,
    )


def quadratic_objective(a):
    return lambda blocks: 0.5 * float(np.sum((blocks[0] - a) ** 2))


class TestNesterovSequence:
    def test_first_step_has_zero_momentum(self):
        step = nesterov_next(1.0)
        assert step.beta_init == 0.0
        assert_allclose(step.nu, (1.0 + np.sqrt(5.0)) / 2.0, rtol=1e-15)

    def test_known_pair(self):
        # reference computed with 50-digit arithmetic:
        #   nu    = 0.5*(1 + sqrt(1 + 4*1.618034^2)) = 2.19352709607965824...
        #   beta  = (1.618034 - 1)/nu               = 0.28175352887346135...
        step = nesterov_next(1.618034)
        assert_allclose(step.nu, 2.1935270960796582, rtol=1e-12)
        assert_allclose(step.beta_init, 0.2817535288734614, rtol=1e-12)

    def test_sequence_grows_and_momentum_approaches_one(self):
        nu = 1.0
        betas = []
        for _ in range(200):
            step = nesterov_next(nu)
            betas.append(step.beta_init)
            nu = step.nu
        assert all(b2 >= b1 for b1, b2 in zip(betas, betas[1:]))
        assert betas[-1] > 0.97
        assert betas[-1] < 1.0


class TestSearchExtrapolation:
    def test_admissible_beta_accepted_without_shrinking(self):
        kern = quadratic_kernel()
        consts = RelSmoothConstants(L=1.0, l=0.0)
        res = search_extrapolation(kern, consts, kern, consts,
                                   np.array([1.0]), np.array([1.0]),
                                   beta_init=0.5, delta=0.99, eta=0.9)
        # x_curr == x_prev makes the divergence bound trivially satisfied
        assert res.shrinks == 0
        assert res.beta == 0.5
        assert_allclose(res.x_bar, [1.0])

    def test_worked_shrink_example(self):
        # D(x_bar, x_curr) = 0.5 beta^2 must fall below
        # delta * (L_prev / (L + l)) * D_prev(x_prev, x_curr) = 0.81 * 0.5;
        # beta=0.95 fails (0.45125 > 0.405), one shrink to 0.855 passes.
        kern = quadratic_kernel()
        consts = RelSmoothConstants(L=1.0, l=0.0)
        res = search_extrapolation(kern, consts, kern, consts,
                                   np.array([1.0]), np.array([0.0]),
                                   beta_init=0.95, delta=0.81, eta=0.9)
        assert res.shrinks == 1
        assert_allclose(res.beta, 0.855, rtol=1e-15)
        assert_allclose(res.x_bar, [1.855], rtol=1e-15)

    def test_beta_zero_when_shrinks_exhausted(self):
        kern = quadratic_kernel()
        tight = RelSmoothConstants(L=1e8, l=0.0)
        res = search_extrapolation(kern, tight, kern,
                                   RelSmoothConstants(L=1.0, l=0.0),
                                   np.array([1.0]), np.array([0.0]),
                                   beta_init=0.9, delta=0.5, eta=0.9,
                                   max_shrinks=4)
        assert res.beta == 0.0
        assert_allclose(res.x_bar, [1.0])


class TestRunBasics:
    def test_single_step_reaches_quadratic_minimizer(self):
        a = np.array([2.0, -1.0])
        cfg = SolverConfig(max_iters=1, tol_rel_change=0.0)
        res = run([quadratic_block(a)], [np.zeros(2)], cfg,
                  quadratic_objective(a), algorithm="bmm")
        # with L matching the curvature the first prox step lands exactly
        assert_allclose(res.final[0], a, rtol=0, atol=0)

    def test_tolerance_infinite_stops_after_one_iteration(self):
        a = np.array([2.0, -1.0])
        cfg = SolverConfig(max_iters=50, tol_rel_change=np.inf)
        res = run([quadratic_block(a)], [np.zeros(2)], cfg,
                  quadratic_objective(a))
        assert res.stop_reason is StopReason.TOL_REACHED
        assert len(res.trace.records) == 1

    def test_zero_iterations_gives_empty_trace(self):
        a = np.array([1.0])
        res = run([quadratic_block(a)], [np.zeros(1)],
                  SolverConfig(max_iters=0), quadratic_objective(a))
        assert res.stop_reason is StopReason.MAX_ITERS
        assert len(res.trace.records) == 0
        assert_allclose(res.final[0], [0.0])

    def test_time_budget_stops_run(self):
        a = np.array([1.0])
        cfg = SolverConfig(max_iters=10**6, tol_rel_change=0.0,
                           time_budget=1e-9)
        res = run([quadratic_block(a)], [np.zeros(1)], cfg,
                  quadratic_objective(a))
        assert res.stop_reason is StopReason.TIME_BUDGET
        assert len(res.trace.records) >= 1

    def test_first_iteration_identical_across_variants(self):
        # nu_0 = 1 forces beta = 0 on the first sweep, so the accelerated
        # variant must reproduce the plain sweep bit for bit.
        a = np.array([3.0, 0.5, -2.0])
        out = {}
        for alg in ("bmm", "bmme"):
            cfg = SolverConfig(max_iters=1, tol_rel_change=0.0)
            out[alg] = run([quadratic_block(a)], [np.zeros(3)], cfg,
                           quadratic_objective(a), algorithm=alg)
        assert np.array_equal(out["bmm"].final[0], out["bmme"].final[0])
        assert (out["bmm"].trace.records[0].objective
                == out["bmme"].trace.records[0].objective)

    def test_repeat_runs_are_deterministic(self):
        a = np.array([3.0, 0.5, -2.0])
        cfg = SolverConfig(max_iters=25, tol_rel_change=0.0)
        r1 = run([quadratic_block(a)], [np.ones(3)], cfg,
                 quadratic_objective(a), algorithm="bmme")
        r2 = run([quadratic_block(a)], [np.ones(3)], cfg,
                 quadratic_objective(a), algorithm="bmme")
        assert np.array_equal(r1.trace.objectives(), r2.trace.objectives())

    def test_rejects_mismatched_block_count(self):
        a = np.array([1.0])
        with pytest.raises(ValueError):
            initial_state([quadratic_block(a)], [np.zeros(1), np.zeros(1)])

    def test_rejects_non_finite_init(self):
        a = np.array([1.0])
        with pytest.raises(ValueError):
            initial_state([quadratic_block(a)], [np.array([np.nan])])

    def test_unknown_algorithm_rejected(self):
        a = np.array([1.0])
        with pytest.raises(ValueError):
            run([quadratic_block(a)], [np.zeros(1)], SolverConfig(),
                quadratic_objective(a), algorithm="sgd")


class TestDescentVerification:
    def test_clean_problem_passes_and_objective_decreases(self):
        a = np.array([2.0, -1.0, 0.5])
        cfg = SolverConfig(max_iters=40, tol_rel_change=0.0,
                           verify_descent=True)
        res = run([quadratic_block(a)], [np.ones(3) * 10.0], cfg,
                  quadratic_objective(a), algorithm="bmme")
        objs = res.trace.objectives()
        assert np.all(np.diff(objs) <= 1e-8 * (1.0 + np.abs(objs[:-1])))

    def test_overstated_constants_trip_the_verifier(self):
        # claim L = 0.2 for a unit-curvature quadratic: the certified bound
        # is then wrong and the check must raise rather than continue
        a = np.array([2.0, -1.0])
        kern = quadratic_kernel()
        lying = BlockProblem(
            partial_grad=lambda blocks: blocks[0] - a,
            kernel_for=lambda blocks: kern,
            constants_for=lambda blocks: RelSmoothConstants(L=0.2, l=0.0),
            surrogate=zero_surrogate(),
            solve_subproblem=lambda blocks, x_bar, g, L, x_prev: x_bar - g / L,
            feasible=lambda x: True,
        )
        cfg = SolverConfig(max_iters=20, tol_rel_change=0.0,
                           verify_descent=True)
        with pytest.raises(DescentViolation):
            run([lying], [np.ones(2) * 5.0], cfg, quadratic_objective(a),
                algorithm="bmme")


class TestBacktracking:
    """Line-searched variant on f = 0.5||x||^2 with the Euclidean kernel."""

    def problem(self):
        return BacktrackingProblem(
            f_eval=lambda x: 0.5 * float(np.vdot(x, x)),
            grad=lambda x: np.asarray(x, dtype=np.float64),
            kernel=quadratic_kernel(),
            surrogate=zero_surrogate(),
            solve_subproblem=lambda x_bar, g, L, x_prev: x_bar - g / L,
            feasible=lambda x: True,
        )

    def test_L_doubles_from_floor_to_cover_curvature(self):
        # floors are L0 = 0.01, l0 = 0.001; the true curvature is 1, so the
        # upper-bound check forces exactly seven doublings: 0.01 * 2^7 = 1.28.
        cfg = SolverConfig(max_iters=1, tol_rel_change=0.0,
                           keep_certificates=True)
        res = run_backtracking(self.problem(), np.array([1.0]), cfg,
                               lambda x: 0.5 * float(np.vdot(x, x)))
        assert res.state.L_prev == 1.28
        assert res.state.l_prev == 0.001
        cert = res.state.certificates[0]
        assert cert.L == 1.28
        assert_allclose(res.final[0], [1.0 - 1.0 / 1.28], rtol=1e-15)

    def test_constants_monotone_and_objective_decreases(self):
        cfg = SolverConfig(max_iters=30, tol_rel_change=0.0,
                           keep_certificates=True)
        res = run_backtracking(self.problem(), np.array([4.0, -3.0]), cfg,
                               lambda x: 0.5 * float(np.vdot(x, x)))
        Ls = [c.L for c in res.state.certificates]
        ls = [c.l for c in res.state.certificates]
        assert all(b >= a for a, b in zip(Ls, Ls[1:]))
        assert all(b >= a for a, b in zip(ls, ls[1:]))
        objs = res.trace.objectives()
        assert objs[-1] < objs[0]
        assert np.linalg.norm(res.final[0]) < 1e-3

    def test_certificates_replay_both_inequalities(self):
        prob = self.problem()
        cfg = SolverConfig(max_iters=15, tol_rel_change=0.0,
                           keep_certificates=True)
        res = run_backtracking(prob, np.array([2.0, 1.0, -0.5]), cfg,
                               lambda x: 0.5 * float(np.vdot(x, x)))
        kern = prob.kernel
        for cert in res.state.certificates:
            def gap(x, y):
                gy = prob.grad(y)
                return (prob.f_eval(x) - prob.f_eval(y)
                        - float(np.vdot(gy, x - y)))
            d_new = (kern.eval(cert.x_new) - kern.eval(cert.x_bar)
                     - float(np.vdot(kern.grad(cert.x_bar),
                                     cert.x_new - cert.x_bar)))
            d_curr = (kern.eval(cert.x_curr) - kern.eval(cert.x_bar)
                      - float(np.vdot(kern.grad(cert.x_bar),
                                      cert.x_curr - cert.x_bar)))
            slack = 1e-12 * (1.0 + abs(prob.f_eval(cert.x_new)))
            assert gap(cert.x_new, cert.x_bar) <= cert.L * d_new + slack
            assert gap(cert.x_curr, cert.x_bar) >= -cert.l * d_curr - slack

    def test_zero_iterations(self):
        res = run_backtracking(self.problem(), np.array([1.0]),
                               SolverConfig(max_iters=0),
                               lambda x: 0.5 * float(np.vdot(x, x)))
        assert len(res.trace.records) == 0
        assert_allclose(res.final[0], [1.0])
