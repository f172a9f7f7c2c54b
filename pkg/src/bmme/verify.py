"""Independent numerical oracles and named verification suites.

The oracles deliberately avoid the closed-form production code paths: block
updates are re-solved by iterative first-order methods run to tight
stationarity, cubic roots are re-derived by bisection, and assignment-based
accuracy is re-derived by brute-force permutation search. Each ``suite_*``
function returns a list of violation strings (empty means the suite passed);
the command-line ``verify`` subcommand exposes them by name.
"""

import itertools

import numpy as np

from . import datakit, matcomp, onmf
from .bregman import check_relative_smoothness, check_surrogate
from .solver import (
    BlockProblem,
    DescentViolation,
    SolverConfig,
    bmme_step,
    initial_state,
)

__all__ = [
    "bisect_root",
    "projected_gradient",
    "prox_gradient_weighted_l1",
    "brute_force_accuracy",
    "suite_relsmooth",
    "suite_descent",
    "suite_oracles",
    "suite_cubic",
    "suite_accuracy",
    "SUITES",
]


def bisect_root(h, lo, hi, iters=200):
    """Vanilla bisection for a sign change of ``h`` on [lo, hi]."""
    flo = h(lo)
    fhi = h(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise ValueError("h(lo) and h(hi) must differ in sign")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = h(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _polish_fixed_step(grad, step_to, map_to, x, t, tol, max_iters):
    """Constant-step first-order polish with a map-norm-guarded step.

    No objective comparisons (their cancellation noise near the optimum is
    what blocks tight stationarity); instead the iteration is treated as a
    contraction and the step halves whenever the unit-step map norm stops
    shrinking (4x the best seen, or non-finite).
    """
    best = x.copy()
    best_map = np.inf
    for _ in range(max_iters):
        g = grad(x)
        mapn = float(np.linalg.norm(map_to(x, g) - x))
        if mapn <= tol:
            return x
        if mapn < best_map:
            best_map = mapn
            best = x.copy()
        elif not np.isfinite(mapn) or mapn > 4.0 * best_map:
            x = best.copy()
            t *= 0.5
            if t < 1e-18:
                return best
            continue
        x = step_to(x, g, t)
    return best


def projected_gradient(obj, grad, project, x0, tol=1e-10, max_iters=200_000,
                       t0=1.0):
    """Projected gradient run to a unit-step gradient-map norm <= tol.

    A backtracked phase takes the iterate close to the solution; a
    constant-step contraction phase (see :func:`_polish_fixed_step`) then
    drives the map norm the rest of the way — sufficient-decrease tests are
    useless at that depth because the objective differences drown in
    rounding. Stationarity is always measured with a unit reference step
    (the map norm at a grown line-search step understates it).
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    fx = float(obj(x))
    t = t0
    coarse = max(tol, 1e-7)
    for _ in range(max_iters // 2):
        g = grad(x)
        if float(np.linalg.norm(project(x - g) - x)) <= coarse:
            break
        while True:
            xn = project(x - t * g)
            diff = xn - x
            model = fx + float(np.vdot(g, diff)) + float(np.vdot(diff, diff)) / (2 * t)
            fn = float(obj(xn))
            if fn <= model + 1e-12 * (1.0 + abs(model)) or t < 1e-18:
                break
            t *= 0.5
        x, fx = xn, fn
        t *= 1.2
    return _polish_fixed_step(
        grad,
        lambda y, g, s: project(y - s * g),
        lambda y, g: project(y - g),
        x, t0, tol, max_iters // 2)


def prox_gradient_weighted_l1(smooth_obj, smooth_grad, weights, x0,
                              tol=1e-10, max_iters=200_000, t0=1.0):
    """Proximal gradient for smooth(x) + <weights, |x|>, to fixed-point tol.

    The prox is written inline on purpose — this oracle must not share the
    shrinkage code it certifies. Stationarity is the unit-step prox map
    norm; the same two-phase scheme as :func:`projected_gradient` applies.
    """

    def shrink(z, w):
        return np.sign(z) * np.maximum(np.abs(z) - w, 0.0)

    x = np.array(x0, dtype=np.float64, copy=True)
    fx = float(smooth_obj(x))
    t = t0
    coarse = max(tol, 1e-7)
    for _ in range(max_iters // 2):
        g = smooth_grad(x)
        if float(np.linalg.norm(shrink(x - g, weights) - x)) <= coarse:
            break
        while True:
            xn = shrink(x - t * g, t * weights)
            diff = xn - x
            model = fx + float(np.vdot(g, diff)) + float(np.vdot(diff, diff)) / (2 * t)
            fn = float(smooth_obj(xn))
            if fn <= model + 1e-12 * (1.0 + abs(model)) or t < 1e-18:
                break
            t *= 0.5
        x, fx = xn, fn
        t *= 1.2
    return _polish_fixed_step(
        smooth_grad,
        lambda y, g, s: shrink(y - s * g, s * weights),
        lambda y, g: shrink(y - g, weights),
        x, t0, tol, max_iters // 2)


def brute_force_accuracy(labels_true, labels_pred):
    """Exact matching maximum over all permutations of the cluster ids."""
    t = np.asarray(labels_true, dtype=np.int64)
    q = np.asarray(labels_pred, dtype=np.int64)
    r = int(max(t.max(), q.max()))
    best = 0
    for perm in itertools.permutations(range(1, r + 1)):
        mapped = np.array(perm)[t - 1]
        best = max(best, int(np.sum(mapped == q)))
    return best / t.size


# ---------------------------------------------------------------------------
# oracle solves of the three block majorizers
# ---------------------------------------------------------------------------

def oracle_update_U(p, U_bar, V, L1, tol=1e-10):
    """U block majorizer minimized by projected gradient (step 0.7 / L1)."""
    g = U_bar @ (V @ V.T) - p.X @ V.T

    def obj(U):
        d = U - U_bar
        return float(np.vdot(g, U)) + 0.5 * L1 * float(np.vdot(d, d))

    def grad(U):
        return g + L1 * (U - U_bar)

    return projected_gradient(obj, grad, lambda M: np.maximum(M, 0.0),
                              np.maximum(U_bar, 0.0), tol=tol, t0=0.7 / L1)


def oracle_update_V(p, U, V_bar, L2, tol=1e-10):
    """V block majorizer minimized by backtracked projected gradient."""
    kern = onmf.v_block_kernel(U, p.lam)
    g = U.T @ U @ V_bar - U.T @ p.X + 2 * p.lam * ((V_bar @ V_bar.T) @ V_bar - V_bar)
    phi_bar = kern.grad(V_bar)

    def obj(V):
        return (float(np.vdot(g - L2 * phi_bar, V)) + L2 * float(kern.eval(V)))

    def grad(V):
        return g - L2 * phi_bar + L2 * kern.grad(V)

    return projected_gradient(obj, grad, lambda M: np.maximum(M, 0.0),
                              np.maximum(V_bar, 0.0), tol=tol)


def oracle_mc_subproblem(p, state, x_bar, L, tol=1e-10):
    """Packed matrix-completion majorizer re-solved by proximal gradient."""
    kern = matcomp.mc_kernel(p)
    Zb = matcomp.pack_state(x_bar)
    g = matcomp._smooth_grad_packed(p, Zb)
    lin = g - L * kern.grad(Zb)
    W = p.lam * p.theta * np.exp(-p.theta * np.abs(matcomp.pack_state(state)))

    def sobj(Z):
        return float(np.vdot(lin, Z)) + L * float(kern.eval(Z))

    def sgrad(Z):
        return lin + L * kern.grad(Z)

    Z = prox_gradient_weighted_l1(sobj, sgrad, W, np.zeros_like(Zb), tol=tol)
    return matcomp.unpack_state(Z, p.observed.rows)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def _sample_pairs(rng, shape, n, scale):
    return [(scale * rng.uniform(size=shape), scale * rng.uniform(size=shape))
            for _ in range(n)]


def suite_relsmooth(n_samples=1000, seed=0, tol=1e-9):
    """Certify the declared (L, l) pairs of all three shipped blocks."""
    rng = np.random.default_rng(seed)
    bad = []
    m, n, r = 8, 6, 3
    lam = 1.0

    # U block: (||V V^T||, 0) against the Euclidean kernel
    from .bregman import quadratic_kernel
    worst_u = -np.inf
    for _ in range(n_samples):
        X = 10.0 * rng.uniform(size=(m, n))
        V = 10.0 * rng.uniform(size=(r, n))
        p = onmf.OnmfProblem(X=X, r=r, lam=lam)
        pair = _sample_pairs(rng, (m, r), 1, 10.0)
        rep = check_relative_smoothness(
            lambda U: onmf.onmf_objective(p, U, V),
            lambda U: U @ (V @ V.T) - X @ V.T,
            quadratic_kernel(), onmf.onmf_constants_U(V), pair)
        worst_u = max(worst_u, rep.max_upper_violation, rep.max_lower_violation)
    if worst_u > tol:
        bad.append(f"U block relative smoothness violated by {worst_u:.3e}")

    # V block: (1, 1) against the quartic kernel
    from .bregman import RelSmoothConstants
    worst_v = -np.inf
    for _ in range(n_samples):
        X = 10.0 * rng.uniform(size=(m, n))
        U = 10.0 * rng.uniform(size=(m, r))
        p = onmf.OnmfProblem(X=X, r=r, lam=lam)
        pair = _sample_pairs(rng, (r, n), 1, 10.0)
        rep = check_relative_smoothness(
            lambda V: onmf.onmf_objective(p, U, V),
            lambda V: U.T @ U @ V - U.T @ X + 2 * lam * ((V @ V.T) @ V - V),
            onmf.v_block_kernel(U, lam),
            RelSmoothConstants(L=1.0, l=1.0), pair)
        worst_v = max(worst_v, rep.max_upper_violation, rep.max_lower_violation)
    if worst_v > tol:
        bad.append(f"V block relative smoothness violated by {worst_v:.3e}")

    # Matrix completion joint block: (1, 1) against the polynomial kernel
    obs = datakit.gen_synthetic_ratings(6, 5, 2, 0.6, seed=seed)
    p = matcomp.McProblem(observed=obs, r=2, lam=0.1, theta=5.0)
    kern = matcomp.mc_kernel(p)
    shape = (obs.rows + obs.cols, p.r)
    pairs = [(rng.standard_normal(shape), rng.standard_normal(shape))
             for _ in range(n_samples)]
    rep = check_relative_smoothness(
        lambda Z: matcomp._smooth_eval_packed(p, Z),
        lambda Z: matcomp._smooth_grad_packed(p, Z),
        kern, RelSmoothConstants(L=1.0, l=1.0), pairs)
    worst_m = max(rep.max_upper_violation, rep.max_lower_violation)
    if worst_m > tol:
        bad.append(f"completion block relative smoothness violated by {worst_m:.3e}")
    return bad


def suite_descent(seed=1, iters=100, l1_scale=1.0, size=(60, 60, 3), lam=100.0):
    """Run extrapolated sweeps with the certified-descent assertion armed.

    ``l1_scale`` deliberately corrupts the U block constant so tests can
    confirm the verifier actually trips on a wrong majorizer.
    """
    m, n, r = size
    data = datakit.gen_synthetic_onmf(m, n, r, noise=0.05, seed=seed)
    p = onmf.OnmfProblem(X=data.X, r=r, lam=lam)
    problems = onmf.onmf_block_problems(p)
    if l1_scale != 1.0:
        u = problems[0]
        from .bregman import RelSmoothConstants

        def scaled(blocks):
            c = onmf.onmf_constants_U(blocks[1])
            return RelSmoothConstants(L=l1_scale * c.L, l=c.l)

        problems[0] = BlockProblem(
            partial_grad=u.partial_grad, kernel_for=u.kernel_for,
            constants_for=scaled, surrogate=u.surrogate,
            solve_subproblem=u.solve_subproblem, feasible=u.feasible)
    U0, V0 = onmf.spa_init(data.X, r)
    config = SolverConfig(max_iters=iters, verify_descent=True,
                          tol_rel_change=0.0)
    state = initial_state(problems, [U0, V0])
    objective = lambda blocks: onmf.onmf_objective(p, blocks[0], blocks[1])
    try:
        for _ in range(iters):
            bmme_step(problems, state, config, objective)
    except DescentViolation as exc:
        return [f"descent inequality failed: {exc}"]
    return []


def suite_oracles(n_instances=10, seed=0, tol=1e-6):
    """Closed-form block updates against iterative re-solves, plus surrogates."""
    rng = np.random.default_rng(seed)
    bad = []
    for k in range(n_instances):
        X = 10.0 * rng.uniform(size=(5, 4))
        lam = float(rng.uniform(0.5, 2.0))
        p = onmf.OnmfProblem(X=X, r=2, lam=lam)

        V = rng.uniform(size=(2, 4)) + 0.05
        U_bar = 2.0 * rng.uniform(size=(5, 2))
        L1 = onmf.onmf_constants_U(V).L
        closed = onmf.update_U(p, U_bar, V, L1)
        ref = oracle_update_U(p, U_bar, V, L1)
        err = float(np.linalg.norm(closed - ref))
        if err > tol:
            bad.append(f"update_U mismatch {err:.3e} on instance {k}")

        U = 2.0 * rng.uniform(size=(5, 2))
        V_bar = rng.uniform(size=(2, 4))
        closed = onmf.update_V(p, U, V_bar, 1.0)
        ref = oracle_update_V(p, U, V_bar, 1.0)
        err = float(np.linalg.norm(closed - ref))
        if err > tol:
            bad.append(f"update_V mismatch {err:.3e} on instance {k}")

        obs = datakit.gen_synthetic_ratings(5, 4, 2, 0.6, seed=seed + 100 + k)
        mp = matcomp.McProblem(observed=obs, r=2, lam=0.1, theta=5.0)
        anchor = matcomp.McState(U=rng.standard_normal((5, 2)),
                                 V=rng.standard_normal((2, 4)))
        x_bar = matcomp.McState(U=rng.standard_normal((5, 2)),
                                V=rng.standard_normal((2, 4)))
        L = float(rng.uniform(0.5, 2.0))
        closed = matcomp.mc_subproblem(mp, anchor, x_bar, L)
        ref = oracle_mc_subproblem(mp, anchor, x_bar, L)
        err = float(np.hypot(np.linalg.norm(closed.U - ref.U),
                             np.linalg.norm(closed.V - ref.V)))
        if err > tol:
            bad.append(f"mc_subproblem mismatch {err:.3e} on instance {k}")

        # surrogate majorization of the concave penalty
        g_eval = lambda Z: matcomp._penalty(mp.lam, mp.theta, Z)
        anchors = [rng.standard_normal((9, 2)) for _ in range(3)]
        cands = [rng.standard_normal((9, 2)) for _ in range(4)]
        bad.extend(f"instance {k}: {msg}" for msg in check_surrogate(
            matcomp.mc_surrogate(mp), g_eval, anchors, cands))
    return bad


def suite_cubic(n_draws=10_000, seed=0, n_bisect=200):
    """Residual identities for both cubic solvers plus bisection cross-checks."""
    rng = np.random.default_rng(seed)
    bad = []
    # Residual draws keep a <= 1e2: evaluating rho^2 (rho - a) - c in float64
    # has an eps * rho^3 rounding floor, which swamps the 1e-8 (1 + c) bound
    # for huge a with tiny c no matter how accurate the root is. The wide-a
    # regime is covered below by the bisection cross-check, which compares
    # roots (well-conditioned) instead of residuals.
    worst_rho = 0.0
    for _ in range(n_draws):
        a = 10.0 ** rng.uniform(-3, 2)
        c = 10.0 ** rng.uniform(-3, 3)
        rho = onmf.cubic_norm_scale(a, c)
        worst_rho = max(worst_rho, abs(rho * rho * (rho - a) - c) / (1.0 + c))
    if worst_rho > 1e-8:
        bad.append(f"norm-scale cubic residual {worst_rho:.3e} exceeds 1e-8")

    worst_tau = 0.0
    for _ in range(n_draws):
        c2 = 10.0 ** rng.uniform(-3, 3)
        s = rng.uniform(0.0, 1e6)
        tau = matcomp.cubic_step_scale(3.0, c2, s)
        worst_tau = max(worst_tau, abs(3.0 * s * tau**3 + c2 * tau - 1.0))
    if worst_tau > 1e-10:
        bad.append(f"step-scale cubic residual {worst_tau:.3e} exceeds 1e-10")

    for _ in range(n_bisect):
        a = 10.0 ** rng.uniform(-2, 3)
        c = 10.0 ** rng.uniform(-2, 3)
        ref = bisect_root(lambda t: t * t * (t - a) - c, a, a + np.cbrt(c) + 1.0)
        if abs(onmf.cubic_norm_scale(a, c) - ref) > 1e-9 * (1.0 + ref):
            bad.append(f"norm-scale cubic disagrees with bisection at ({a}, {c})")
        c2 = 10.0 ** rng.uniform(-2, 2)
        s = rng.uniform(1e-6, 1e4)
        ref = bisect_root(lambda t: 3.0 * s * t**3 + c2 * t - 1.0, 0.0, 1.0 / c2)
        if abs(matcomp.cubic_step_scale(3.0, c2, s) - ref) > 1e-9 * (1.0 + ref):
            bad.append(f"step-scale cubic disagrees with bisection at ({c2}, {s})")
    return bad


def suite_accuracy(n_cases=100, seed=0):
    """Assignment-based accuracy against brute force, and exact recovery."""
    rng = np.random.default_rng(seed)
    bad = []
    for k in range(n_cases):
        r = int(rng.integers(2, 7))
        n = int(rng.integers(r, 61))
        t = rng.integers(1, r + 1, size=n)
        q = rng.integers(1, r + 1, size=n)
        fast = onmf.clustering_accuracy(t, q)
        slow = brute_force_accuracy(t, q)
        if fast != slow:
            bad.append(f"accuracy mismatch on case {k}: {fast} vs {slow}")
    data = datakit.gen_synthetic_onmf(40, 120, 4, noise=0.0, seed=seed)
    acc = onmf.clustering_accuracy(data.labels, onmf.predict_clusters(data.V))
    if acc != 1.0:
        bad.append(f"noise-free ground truth not recovered: accuracy {acc}")
    return bad


SUITES = {
    "relsmooth": suite_relsmooth,
    "descent": suite_descent,
    "oracles": suite_oracles,
    "cubic": suite_cubic,
    "accuracy": suite_accuracy,
}
