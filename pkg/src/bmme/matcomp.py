"""Low-rank matrix completion with a bounded concave sparsity penalty.

Objective over factors U (m x r) and V (r x n), with P masking to the
observed entries of A:

    F(U, V) = 0.5 ||P(A - U V)||_F^2
              + lam * sum_ij (1 - exp(-theta |U_ij|))
              + lam * sum_ij (1 - exp(-theta |V_ij|)).

The smooth part is (1, 1)-relatively smooth against the joint polynomial
kernel ``phi = c1 * s^2 + c2 * s`` with ``s = (||U||_F^2 + ||V||_F^2) / 2``,
``c1 = 3`` and ``c2 = ||P(A)||_F``. The concave penalty is majorized at the
current iterate by a weighted l1 term (weights ``lam * theta *
exp(-theta |.|)``), which gives the subproblem a closed form: soft-threshold,
then rescale by the positive root of a cubic.

Internally the factor pair is packed into a single (m + n) x r array
``Z = [U; V^T]`` so the joint kernel and the penalty act entrywise on one
matrix.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .bregman import BlockKernel, RelSmoothConstants, SurrogateFn
from .solver import BacktrackingProblem, BlockProblem

__all__ = [
    "McProblem",
    "McState",
    "mc_objective",
    "mc_kernel",
    "surrogate_weights",
    "soft_threshold",
    "cubic_step_scale",
    "mc_subproblem",
    "mc_surrogate",
    "rmse",
    "mc_random_init",
    "mc_block_problem",
    "mc_backtracking_problem",
    "mc_objective_packed",
    "pack_state",
    "unpack_state",
]


@dataclass(frozen=True)
class McProblem:
    """Observed entries plus factorization rank and penalty weights."""

    observed: object  # ObservedMatrix
    r: int
    lam: float
    theta: float

    def __post_init__(self):
        if not 1 <= self.r <= min(self.observed.rows, self.observed.cols):
            raise ValueError(f"r must lie in [1, min(m, n)], got {self.r}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not (np.isfinite(self.theta) and self.theta > 0):
            raise ValueError(f"theta must be positive, got {self.theta}")

    @property
    def shape(self):
        return (self.observed.rows, self.observed.cols)


@dataclass(frozen=True)
class McState:
    """Factor pair; U is m x r, V is r x n."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2:
            raise ValueError("factors must be 2-D")
        if self.U.shape[1] != self.V.shape[0]:
            raise ValueError(
                f"inner dimensions differ: {self.U.shape} vs {self.V.shape}")


def pack_state(state):
    """Stack the factors into one (m + n) x r block [U; V^T]."""
    return np.vstack([state.U, state.V.T])


def unpack_state(Z, m):
    return McState(U=Z[:m], V=Z[m:].T)


def _residuals(observed, U, V):
    # predicted minus observed, on observed positions only
    if observed.n_obs == 0:
        return np.zeros(0)
    pred = np.einsum("ij,ij->i", U[observed.row_idx], V[:, observed.col_idx].T)
    return pred - observed.values


def _penalty(lam, theta, M):
    return lam * float(np.sum(1.0 - np.exp(-theta * np.abs(M))))


def mc_objective(p, state):
    """Data-fit term plus the concave penalties of both factors."""
    res = _residuals(p.observed, state.U, state.V)
    f = 0.5 * float(res @ res)
    return f + _penalty(p.lam, p.theta, state.U) + _penalty(p.lam, p.theta, state.V)


def _smooth_eval_packed(p, Z):
    m = p.observed.rows
    res = _residuals(p.observed, Z[:m], Z[m:].T)
    return 0.5 * float(res @ res)


def _smooth_grad_packed(p, Z):
    m = p.observed.rows
    U, V = Z[:m], Z[m:].T
    res = _residuals(p.observed, U, V)
    R = csr_matrix((res, (p.observed.row_idx, p.observed.col_idx)),
                   shape=(p.observed.rows, p.observed.cols))
    return np.vstack([R @ V.T, R.T @ U])


def mc_kernel(p):
    """Joint kernel c1 * s^2 + c2 * s, s = ||Z||_F^2 / 2, on packed factors.

    c1 = 3 and c2 = Frobenius norm of the observed data; the smooth part is
    (1, 1)-relatively smooth against it for any factor pair.
    """
    c2 = p.observed.frobenius()
    if c2 == 0.0:
        raise ValueError("kernel needs at least one nonzero observed entry")
    c1 = 3.0

    def eval_(Z):
        s = 0.5 * float(np.vdot(Z, Z))
        return c1 * s * s + c2 * s

    def grad(Z):
        return (c1 * float(np.vdot(Z, Z)) + c2) * Z

    return BlockKernel(eval=eval_, grad=grad, strong_convexity_modulus=c2)


def surrogate_weights(M, lam, theta):
    """Majorizer slopes lam * theta * exp(-theta |M|), elementwise."""
    return lam * theta * np.exp(-theta * np.abs(M))


def mc_surrogate(p):
    """Weighted-l1 majorizer of the packed penalty, anchored at y.

    u(x, y) = g(y) + <w(y), |x| - |y|> with w(y) the surrogate weights; equals
    g at x = y and lies above g everywhere by concavity of t -> 1 - exp(-t).
    """
    lam, theta = p.lam, p.theta

    def eval_(x, y):
        w = surrogate_weights(y, lam, theta)
        return (_penalty(lam, theta, y)
                + float(np.vdot(w, np.abs(x) - np.abs(y))))

    return SurrogateFn(eval=eval_)


def soft_threshold(A, B):
    """sign(A) * max(|A| - B, 0) elementwise, with sign(0) = 0."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    if np.any(B < 0):
        raise ValueError("thresholds must be nonnegative")
    return np.sign(A) * np.maximum(np.abs(A) - B, 0.0)


def cubic_step_scale(c1, c2, s):
    """Unique positive root of ``c1 * s * t^3 + c2 * t - 1 = 0``.

    Cardano closed form (written to avoid cancellation), sharpened by Newton;
    falls back to bisection on (0, 1/c2] in the unlikely event the residual
    exceeds 1e-10.
    """
    if c1 <= 0 or c2 <= 0 or s < 0:
        raise ValueError("need c1 > 0, c2 > 0, s >= 0")
    if s == 0.0:
        return 1.0 / c2
    # depressed cubic t^3 + P t + Q with P = c2/(c1 s) > 0, Q = -1/(c1 s)
    P = c2 / (c1 * s)
    Q = -1.0 / (c1 * s)
    disc = (0.5 * Q) ** 2 + (P / 3.0) ** 3
    t1 = np.cbrt(-0.5 * Q + np.sqrt(disc))
    tau = t1 - (P / 3.0) / t1  # second cube root via t1 * t2 = -P/3

    def h(t):
        return c1 * s * t**3 + c2 * t - 1.0

    for _ in range(3):
        r = h(tau)
        if r == 0.0:
            break
        tau = tau - r / (3.0 * c1 * s * tau * tau + c2)
    if abs(h(tau)) > 1e-10:
        lo, hi = 0.0, 1.0 / c2
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if h(mid) < 0.0:
                lo = mid
            else:
                hi = mid
        tau = 0.5 * (lo + hi)
    return float(tau)


def _subproblem_packed(p, kernel, Z_anchor, Z_bar, grad_bar, L):
    # target = grad f(Zbar) - L * grad phi(Zbar); threshold by the majorizer
    # weights at the anchor; rescale so the kernel fixed point holds.
    W = surrogate_weights(Z_anchor, p.lam, p.theta)
    S = soft_threshold(grad_bar - L * kernel.grad(Z_bar), W)
    scaled = S / L
    s = float(np.vdot(scaled, scaled))
    tau = cubic_step_scale(3.0, p.observed.frobenius(), s)
    return -tau * scaled


def mc_subproblem(p, state, x_bar, L):
    """Exact minimizer of the step majorizer around ``x_bar``.

    ``state`` supplies the anchor for the penalty weights; ``x_bar`` is the
    (possibly extrapolated) point where the smooth part is linearized.
    """
    if L <= 0:
        raise ValueError("L must be positive")
    kernel = mc_kernel(p)
    Z_anchor = pack_state(state)
    Z_bar = pack_state(x_bar)
    g = _smooth_grad_packed(p, Z_bar)
    Z_new = _subproblem_packed(p, kernel, Z_anchor, Z_bar, g, L)
    return unpack_state(Z_new, p.observed.rows)


def rmse(observed, state):
    """Root mean squared error of state.U state.V on the observed entries."""
    if observed.n_obs == 0:
        raise ValueError("no observed entries to evaluate")
    res = _residuals(observed, state.U, state.V)
    return float(np.sqrt(res @ res / res.size))


def mc_random_init(p, seed=0, scale=None):
    """Gaussian factors scaled so U V entries match the data magnitude."""
    rng = np.random.default_rng(seed)
    m, n = p.shape
    if scale is None:
        mean_abs = float(np.mean(np.abs(p.observed.values))) or 1.0
        scale = np.sqrt(mean_abs / np.sqrt(p.r))
    return McState(U=scale * rng.standard_normal((m, p.r)),
                   V=scale * rng.standard_normal((p.r, n)))


def mc_block_problem(p):
    """Single packed BlockProblem with known constants (L, l) = (1, 1)."""
    kernel = mc_kernel(p)
    constants = RelSmoothConstants(L=1.0, l=1.0)
    lam, theta = p.lam, p.theta

    def surrogate_eval(x, y):
        w = surrogate_weights(y, lam, theta)
        return _penalty(lam, theta, y) + float(np.vdot(w, np.abs(x) - np.abs(y)))

    return BlockProblem(
        partial_grad=lambda blocks: _smooth_grad_packed(p, blocks[0]),
        kernel_for=lambda blocks: kernel,
        constants_for=lambda blocks: constants,
        surrogate=SurrogateFn(eval=surrogate_eval),
        solve_subproblem=lambda blocks, z_bar, g, L, z_prev:
            _subproblem_packed(p, kernel, z_prev, z_bar, g, L),
    )


def mc_backtracking_problem(p):
    """Packed single-block problem for the backtracked (L, l) solver."""
    kernel = mc_kernel(p)
    return BacktrackingProblem(
        f_eval=lambda Z: _smooth_eval_packed(p, Z),
        grad=lambda Z: _smooth_grad_packed(p, Z),
        kernel=kernel,
        surrogate=mc_surrogate(p),
        solve_subproblem=lambda z_bar, g, L, z_prev:
            _subproblem_packed(p, kernel, z_prev, z_bar, g, L),
    )


def mc_objective_packed(p):
    """Full objective on the packed representation, for the solver loop."""
    lam, theta = p.lam, p.theta

    def eval_(Z):
        return _smooth_eval_packed(p, Z) + _penalty(lam, theta, Z)

    return eval_
