"""Penalized orthogonal NMF solved by block Bregman majorization.

The problem is

    min_{U >= 0, V >= 0}  0.5 ||X - U V||_F^2 + 0.5 lam ||I - V V^T||_F^2,

whose V-block smooth part is a quartic, handled with the polynomial kernel
``phi(V) = (6 lam / 4) ||V||_F^4 + 0.5 eps(U) ||V||_F^2`` where
``eps(U) = max(||U^T U||_2, 2 lam)``. Against that kernel the V block is
(1, 1)-relatively smooth; the U block is plain Lipschitz with constant
``||V V^T||_2`` against the Euclidean kernel. Both block updates have closed
forms: a projected gradient step for U, and for V the positive part of

    G = grad phi(Vbar) - grad_V f(U, Vbar) / L

rescaled by the unique positive root of ``rho^2 (rho - eps(U)) = c`` with
``c = 6 lam ||max(G, 0)||_F^2``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .bregman import (
    BlockKernel,
    RelSmoothConstants,
    as_matrix,
    quadratic_kernel,
    zero_surrogate,
)
from .solver import BlockProblem

__all__ = [
    "OnmfProblem",
    "onmf_objective",
    "spectral_norm",
    "onmf_constants_U",
    "v_kernel_weight",
    "v_block_kernel",
    "update_U",
    "v_update_target",
    "cubic_norm_scale",
    "update_V",
    "spa_select_rows",
    "spa_init",
    "predict_clusters",
    "clustering_accuracy",
    "onmf_block_problems",
    "default_lambda",
]

_L1_FLOOR = 1e-12


@dataclass(frozen=True)
class OnmfProblem:
    """Data matrix, factorization rank, and orthogonality penalty weight."""

    X: np.ndarray
    r: int
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "X", as_matrix(self.X, "X"))
        if not 1 <= self.r <= min(self.X.shape):
            raise ValueError(f"r must lie in [1, min(m, n)], got {self.r}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be positive, got {self.lam}")


def onmf_objective(p, U, V):
    """0.5 ||X - U V||_F^2 + 0.5 lam ||I_r - V V^T||_F^2."""
    R = p.X - U @ V
    O = np.eye(V.shape[0]) - V @ V.T
    return 0.5 * float(np.vdot(R, R)) + 0.5 * p.lam * float(np.vdot(O, O))


def spectral_norm(M, tol=1e-10, max_iters=10000):
    """Largest singular value via power iteration on M^T M.

    Deterministic all-ones start; stops when the Rayleigh estimate moves by
    less than ``tol`` relative or after ``max_iters`` sweeps.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("spectral_norm expects a 2-D array")
    n = M.shape[1]
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(max_iters):
        w = M.T @ (M @ v)
        lam_new = float(v @ w)  # Rayleigh quotient, ||v|| == 1
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def onmf_constants_U(V):
    """(L, l) = (||V V^T||_2, 0) for the U block, floored away from zero."""
    return RelSmoothConstants(L=max(spectral_norm(V @ V.T), _L1_FLOOR), l=0.0)


def v_kernel_weight(U, lam):
    """Quadratic-term weight max(||U^T U||_2, 2 lam) of the V-block kernel.

    Also the kernel's strong-convexity modulus.
    """
    return max(spectral_norm(U.T @ U), 2.0 * lam)


def v_block_kernel(U, lam):
    """Quartic kernel (6 lam / 4) ||V||^4 + 0.5 eps(U) ||V||^2 for the V block."""
    eps = v_kernel_weight(U, lam)

    def eval_(V):
        s = float(np.vdot(V, V))
        return 1.5 * lam * s * s + 0.5 * eps * s

    def grad(V):
        return (6.0 * lam * float(np.vdot(V, V)) + eps) * V

    return BlockKernel(eval=eval_, grad=grad, strong_convexity_modulus=eps)


def _grad_U(X, U, V):
    return U @ (V @ V.T) - X @ V.T


def _grad_V(X, lam, U, V):
    return U.T @ U @ V - U.T @ X + 2.0 * lam * ((V @ V.T) @ V - V)


def update_U(p, U_bar, V, L1):
    """Closed-form U block update max(Ubar - grad_U f(Ubar, V) / L1, 0)."""
    if L1 <= 0:
        raise ValueError("L1 must be positive")
    return np.maximum(U_bar - _grad_U(p.X, U_bar, V) / L1, 0.0)


def v_update_target(p, U, V_bar, L2):
    """Kernel gradient at Vbar minus the scaled objective gradient.

    The positive part of this matrix, rescaled by :func:`cubic_norm_scale`,
    is the exact V block minimizer.
    """
    kern = v_block_kernel(U, p.lam)
    return kern.grad(V_bar) - _grad_V(p.X, p.lam, U, V_bar) / L2


def cubic_norm_scale(a, c):
    """Unique positive root of ``t^2 (t - a) = c`` for a >= 0, c >= 0, a+c > 0.

    Closed form: with D = c^2 + (4/27) c a^3, the root is
    ``a/3 + cbrt((c + sqrt(D))/2 + a^3/27) + cbrt((c - sqrt(D))/2 + a^3/27)``;
    the two cube-root arguments multiply to (a^2/9)^3, which gives the
    cancellation-free evaluation used here, plus one Newton polish.
    """
    if a < 0 or c < 0:
        raise ValueError("cubic_norm_scale needs a >= 0 and c >= 0")
    if a == 0.0 and c == 0.0:
        raise ValueError("cubic_norm_scale needs a + c > 0")
    disc = c * c + (4.0 / 27.0) * c * a**3
    t1 = np.cbrt((c + np.sqrt(disc)) / 2.0 + a**3 / 27.0)
    rho = a / 3.0 + t1 + (a * a / 9.0) / t1
    # one Newton step on t^3 - a t^2 - c sharpens the last bits
    h = rho * rho * (rho - a) - c
    dh = rho * (3.0 * rho - 2.0 * a)
    if dh > 0:
        rho -= h / dh
    return float(rho)


def _update_V_from_grad(U, V_bar, grad, L2, lam):
    eps = v_kernel_weight(U, lam)
    G = (6.0 * lam * float(np.vdot(V_bar, V_bar)) + eps) * V_bar - grad / L2
    Gp = np.maximum(G, 0.0)
    c = 6.0 * lam * float(np.vdot(Gp, Gp))
    if c == 0.0:
        return np.zeros_like(V_bar)
    return Gp / cubic_norm_scale(eps, c)


def update_V(p, U, V_bar, L2):
    """Closed-form V block update (positive part of the target, rescaled)."""
    if L2 <= 0:
        raise ValueError("L2 must be positive")
    return _update_V_from_grad(U, V_bar, _grad_V(p.X, p.lam, U, V_bar), L2, p.lam)


def spa_select_rows(X, r):
    """Successive projection: indices of r informative rows of X.

    Repeatedly picks the row with the largest residual Euclidean norm, then
    projects every row onto the orthogonal complement of the picked one.
    """
    X = as_matrix(X, "X")
    m = X.shape[0]
    if not 1 <= r <= min(X.shape):
        raise ValueError(f"r must lie in [1, min(m, n)], got {r}")
    total = float(np.linalg.norm(X))
    if total == 0.0:
        raise ValueError("X is identically zero; no informative rows")
    Y = X.copy()
    selected = []
    floor = (1e-12 * total) ** 2
    for _ in range(r):
        norms2 = np.einsum("ij,ij->i", Y, Y)
        norms2[selected] = -1.0
        pick = int(np.argmax(norms2))
        if norms2[pick] <= floor:
            raise ValueError(
                f"only {len(selected)} informative rows found, need {r}")
        d = Y[pick] / np.sqrt(norms2[pick])
        Y -= np.outer(Y @ d, d)
        selected.append(pick)
    return selected


def spa_init(X, r):
    """Initial factors: V0 = unit-normalized selected rows, U0 = max(X V0^T, 0)."""
    X = as_matrix(X, "X")
    rows = spa_select_rows(X, r)
    V0 = X[rows].copy()
    V0 /= np.linalg.norm(V0, axis=1, keepdims=True)
    U0 = np.maximum(X @ V0.T, 0.0)
    return U0, V0


def predict_clusters(V):
    """Per-column cluster ids (1-based): argmax row of V, first row on ties."""
    V = as_matrix(V, "V")
    return np.argmax(V, axis=0) + 1


def clustering_accuracy(labels_true, labels_pred, r=None):
    """Best label-matching agreement rate between two clusterings.

    Maximizes ``(1/n) * #{j : pred[j] == pi(true[j])}`` over permutations
    ``pi`` of the 1-based cluster ids, solved as a linear assignment problem
    on the r x r confusion matrix. ``r`` defaults to the largest id present.
    """
    t = np.asarray(labels_true, dtype=np.int64)
    q = np.asarray(labels_pred, dtype=np.int64)
    if t.ndim != 1 or t.shape != q.shape:
        raise ValueError("label arrays must be 1-D and equally long")
    if t.size == 0:
        raise ValueError("label arrays are empty")
    if t.min() < 1 or q.min() < 1:
        raise ValueError("cluster ids must be >= 1")
    if r is None:
        r = int(max(t.max(), q.max()))
    elif r < max(t.max(), q.max()):
        raise ValueError(f"cluster ids exceed r={r}")
    conf = np.zeros((r, r), dtype=np.int64)
    np.add.at(conf, (t - 1, q - 1), 1)
    rows, cols = linear_sum_assignment(conf, maximize=True)
    return float(conf[rows, cols].sum()) / float(t.size)


def default_lambda(X, U0, V0):
    """Penalty weight ||X - U0 V0||_F^2 / r from an initialization."""
    R = X - U0 @ V0
    return float(np.vdot(R, R)) / V0.shape[0]


def onmf_block_problems(p):
    """Two BlockProblems (U first, then V) wired to the closed-form updates."""
    X, lam = p.X, p.lam
    euclid = quadratic_kernel()

    def u_grad(blocks):
        U, V = blocks
        return _grad_U(X, U, V)

    def u_solve(blocks, x_bar, grad_bar, L, x_prev):
        return np.maximum(x_bar - grad_bar / L, 0.0)

    u_block = BlockProblem(
        partial_grad=u_grad,
        kernel_for=lambda blocks: euclid,
        constants_for=lambda blocks: onmf_constants_U(blocks[1]),
        surrogate=zero_surrogate(),
        solve_subproblem=u_solve,
        feasible=lambda x: bool(np.all(x >= 0.0)),
    )

    v_constants = RelSmoothConstants(L=1.0, l=1.0)

    def v_grad(blocks):
        U, V = blocks
        return _grad_V(X, lam, U, V)

    def v_solve(blocks, x_bar, grad_bar, L, x_prev):
        return _update_V_from_grad(blocks[0], x_bar, grad_bar, L, lam)

    v_block = BlockProblem(
        partial_grad=v_grad,
        kernel_for=lambda blocks: v_block_kernel(blocks[0], lam),
        constants_for=lambda blocks: v_constants,
        surrogate=zero_surrogate(),
        solve_subproblem=v_solve,
        feasible=lambda x: bool(np.all(x >= 0.0)),
    )
    return [u_block, v_block]
