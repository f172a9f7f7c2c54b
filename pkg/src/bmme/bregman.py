"""Distance-generating kernels, Bregman divergences, and smoothness checks.

The solver measures progress with Bregman divergences
``D(x, y) = phi(x) - phi(y) - <grad phi(y), x - y>`` generated by strongly
convex kernels ``phi``, and relies on the objective's smooth part being
*relatively* smooth with respect to those kernels:

    -l * D(x, y) <= f(x) - f(y) - <grad f(y), x - y> <= L * D(x, y).

This module holds the kernel/divergence primitives plus sampling-based
checkers used by the test suite and the ``verify`` command.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "BlockKernel",
    "RelSmoothConstants",
    "SurrogateFn",
    "RelSmoothReport",
    "as_matrix",
    "bregman_divergence",
    "check_relative_smoothness",
    "check_gradient",
    "check_kernel",
    "check_surrogate",
    "quadratic_kernel",
    "zero_surrogate",
]

# Negative divergence values larger than this (relative) threshold indicate a
# broken kernel rather than roundoff.
_CLAMP_REL = 1e-12


def as_matrix(a, name="matrix"):
    """Validate and return a 2-D float64 array with finite entries.

    Parameters
    ----------
    a : array_like
        Anything convertible to a 2-D numpy array.
    name : str
        Used in error messages.

    Returns
    -------
    numpy.ndarray of float64, shape (rows, cols), rows >= 1 and cols >= 1.
    """
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


@dataclass(frozen=True)
class BlockKernel:
    """A distance-generating function for one block of variables.

    Attributes
    ----------
    eval : callable
        ``eval(x) -> float``, the kernel value.
    grad : callable
        ``grad(x) -> ndarray``, same shape as ``x``.
    strong_convexity_modulus : float
        A (possibly conservative) lower bound rho > 0 such that
        ``D(x, y) >= rho/2 * ||x - y||_F^2``.
    """

    eval: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    strong_convexity_modulus: float = 0.0


@dataclass(frozen=True)
class RelSmoothConstants:
    """Relative-smoothness pair (L, l) of a function against a kernel."""

    L: float
    l: float

    def __post_init__(self):
        if not (np.isfinite(self.L) and self.L > 0):
            raise ValueError(f"L must be positive and finite, got {self.L}")
        if not (np.isfinite(self.l) and self.l >= 0):
            raise ValueError(f"l must be nonnegative and finite, got {self.l}")


@dataclass(frozen=True)
class SurrogateFn:
    """Block surrogate u(x, y) majorizing a (possibly nonsmooth) term g.

    Contract: ``u(y, y) == g(y)``, ``u(x, y) >= g(x)`` for all feasible x,
    and ``x -> u(x, y)`` is convex.
    """

    eval: Callable[[np.ndarray, np.ndarray], float]


def zero_surrogate():
    # for blocks whose nonsmooth term is identically zero
    return SurrogateFn(eval=lambda x, y: 0.0)


def quadratic_kernel():
    """The Euclidean kernel ``phi(x) = 0.5 * ||x||_F^2`` (modulus 1)."""
    return BlockKernel(
        eval=lambda x: 0.5 * float(np.vdot(x, x)),
        grad=lambda x: np.array(x, dtype=np.float64, copy=True),
        strong_convexity_modulus=1.0,
    )


def bregman_divergence(kernel, x, y):
    """Bregman divergence ``phi(x) - phi(y) - <grad phi(y), x - y>``.

    Tiny negative values (roundoff from a convex kernel) are clamped to zero;
    anything more negative than ``-1e-12 * (1 + |phi(x)|)`` raises, since a
    genuinely negative divergence means the kernel is not convex.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    px = float(kernel.eval(x))
    d = px - float(kernel.eval(y)) - float(np.vdot(kernel.grad(y), x - y))
    if not np.isfinite(d):
        raise FloatingPointError("Bregman divergence is not finite")
    if d < 0.0:
        if d >= -_CLAMP_REL * (1.0 + abs(px)):
            return 0.0
        raise FloatingPointError(
            f"negative Bregman divergence {d:.3e}; kernel is not convex"
        )
    return d


@dataclass(frozen=True)
class RelSmoothReport:
    """Worst-case violations found by :func:`check_relative_smoothness`.

    Nonpositive values mean the corresponding inequality held on every sample.
    """

    max_upper_violation: float
    max_lower_violation: float

    def ok(self, tol=1e-9):
        return self.max_upper_violation <= tol and self.max_lower_violation <= tol


def check_relative_smoothness(f_eval, f_grad, kernel, constants, samples):
    """Check -l*D(x,y) <= f(x)-f(y)-<grad f(y),x-y> <= L*D(x,y) on samples.

    Parameters
    ----------
    f_eval, f_grad : callables
        Smooth-part value and gradient for the block being certified.
    kernel : BlockKernel
    constants : RelSmoothConstants
    samples : iterable of (x, y) pairs

    Returns
    -------
    RelSmoothReport
        ``max_upper_violation`` is max over samples of ``gap - L*D`` and
        ``max_lower_violation`` of ``-l*D - gap`` where
        ``gap = f(x) - f(y) - <grad f(y), x - y>``.
    """
    up = -np.inf
    lo = -np.inf
    n = 0
    for x, y in samples:
        d = bregman_divergence(kernel, x, y)
        gap = float(f_eval(x)) - float(f_eval(y)) - float(np.vdot(f_grad(y), x - y))
        up = max(up, gap - constants.L * d)
        lo = max(lo, -constants.l * d - gap)
        n += 1
    if n == 0:
        raise ValueError("no samples supplied")
    return RelSmoothReport(max_upper_violation=up, max_lower_violation=lo)


def check_gradient(f_eval, f_grad, x, directions=None, rng=None, n_dirs=5):
    """Max relative mismatch between <grad, d> and a central finite difference.

    The step is ``1e-6 * (1 + ||x||_F)``; the mismatch is measured relative to
    ``1 + |directional derivative|``.
    """
    x = np.asarray(x, dtype=np.float64)
    if directions is None:
        rng = np.random.default_rng(0) if rng is None else rng
        directions = [rng.standard_normal(x.shape) for _ in range(n_dirs)]
    h = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    g = f_grad(x)
    worst = 0.0
    for d in directions:
        d = np.asarray(d, dtype=np.float64)
        nd = float(np.linalg.norm(d))
        if nd == 0.0:
            continue
        d = d / nd
        fd = (float(f_eval(x + h * d)) - float(f_eval(x - h * d))) / (2.0 * h)
        an = float(np.vdot(g, d))
        worst = max(worst, abs(fd - an) / (1.0 + abs(an)))
    return worst


def check_kernel(kernel, points, pairs=None):
    """Structural kernel checks; returns a list of violation strings.

    Verifies D(x, x) == 0, D(x, y) >= 0, the strong-convexity lower bound
    D(x, y) >= rho/2 ||x-y||^2, and the gradient against finite differences.
    """
    bad = []
    points = [np.asarray(p, dtype=np.float64) for p in points]
    for idx, p in enumerate(points):
        if bregman_divergence(kernel, p, p) != 0.0:
            bad.append(f"D(x, x) != 0 at point {idx}")
        err = check_gradient(kernel.eval, kernel.grad, p)
        if err > 1e-5:
            bad.append(f"gradient mismatch {err:.2e} at point {idx}")
    if pairs is None:
        pairs = [(points[i], points[j]) for i in range(len(points))
                 for j in range(len(points)) if i != j]
    rho = kernel.strong_convexity_modulus
    for idx, (x, y) in enumerate(pairs):
        d = bregman_divergence(kernel, x, y)
        lower = 0.5 * rho * float(np.vdot(x - y, x - y))
        if d < lower - 1e-9 * (1.0 + abs(d)):
            bad.append(f"strong convexity bound failed on pair {idx}: "
                       f"D={d:.6e} < {lower:.6e}")
    return bad


def check_surrogate(surrogate, g_eval, anchors, candidates, tol=1e-9):
    """Check u(y,y)=g(y), u(x,y)>=g(x), and midpoint convexity in x.

    Returns a list of violation strings (empty when all checks pass).
    """
    bad = []
    for idx, y in enumerate(anchors):
        uy = float(surrogate.eval(y, y))
        gy = float(g_eval(y))
        if abs(uy - gy) > tol * (1.0 + abs(gy)):
            bad.append(f"u(y,y) != g(y) at anchor {idx}: {uy} vs {gy}")
        for jdx, x in enumerate(candidates):
            if x.shape != y.shape:
                continue
            ux = float(surrogate.eval(x, y))
            gx = float(g_eval(x))
            if ux < gx - tol * (1.0 + abs(gx)):
                bad.append(f"u(x,y) < g(x) at ({jdx},{idx}): {ux} vs {gx}")
        for jdx in range(len(candidates) - 1):
            a, b = candidates[jdx], candidates[jdx + 1]
            if a.shape != y.shape or b.shape != y.shape:
                continue
            mid = float(surrogate.eval(0.5 * (a + b), y))
            avg = 0.5 * (float(surrogate.eval(a, y)) + float(surrogate.eval(b, y)))
            if mid > avg + tol * (1.0 + abs(avg)):
                bad.append(f"midpoint convexity failed at ({jdx},{idx})")
    return bad
