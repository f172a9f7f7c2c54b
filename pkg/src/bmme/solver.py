"""Block-alternating Bregman majorization-minimization with extrapolation.

Each outer iteration sweeps the blocks in order. For block i it

1. picks a tentative extrapolation weight ``beta`` from the Nesterov sequence
   and shrinks it geometrically until the Bregman distance of the extrapolated
   point satisfies

       D_k(x_i, xbar_i) <= delta_i * L_i^{k-1} / (L_i^k + l_i^k)
                           * D_{k-1}(x_i^{k-1}, x_i^k),

2. minimizes the majorizer built from the linearized smooth part, the block
   kernel scaled by L_i^k, and the surrogate of the nonsmooth part.

With ``beta`` forced to zero the method reduces to plain block majorization-
minimization (``bmm_step``). A single-block variant with backtracked (L, l)
lives in ``backtracking_step`` for problems whose constants are unknown.
"""

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .bregman import BlockKernel, RelSmoothConstants, SurrogateFn, bregman_divergence

__all__ = [
    "BlockProblem",
    "BacktrackingProblem",
    "SolverConfig",
    "SolverState",
    "BacktrackState",
    "Trace",
    "TraceRecord",
    "RunResult",
    "StopReason",
    "DescentViolation",
    "SubproblemError",
    "nesterov_next",
    "search_extrapolation",
    "bmme_step",
    "bmm_step",
    "run",
    "backtracking_step",
    "run_backtracking",
    "initial_state",
    "initial_backtrack_state",
]


class DescentViolation(RuntimeError):
    """The certified descent inequality failed; the block problem is wrong."""


class SubproblemError(RuntimeError):
    """A block update left the feasible set or diverged."""


class StopReason(str, Enum):
    MAX_ITERS = "max_iters"
    TIME_BUDGET = "time_budget"
    TOL_REACHED = "tol_reached"


class NesterovStep(NamedTuple):
    nu: float
    beta_init: float


def nesterov_next(nu_prev):
    """Advance the Nesterov weight sequence.

    nu = (1 + sqrt(1 + 4 nu_prev^2)) / 2 and beta_init = (nu_prev - 1) / nu.
    Starting from nu = 1 the first beta_init is exactly 0.
    """
    if not (np.isfinite(nu_prev) and nu_prev >= 1.0):
        raise ValueError(f"nu_prev must be >= 1, got {nu_prev}")
    nu = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * nu_prev * nu_prev))
    return NesterovStep(nu=float(nu), beta_init=float((nu_prev - 1.0) / nu))


class ExtrapolationResult(NamedTuple):
    beta: float
    x_bar: np.ndarray
    shrinks: int


def search_extrapolation(kernel, constants, prev_kernel, prev_constants,
                         x_curr, x_prev, beta_init, delta, eta, max_shrinks=50):
    """Find the largest admissible extrapolation weight by geometric shrinking.

    Tries ``beta = beta_init * eta**j`` for j = 0, 1, ... and accepts the first
    beta whose extrapolated point ``xbar = x + beta (x - x_prev)`` satisfies

        D_kernel(x, xbar) <= delta * prev_L / (L + l) * D_prev(x_prev, x).

    Falls back to beta = 0 (condition trivially true) after ``max_shrinks``
    failures.

    Returns
    -------
    ExtrapolationResult with fields beta, x_bar, shrinks.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must be in (0, 1), got {eta}")
    rhs = (delta * prev_constants.L / (constants.L + constants.l)
           * bregman_divergence(prev_kernel, x_prev, x_curr))
    beta = float(beta_init)
    diff = x_curr - x_prev
    shrinks = 0
    while shrinks <= max_shrinks:
        if beta == 0.0:
            return ExtrapolationResult(0.0, x_curr, shrinks)
        x_bar = x_curr + beta * diff
        if bregman_divergence(kernel, x_curr, x_bar) <= rhs:
            return ExtrapolationResult(beta, x_bar, shrinks)
        beta *= eta
        shrinks += 1
    return ExtrapolationResult(0.0, x_curr, max_shrinks)


@dataclass(frozen=True)
class BlockProblem:
    """Callbacks describing one block of a block-separable problem.

    Every callable receives ``blocks``, the list of all block values with
    blocks earlier in the sweep already holding their updated iterates.

    Attributes
    ----------
    partial_grad : callable(blocks) -> ndarray
        Gradient of the smooth part with respect to this block, evaluated at
        ``blocks`` (the solver substitutes the extrapolated point there).
    kernel_for : callable(blocks) -> BlockKernel
        The distance-generating kernel for this block, which may depend on the
        other blocks' current values.
    constants_for : callable(blocks) -> RelSmoothConstants
    surrogate : SurrogateFn
        Majorizer of this block's nonsmooth term (zero surrogate if none).
    solve_subproblem : callable(blocks, x_bar, grad_bar, L, x_prev) -> ndarray
        Exact minimizer of the block majorizer.
    feasible : callable(x) -> bool
        Membership test for the block's feasible set.
    """

    partial_grad: Callable
    kernel_for: Callable
    constants_for: Callable
    surrogate: SurrogateFn
    solve_subproblem: Callable
    feasible: Callable = lambda x: True


@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by all solver variants.

    delta/eta may be scalars or per-block sequences. Backtracking floors
    (``bt_*``) only matter for :func:`backtracking_step`.
    """

    delta: float | Sequence[float] = 0.99
    eta: float | Sequence[float] = 0.9
    max_shrinks: int = 50
    max_iters: int = 500
    time_budget: Optional[float] = None
    tol_rel_change: float = 1e-9
    verify_descent: bool = True
    descent_slack: float = 1e-8
    bt_l_floor: float = 1e-3
    bt_L_floor: float = 1e-2
    bt_max_doublings: int = 60
    keep_certificates: bool = False

    def per_block(self, which, m):
        v = getattr(self, which)
        if np.isscalar(v):
            out = (float(v),) * m
        else:
            out = tuple(float(x) for x in v)
            if len(out) != m:
                raise ValueError(f"{which} has {len(out)} entries for {m} blocks")
        for x in out:
            if not 0.0 < x < 1.0:
                raise ValueError(f"{which} entries must lie in (0, 1), got {x}")
        return out


@dataclass
class TraceRecord:
    iter: int
    elapsed_seconds: float
    objective: float
    per_block_beta: tuple
    per_block_shrinks: tuple
    descent_slack: Optional[float] = None
    sum_block_divergence: Optional[float] = None


@dataclass
class Trace:
    records: list = field(default_factory=list)

    def append(self, rec):
        self.records.append(rec)

    def objectives(self):
        return np.array([r.objective for r in self.records])

    def __len__(self):
        return len(self.records)


@dataclass
class SolverState:
    """Mutable iteration state for the multi-block solvers."""

    current: list
    previous: list
    prev_kernels: list
    prev_constants: list
    nesterov_nu: list
    iter: int = 0
    elapsed_seconds: float = 0.0
    trace: Trace = field(default_factory=Trace)


def initial_state(problems, init_blocks):
    """Build a SolverState at ``init_blocks`` with x^{-1} = x^0.

    The previous kernels/constants are evaluated at the initial point, which
    makes the first extrapolation condition vacuous (its right-hand side is
    D(x^0, x^0) = 0) and beta^0 = 0 through nu_0 = 1.
    """
    blocks = [np.array(b, dtype=np.float64, copy=True) for b in init_blocks]
    if len(blocks) != len(problems):
        raise ValueError("one initial value per block problem required")
    for i, (p, b) in enumerate(zip(problems, blocks)):
        if not np.all(np.isfinite(b)):
            raise ValueError(f"block {i} initial value has non-finite entries")
        if not p.feasible(b):
            raise ValueError(f"block {i} initial value is infeasible")
    return SolverState(
        current=blocks,
        previous=[b.copy() for b in blocks],
        prev_kernels=[p.kernel_for(blocks) for p in problems],
        prev_constants=[p.constants_for(blocks) for p in problems],
        nesterov_nu=[1.0] * len(blocks),
    )


def _step(problems, state, config, objective, force_beta_zero):
    m = len(problems)
    deltas = config.per_block("delta", m)
    etas = config.per_block("eta", m)

    t0 = time.perf_counter()
    blocks = list(state.current)
    betas, shrinks = [], []
    kernels_k, constants_k = [], []
    nus = []
    for i in range(m):
        kern = problems[i].kernel_for(blocks)
        cons = problems[i].constants_for(blocks)
        nu, beta_init = nesterov_next(state.nesterov_nu[i])
        if force_beta_zero:
            beta_init = 0.0
        ext = search_extrapolation(
            kern, cons, state.prev_kernels[i], state.prev_constants[i],
            state.current[i], state.previous[i], beta_init,
            deltas[i], etas[i], config.max_shrinks)
        grad_point = list(blocks)
        grad_point[i] = ext.x_bar
        grad = problems[i].partial_grad(grad_point)
        x_new = problems[i].solve_subproblem(blocks, ext.x_bar, grad,
                                             cons.L, state.current[i])
        if not np.all(np.isfinite(x_new)):
            raise SubproblemError(f"block {i} update produced non-finite values")
        if not problems[i].feasible(x_new):
            raise SubproblemError(f"block {i} update left the feasible set")
        blocks[i] = x_new
        betas.append(ext.beta)
        shrinks.append(ext.shrinks)
        kernels_k.append(kern)
        constants_k.append(cons)
        nus.append(nu)
    state.elapsed_seconds += time.perf_counter() - t0

    # Instrumentation below is deliberately outside the timed section.
    f_new = float(objective(blocks))
    slack = None
    sum_div = None
    if config.verify_descent:
        f_old = float(objective(state.current))
        sum_div = 0.0
        relaxation = 0.0
        for i in range(m):
            sum_div += constants_k[i].L * bregman_divergence(
                kernels_k[i], state.current[i], blocks[i])
            relaxation += deltas[i] * state.prev_constants[i].L * bregman_divergence(
                state.prev_kernels[i], state.previous[i], state.current[i])
        bound = f_old - sum_div + relaxation
        slack = f_new - bound
        if slack > config.descent_slack * (1.0 + abs(f_old)):
            raise DescentViolation(
                f"iteration {state.iter + 1}: objective {f_new:.12e} exceeds "
                f"certified bound {bound:.12e} by {slack:.3e}")

    state.previous = state.current
    state.current = blocks
    state.prev_kernels = kernels_k
    state.prev_constants = constants_k
    state.nesterov_nu = nus
    state.iter += 1
    state.trace.append(TraceRecord(
        iter=state.iter,
        elapsed_seconds=state.elapsed_seconds,
        objective=f_new,
        per_block_beta=tuple(betas),
        per_block_shrinks=tuple(shrinks),
        descent_slack=slack,
        sum_block_divergence=sum_div,
    ))
    return f_new


def bmme_step(problems, state, config, objective):
    """One extrapolated sweep over all blocks; mutates and returns ``state``.

    When ``config.verify_descent`` is on, asserts the certified inequality

        F(x^{k+1}) <= F(x^k) - sum_i L_i^k D_k(x_i^k, x_i^{k+1})
                      + sum_i delta_i L_i^{k-1} D_{k-1}(x_i^{k-1}, x_i^k)

    up to slack ``descent_slack * (1 + |F(x^k)|)`` and raises
    :class:`DescentViolation` otherwise.
    """
    _step(problems, state, config, objective, force_beta_zero=False)
    return state


def bmm_step(problems, state, config, objective):
    """One plain majorization-minimization sweep (extrapolation disabled)."""
    _step(problems, state, config, objective, force_beta_zero=True)
    return state


@dataclass
class RunResult:
    final: list
    trace: Trace
    stop_reason: StopReason
    state: object


def run(problems, init_blocks, config, objective, algorithm="bmme"):
    """Drive repeated sweeps until an iteration/time/tolerance limit.

    Parameters
    ----------
    problems : sequence of BlockProblem
    init_blocks : sequence of ndarray
    config : SolverConfig
    objective : callable(blocks) -> float
        Full objective (smooth part plus nonsmooth terms), traced per
        iteration.
    algorithm : {"bmme", "bmm"}

    Returns
    -------
    RunResult
        ``final`` holds the last iterate, ``trace`` one record per completed
        iteration, ``stop_reason`` why the loop ended.
    """
    if algorithm not in ("bmme", "bmm"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    step = bmme_step if algorithm == "bmme" else bmm_step
    state = initial_state(problems, init_blocks)
    f_prev = float(objective(state.current))
    reason = StopReason.MAX_ITERS
    for _ in range(config.max_iters):
        step(problems, state, config, objective)
        f_new = state.trace.records[-1].objective
        if abs(f_new - f_prev) <= config.tol_rel_change * (1.0 + abs(f_prev)):
            reason = StopReason.TOL_REACHED
            break
        f_prev = f_new
        if (config.time_budget is not None
                and state.elapsed_seconds >= config.time_budget):
            reason = StopReason.TIME_BUDGET
            break
    return RunResult(final=state.current, trace=state.trace,
                     stop_reason=reason, state=state)


# ---------------------------------------------------------------------------
# Single-block variant with backtracked relative-smoothness constants.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BacktrackingProblem:
    """Single-block problem whose (L, l) pair is found by line search.

    ``f_eval``/``grad`` describe the smooth part only; the nonsmooth part
    enters through ``solve_subproblem`` and ``surrogate``.
    """

    f_eval: Callable
    grad: Callable
    kernel: BlockKernel
    surrogate: SurrogateFn
    solve_subproblem: Callable  # (x_bar, grad_bar, L, x_prev) -> ndarray
    feasible: Callable = lambda x: True


@dataclass
class BacktrackCertificate:
    """Everything needed to re-verify one backtracked step after the fact."""

    x_prev: np.ndarray
    x_curr: np.ndarray
    x_bar: np.ndarray
    x_new: np.ndarray
    L: float
    l: float
    beta: float


@dataclass
class BacktrackState:
    current: np.ndarray
    previous: np.ndarray
    L_prev: float
    l_prev: float
    nu: float = 1.0
    iter: int = 0
    elapsed_seconds: float = 0.0
    trace: Trace = field(default_factory=Trace)
    certificates: list = field(default_factory=list)


def initial_backtrack_state(problem, init, config):
    x0 = np.array(init, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial value has non-finite entries")
    if not problem.feasible(x0):
        raise ValueError("initial value is infeasible")
    return BacktrackState(current=x0, previous=x0.copy(),
                          L_prev=config.bt_L_floor, l_prev=config.bt_l_floor)


def _f_gap(problem, x, y, fy=None, gy=None):
    # f(x) - f(y) - <grad f(y), x - y>
    fy = float(problem.f_eval(y)) if fy is None else fy
    gy = problem.grad(y) if gy is None else gy
    return float(problem.f_eval(x)) - fy - float(np.vdot(gy, x - y))


def backtracking_step(problem, state, config, objective):
    """One extrapolated step with (L, l) found by doubling line searches.

    The lower constant ``l`` grows (factor 2, floor ``bt_l_floor``) until
    ``f(x) - f(xbar) - <grad f(xbar), x - xbar> >= -l * D(x, xbar)``; the
    extrapolation weight is shrunk whenever the admissibility condition

        D(x, xbar) <= delta * L_prev / (L_prev + l) * D(x_prev, x)

    fails for the current ``l``. The upper constant starts at
    ``max(L_prev, bt_L_floor)`` and doubles (re-solving the subproblem) until
    ``f(x_new) - f(xbar) - <grad f(xbar), x_new - xbar> <= L * D(x_new, xbar)``.
    Both constants are nondecreasing across iterations.
    """
    delta = config.per_block("delta", 1)[0]
    eta = config.per_block("eta", 1)[0]
    kernel = problem.kernel

    t0 = time.perf_counter()
    x = state.current
    d_prev = bregman_divergence(kernel, state.previous, x)
    nu, beta = nesterov_next(state.nu)
    l = max(state.l_prev, config.bt_l_floor)
    fx = float(problem.f_eval(x))

    shrinks = 0
    while True:
        x_bar = x if beta == 0.0 else x + beta * (x - state.previous)
        d_bar = bregman_divergence(kernel, x, x_bar)
        f_bar = float(problem.f_eval(x_bar))
        g_bar = problem.grad(x_bar)
        gap = fx - f_bar - float(np.vdot(g_bar, x - x_bar))
        if d_bar == 0.0 and gap < 0.0 and beta > 0.0:
            # x_bar indistinguishable from x up to roundoff: no finite l can
            # absorb the residue, so retire this beta candidate instead.
            shrinks += 1
            beta = 0.0 if shrinks > config.max_shrinks else beta * eta
            continue
        doublings = 0
        while gap < -l * d_bar:
            if doublings >= config.bt_max_doublings:
                raise SubproblemError(
                    "lower-constant search failed to terminate; the kernel "
                    "does not dominate the objective's curvature")
            l *= 2.0
            doublings += 1
        if d_bar <= delta * state.L_prev / (state.L_prev + l) * d_prev:
            break
        if beta == 0.0:  # d_bar == 0 <= rhs always holds; defensive
            break
        shrinks += 1
        beta = 0.0 if shrinks > config.max_shrinks else beta * eta

    L = max(state.L_prev, config.bt_L_floor)
    doublings = 0
    while True:
        x_new = problem.solve_subproblem(x_bar, g_bar, L, x)
        if not np.all(np.isfinite(x_new)):
            raise SubproblemError("update produced non-finite values")
        gap_new = (float(problem.f_eval(x_new)) - f_bar
                   - float(np.vdot(g_bar, x_new - x_bar)))
        if gap_new <= L * bregman_divergence(kernel, x_new, x_bar):
            break
        if doublings >= config.bt_max_doublings:
            raise SubproblemError(
                "upper-constant search failed to terminate; gradient or "
                "kernel implementation is inconsistent")
        L *= 2.0
        doublings += 1
    if not problem.feasible(x_new):
        raise SubproblemError("update left the feasible set")
    state.elapsed_seconds += time.perf_counter() - t0

    if config.keep_certificates:
        state.certificates.append(BacktrackCertificate(
            x_prev=state.previous, x_curr=x, x_bar=x_bar, x_new=x_new,
            L=L, l=l, beta=beta))

    state.previous = x
    state.current = x_new
    state.L_prev = L
    state.l_prev = l
    state.nu = nu
    state.iter += 1
    state.trace.append(TraceRecord(
        iter=state.iter,
        elapsed_seconds=state.elapsed_seconds,
        objective=float(objective(x_new)),
        per_block_beta=(beta,),
        per_block_shrinks=(shrinks,),
    ))
    return state


def run_backtracking(problem, init, config, objective):
    """Loop :func:`backtracking_step` under the configured limits."""
    state = initial_backtrack_state(problem, init, config)
    f_prev = float(objective(state.current))
    reason = StopReason.MAX_ITERS
    for _ in range(config.max_iters):
        backtracking_step(problem, state, config, objective)
        f_new = state.trace.records[-1].objective
        if abs(f_new - f_prev) <= config.tol_rel_change * (1.0 + abs(f_prev)):
            reason = StopReason.TOL_REACHED
            break
        f_prev = f_new
        if (config.time_budget is not None
                and state.elapsed_seconds >= config.time_budget):
            reason = StopReason.TIME_BUDGET
            break
    return RunResult(final=[state.current], trace=state.trace,
                     stop_reason=reason, state=state)
