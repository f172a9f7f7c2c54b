"""Command-line experiment harness.

Three subcommands:

``run``
    one (problem, algorithm, seed) job; writes ``trace.csv`` and
    ``report.json`` under ``--out``.
``compare``
    a grid of algorithms x seeds on matched data; writes per-run traces,
    ``summary.csv`` and a log-log ``plot.svg``.
``verify``
    one of the named self-check suites; exits nonzero on any violation.

Options may also come from a JSON file via ``--config``; explicit flags
override file values.
"""

import argparse
import json
import os
import statistics
import sys
import tempfile
import time
from types import SimpleNamespace

import numpy as np

from . import datakit, matcomp, onmf, svgplot
from .solver import SolverConfig, run, run_backtracking
from .verify import SUITES

__all__ = ["main", "entry"]

_ALGORITHMS = ("bmm", "bmme", "bmme_bt")

DEFAULTS = {
    "problem": "onmf",
    "algorithm": "bmme",
    "m": 100,
    "n": 100,
    "r": 5,
    "lam": None,          # resolved per problem below
    "theta": 5.0,
    "delta": 0.99,
    "eta": 0.9,
    "max_iters": 500,
    "time_budget": None,
    "tol": 1e-9,
    "seed": 1,
    "seeds": 1,
    "data": None,
    "data_format": "csv",
    "init": None,         # spa for onmf, random for matcomp
    "init_u": None,
    "init_v": None,
    "noise": 0.05,
    "obs_fraction": 0.3,
    "train_fraction": 0.7,
    "out": "bmme_out",
    "verify_descent": False,
}


class UsageError(Exception):
    """Bad flag/config combination; maps to exit code 2."""


# ---------------------------------------------------------------------------
# option plumbing
# ---------------------------------------------------------------------------

def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument
    g("--config", help="JSON file with option defaults (flags override)")
    g("--problem", choices=["onmf", "matcomp"])
    g("--algorithm",
      help="bmm | bmme | bmme_bt (compare accepts a comma-separated list)")
    g("--m", type=int, help="rows of the synthetic data matrix")
    g("--n", type=int, help="columns of the synthetic data matrix")
    g("--r", type=int, help="factorization rank")
    g("--lambda", dest="lam", type=float, help="regularization weight")
    g("--theta", type=float, help="exponential penalty sharpness (matcomp)")
    g("--delta", type=float, help="extrapolation safety factor in (0, 1)")
    g("--eta", type=float, help="extrapolation shrink factor in (0, 1)")
    g("--max-iters", type=int)
    g("--time-budget", type=float, help="seconds of block-update time")
    g("--tol", type=float, help="relative objective-change stopping tolerance")
    g("--seed", type=int)
    g("--seeds", type=int, help="number of consecutive seeds (compare)")
    g("--data", help="input data file (omit for synthetic data)")
    g("--data-format", choices=["csv", "mm", "ratings"])
    g("--init", choices=["spa", "random", "file"])
    g("--init-u", help="CSV with the initial left factor (with --init file)")
    g("--init-v", help="CSV with the initial right factor (with --init file)")
    g("--noise", type=float, help="synthetic onmf noise level")
    g("--obs-fraction", type=float, help="synthetic matcomp sampling rate")
    g("--train-fraction", type=float, help="train share of observed entries")
    g("--out", help="output directory")
    g("--verify-descent", action="store_true", default=None,
      help="check the certified descent inequality every iteration")

    parser = argparse.ArgumentParser(
        prog="bmme",
        description="Block-alternating Bregman MM experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common],
                   help="run one algorithm and write trace + report")
    sub.add_parser("compare", parents=[common],
                   help="run algorithms x seeds and write summary + plot")
    pv = sub.add_parser("verify", help="run a named self-check suite")
    pv.add_argument("suite", choices=sorted(SUITES))
    return parser


def _resolve_options(args):
    cfg = dict(DEFAULTS)
    if args.config is not None:
        with open(args.config) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"--config {args.config}: invalid JSON ({exc})")
        if not isinstance(loaded, dict):
            raise UsageError(f"--config {args.config}: expected a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise UsageError(
                f"--config {args.config}: unknown option(s) {', '.join(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key in ("m", "n", "r", "max_iters", "seeds"):
        cfg[key] = int(cfg[key])
    if cfg["r"] < 1 or cfg["m"] < 1 or cfg["n"] < 1:
        raise UsageError("--m, --n and --r must be positive")
    if cfg["max_iters"] < 0:
        raise UsageError("--max-iters must be >= 0")
    if cfg["seeds"] < 1:
        raise UsageError("--seeds must be >= 1")
    if cfg["init"] == "file" and not (cfg["init_u"] and cfg["init_v"]):
        raise UsageError("--init file requires --init-u and --init-v")
    return cfg


def _algorithm_list(cfg, allow_many):
    names = [a.strip() for a in str(cfg["algorithm"]).split(",") if a.strip()]
    if not names:
        raise UsageError("--algorithm: empty value")
    if not allow_many and len(names) > 1:
        raise UsageError("--algorithm: run takes a single algorithm")
    for a in names:
        if a not in _ALGORITHMS:
            raise UsageError(
                f"--algorithm: unknown algorithm {a!r} "
                f"(choose from {', '.join(_ALGORITHMS)})")
    return names


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _trace_csv_text(trace, scale):
    lines = ["iter,elapsed_seconds,objective,scaled_objective"]
    for rec in trace.records:
        lines.append(",".join([
            str(rec.iter),
            repr(rec.elapsed_seconds),
            repr(rec.objective),
            repr(rec.objective / scale),
        ]))
    return "\n".join(lines) + "\n"


def _json_text(payload):
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# job setup and execution
# ---------------------------------------------------------------------------

def _load_factor_csv(path):
    return np.asarray(datakit.load_dense_csv(path), dtype=np.float64)


def _prepare_onmf(cfg, seed):
    if cfg["data"] is not None:
        if cfg["data_format"] != "csv":
            raise UsageError("onmf input data must be a dense CSV matrix")
        X = datakit.load_dense_csv(cfg["data"])
        labels = None
        synthetic = False
    else:
        sample = datakit.gen_synthetic_onmf(
            cfg["m"], cfg["n"], cfg["r"], noise=cfg["noise"], seed=seed)
        X, labels = sample.X, sample.labels
        synthetic = True

    init = cfg["init"] or "spa"
    if init == "spa":
        U0, V0 = onmf.spa_init(X, cfg["r"])
    elif init == "random":
        rng = np.random.default_rng(seed)
        U0 = rng.uniform(size=(X.shape[0], cfg["r"]))
        V0 = rng.uniform(size=(cfg["r"], X.shape[1]))
    else:
        U0 = _load_factor_csv(cfg["init_u"])
        V0 = _load_factor_csv(cfg["init_v"])
        if U0.shape != (X.shape[0], cfg["r"]) or V0.shape != (cfg["r"], X.shape[1]):
            raise UsageError("--init-u/--init-v shapes do not match the data")

    if cfg["lam"] is not None:
        lam = float(cfg["lam"])
    elif synthetic:
        lam = 1000.0
    else:
        lam = onmf.default_lambda(X, U0, V0)
    p = onmf.OnmfProblem(X=X, r=cfg["r"], lam=lam)
    scale = float(np.sum(X * X)) or 1.0
    return SimpleNamespace(kind="onmf", problem=p, init_blocks=[U0, V0],
                           labels=labels, scale=scale, lam=lam,
                           idmaps=None, test=None)


def _prepare_matcomp(cfg, seed):
    idmaps = None
    if cfg["data"] is not None:
        fmt = cfg["data_format"]
        if fmt == "mm":
            observed = datakit.load_matrix_market(cfg["data"])
        elif fmt == "ratings":
            observed, idmaps = datakit.load_ratings(cfg["data"])
        else:
            X = datakit.load_dense_csv(cfg["data"])
            rr, cc = np.meshgrid(np.arange(X.shape[0]), np.arange(X.shape[1]),
                                 indexing="ij")
            observed = datakit.ObservedMatrix(
                rows=X.shape[0], cols=X.shape[1],
                row_idx=rr.ravel(), col_idx=cc.ravel(), values=X.ravel())
    else:
        observed = datakit.gen_synthetic_ratings(
            cfg["m"], cfg["n"], cfg["r"], cfg["obs_fraction"], seed=seed)

    frac = float(cfg["train_fraction"])
    if not 0.0 < frac <= 1.0:
        raise UsageError("--train-fraction must lie in (0, 1]")
    if frac < 1.0:
        train, test = datakit.train_test_split(observed, frac, seed=seed)
    else:
        train, test = observed, None

    lam = float(cfg["lam"]) if cfg["lam"] is not None else 0.1
    p = matcomp.McProblem(observed=train, r=cfg["r"], lam=lam,
                          theta=cfg["theta"])

    init = cfg["init"] or "random"
    if init == "spa":
        raise UsageError("--init spa is only available for --problem onmf")
    if init == "random":
        state0 = matcomp.mc_random_init(p, seed=seed)
    else:
        U0 = _load_factor_csv(cfg["init_u"])
        V0 = _load_factor_csv(cfg["init_v"])
        if U0.shape != (train.rows, cfg["r"]) or V0.shape != (cfg["r"], train.cols):
            raise UsageError("--init-u/--init-v shapes do not match the data")
        state0 = matcomp.McState(U=U0, V=V0)
    scale = train.frobenius() ** 2 or 1.0
    return SimpleNamespace(kind="matcomp", problem=p, state0=state0,
                           train=train, test=test, scale=scale, lam=lam,
                           idmaps=idmaps, labels=None)


def _solver_config(cfg):
    return SolverConfig(
        delta=cfg["delta"],
        eta=cfg["eta"],
        max_iters=cfg["max_iters"],
        time_budget=cfg["time_budget"],
        tol_rel_change=cfg["tol"],
        verify_descent=bool(cfg["verify_descent"]),
    )


def _run_single(cfg, algorithm, seed):
    """Execute one job; returns a namespace with the result and report."""
    solver_cfg = _solver_config(cfg)
    t0 = time.perf_counter()

    if cfg["problem"] == "onmf":
        if algorithm == "bmme_bt":
            raise UsageError(
                "--algorithm bmme_bt is only available for --problem matcomp")
        prep = _prepare_onmf(cfg, seed)
        p = prep.problem
        problems = onmf.onmf_block_problems(p)

        def objective(blocks):
            return onmf.onmf_objective(p, blocks[0], blocks[1])

        result = run(problems, prep.init_blocks, solver_cfg, objective,
                     algorithm=algorithm)
        U, V = result.final
        final_obj = float(objective(result.final))
        extras = {}
        if prep.labels is not None:
            pred = onmf.predict_clusters(V)
            extras["accuracy"] = onmf.clustering_accuracy(prep.labels, pred)
    else:
        prep = _prepare_matcomp(cfg, seed)
        p = prep.problem
        obj_packed = matcomp.mc_objective_packed(p)
        Z0 = matcomp.pack_state(prep.state0)
        if algorithm == "bmme_bt":
            result = run_backtracking(matcomp.mc_backtracking_problem(p),
                                      Z0, solver_cfg, obj_packed)
        else:
            result = run([matcomp.mc_block_problem(p)], [Z0], solver_cfg,
                         lambda blocks: obj_packed(blocks[0]),
                         algorithm=algorithm)
        Z = result.final[0]
        final_state = matcomp.unpack_state(Z, prep.train.rows)
        final_obj = float(obj_packed(Z))
        extras = {"rmse_train": matcomp.rmse(prep.train, final_state),
                  "rmse_train_init": matcomp.rmse(prep.train, prep.state0)}
        if prep.test is not None:
            extras["rmse_test"] = matcomp.rmse(prep.test, final_state)
            extras["rmse_test_init"] = matcomp.rmse(prep.test, prep.state0)

    wall = time.perf_counter() - t0
    resolved = dict(cfg)
    resolved.update(algorithm=algorithm, seed=seed, lam=prep.lam)
    report = {
        "problem": cfg["problem"],
        "algorithm": algorithm,
        "seed": seed,
        "config": resolved,
        "iterations": len(result.trace),
        "stop_reason": str(result.stop_reason.value),
        "objective": final_obj,
        "scaled_objective": final_obj / prep.scale,
        "wall_time_seconds": wall,
    }
    report.update(extras)
    return SimpleNamespace(result=result, report=report, scale=prep.scale,
                           idmaps=prep.idmaps, algorithm=algorithm, seed=seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(cfg):
    algorithm = _algorithm_list(cfg, allow_many=False)[0]
    job = _run_single(cfg, algorithm, cfg["seed"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    _atomic_write_text(os.path.join(out, "trace.csv"),
                       _trace_csv_text(job.result.trace, job.scale))
    _atomic_write_text(os.path.join(out, "report.json"),
                       _json_text(job.report))
    if job.idmaps is not None:
        _atomic_write_text(os.path.join(out, "idmap.json"),
                           _json_text(job.idmaps))
    print(f"{cfg['problem']} {algorithm} seed {cfg['seed']}: "
          f"objective {job.report['objective']:.6e} after "
          f"{job.report['iterations']} iters "
          f"({job.report['stop_reason']}) -> {out}/")
    return 0


def _mean_curve(runs):
    """Resample each run's (time, objective) trace and average them."""
    curves = []
    for ts, ys in runs:
        keep = [(t, y) for t, y in zip(ts, ys) if t > 0 and y > 0]
        if keep:
            curves.append(([t for t, _ in keep], [y for _, y in keep]))
    if not curves:
        return None
    lo = max(c[0][0] for c in curves)
    hi = min(c[0][-1] for c in curves)
    if not (hi > lo):
        ts, ys = curves[0]
        return [ts[-1]], [ys[-1]]
    grid = np.geomspace(lo, hi, 60)
    stack = [np.interp(grid, np.asarray(ts), np.asarray(ys))
             for ts, ys in curves]
    return list(grid), list(np.mean(stack, axis=0))


def cmd_compare(cfg):
    algorithms = _algorithm_list(cfg, allow_many=True)
    seeds = [cfg["seed"] + i for i in range(cfg["seeds"])]
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)

    jobs = []
    for algorithm in algorithms:
        for seed in seeds:
            job = _run_single(cfg, algorithm, seed)
            _atomic_write_text(
                os.path.join(out, f"trace_{algorithm}_{seed}.csv"),
                _trace_csv_text(job.result.trace, job.scale))
            jobs.append(job)
            print(f"{cfg['problem']} {algorithm} seed {seed}: "
                  f"objective {job.report['objective']:.6e} after "
                  f"{job.report['iterations']} iters")

    medians = {}
    for algorithm in algorithms:
        finals = [j.report["objective"] for j in jobs
                  if j.algorithm == algorithm]
        medians[algorithm] = statistics.median(finals)

    lines = ["algorithm,seed,iterations,elapsed_seconds,final_objective,"
             "scaled_final_objective,algorithm_median_final"]
    for j in jobs:
        elapsed = (j.result.trace.records[-1].elapsed_seconds
                   if len(j.result.trace) else 0.0)
        lines.append(",".join([
            j.algorithm,
            str(j.seed),
            str(j.report["iterations"]),
            repr(elapsed),
            repr(j.report["objective"]),
            repr(j.report["scaled_objective"]),
            repr(medians[j.algorithm]),
        ]))
    _atomic_write_text(os.path.join(out, "summary.csv"),
                       "\n".join(lines) + "\n")

    thin, bold = [], []
    for gi, algorithm in enumerate(algorithms):
        per_alg = []
        for j in jobs:
            if j.algorithm != algorithm:
                continue
            ts = [r.elapsed_seconds for r in j.result.trace.records]
            ys = [r.objective for r in j.result.trace.records]
            if ts:
                thin.append((ts, ys, gi))
                per_alg.append((ts, ys))
        mean = _mean_curve(per_alg)
        if mean is not None:
            bold.append((mean[0], mean[1], gi, algorithm))
    if thin or bold:
        svg = svgplot.render_loglog_svg(
            thin, bold_curves=bold,
            title=f"{cfg['problem']}: objective vs block-update time",
            xlabel="time (s)", ylabel="objective")
        _atomic_write_text(os.path.join(out, "plot.svg"), svg)
    print(f"summary for {len(jobs)} runs -> {out}/")
    return 0


def cmd_verify(suite):
    violations = SUITES[suite]()
    for line in violations:
        print(line)
    if violations:
        print(f"{suite}: {len(violations)} violation(s)")
        return 1
    print(f"{suite}: ok")
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "verify":
            return cmd_verify(args.suite)
        cfg = _resolve_options(args)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_compare(cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
