"""Command-line experiment runner.

    fbsde run CONFIG [--out CSV] [--seed N] [--threads N] [--timings]
    fbsde run --check [--only 1,2]
    fbsde list

Exit codes: 0 success, 1 acceptance failure, 2 configuration error,
3 runtime error in the estimators.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bsde, estimators, models, oracles, rng
from .config import ExperimentConfig, bundled_configs, load_config
from .errors import ConfigError, FbsdeError
from .sde import TimeGrid, simulate_ensemble
from .weights import WeightSpec

HEADER = ("experiment", "model", "estimator_tag", "t", "s", "x0", "v", "value", "std_error",
          "n_paths", "n_rejected", "seed", "runtime_ms")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def build_driver(cfg: ExperimentConfig) -> bsde.BackwardDriver:
    a = np.asarray(cfg.payoff_vector)
    g = {
        "linear": lambda x: x @ a,
        "sin": lambda x: np.sin(x @ a),
        "square": lambda x: (x @ a) ** 2,
    }[cfg.payoff]
    alpha = cfg.driver_alpha
    f = {
        "zero": None,
        "linear": lambda t, x, y, z: alpha * y,
        "nonlinear": lambda t, x, y, z: -np.abs(y) + np.sin(z[:, 0]),
    }[cfg.driver]
    return bsde.BackwardDriver(g, f, lipschitz_g=float(np.linalg.norm(a)), name=cfg.payoff)


def _vec(v) -> str:
    return ";".join(repr(float(a)) for a in v)


def run_experiment(cfg: ExperimentConfig, n_workers: int = 1, timings: bool = False) -> list:
    """All result rows of one experiment, in (estimator, probe, direction) order."""
    model = models.CATALOG[cfg.model_kind](**cfg.model_params)
    driver = build_driver(cfg)
    grid = TimeGrid(cfg.t0, cfg.T, cfg.steps)
    s_index = grid.index_of(cfg.s) if cfg.s > cfg.t0 else 0
    sol = None
    if not driver.is_zero:
        fit = simulate_ensemble(model, grid, np.asarray(cfg.probes[0]), cfg.fit_paths,
                                rng.derive_seed(cfg.seed, 1), n_workers=n_workers,
                                store_jacobian=False)
        sol = bsde.solve_lsmc(fit, driver, cfg.basis_degree)

    rows = []
    for tag in cfg.estimators:
        for x0 in cfg.probes:
            x0 = np.asarray(x0)
            for v in cfg.directions:
                v = np.asarray(v)
                spec = WeightSpec(cfg.weight_kind, 0, grid.n_steps, v, cfg.weight_c,
                                  cfg.gram_rule, cfg.derivative_rule, cfg.damped_rule)
                t_start = time.perf_counter()
                s_val = grid.time(s_index)
                if tag == "bismut":
                    est = estimators.bismut_gradient(model, driver, grid, x0, v, spec, sol,
                                                     cfg.paths, cfg.seed, s_index, n_workers)
                    value, se, n, rej = est.value, est.std_error, est.n_paths, est.n_rejected
                elif tag == "finite_difference":
                    est = oracles.fd_gradient(model, driver, grid, x0, v, cfg.fd_eps, cfg.paths,
                                              rng.derive_seed(cfg.seed, 2), cfg.basis_degree,
                                              n_workers)
                    value, se, n, rej = est.value, est.std_error, est.n_paths, est.n_rejected
                    s_val = grid.t0
                else:
                    spec = spec.with_window(s_index, grid.n_steps)
                    out = estimators.conditional_gradient(
                        model, driver, grid, x0, v, s_index, spec, cfg.outer_paths,
                        cfg.inner_paths, rng.derive_seed(cfg.seed, 3), sol, n_workers)
                    # averaging grad_v Y_s over outer paths gives grad_v E Y_s
                    vals = np.array([o.estimate.value for o in out])
                    value = float(vals.mean())
                    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 \
                        else out[0].estimate.std_error
                    n = sum(o.estimate.n_paths for o in out)
                    rej = sum(o.estimate.n_rejected for o in out)
                ms = (time.perf_counter() - t_start) * 1e3
                rows.append((cfg.name, cfg.model_kind, tag, repr(grid.t0), repr(float(s_val)),
                             _vec(x0), _vec(v), repr(float(value)), repr(float(se)), n, rej,
                             cfg.seed, f"{ms:.1f}" if timings else ""))
    return rows


def write_rows(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(HEADER)
        w.writerows(rows)


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("FBSDE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"FBSDE_THREADS must be an integer, got {env!r}") from None
    return 1


def resolve_config(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_configs()
    if name_or_path in bundled:
        return bundled[name_or_path]
    raise ConfigError(f"no config file or bundled config named {name_or_path!r}")


def cmd_run(args) -> int:
    if args.check:
        from . import acceptance

        only = {int(t) for t in args.only.split(",")} if args.only else None
        return EXIT_OK if acceptance.run_all(sys.stdout, only) else EXIT_FAIL
    if args.config is None:
        print("error: a config path is required unless --check is given", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(resolve_config(args.config))
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must lie in [0, 2^64)")
            cfg = _replace(cfg, seed=args.seed)
        n_workers = _threads(args.threads)
        out = args.out or cfg.csv
        if out is None:
            raise ConfigError("[output] csv is not set and no --out given")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = run_experiment(cfg, n_workers, args.timings or cfg.timings)
    except (FbsdeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"runtime error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_rows(out, rows)
    for r in rows:
        print(f"{r[2]:>17s}  x0=({r[5]})  v=({r[6]})  {float(r[7]):+.6f} +- {float(r[8]):.6f}")
    return EXIT_OK


def _replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


def cmd_list(args) -> int:
    for name, path in sorted(bundled_configs().items()):
        print(f"{name:20s} {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbsde", description="Monte Carlo gradient estimators for FBSDEs")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config, or the acceptance suite with --check")
    r.add_argument("config", nargs="?", help="config path or bundled config name")
    r.add_argument("--out", help="CSV path (overrides [output] csv); rows are appended")
    r.add_argument("--seed", type=int, help="override [mc] seed")
    r.add_argument("--threads", type=int, help="worker threads (default: $FBSDE_THREADS or 1)")
    r.add_argument("--timings", action="store_true", help="fill runtime_ms (makes output non-reproducible)")
    r.add_argument("--check", action="store_true", help="run the acceptance suite")
    r.add_argument("--only", help="with --check: comma-separated criterion numbers")
    r.set_defaults(func=cmd_run)
    ls = sub.add_parser("list", help="list bundled configs")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
