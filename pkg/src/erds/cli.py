"""Command line entry point ``erds``.

Exit codes: 0 on success, 1 on validation errors, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, apply_override, evaluate_expression, parse_config
from .errors import ConfigError, ErdsError, NumericalError
from .grid import Grid

log = logging.getLogger("erds")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _load(path: str) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from exc
    return parse_config(text)


def _describe_numerical(exc: NumericalError) -> str:
    msg = str(exc)
    if exc.time is not None:
        msg += f" (t = {exc.time:.6g})"
    if exc.extrema:
        parts = ", ".join(f"{k}={_array_text(v)}" for k, v in exc.extrema.items())
        msg += f"; extrema: {parts}"
    return msg


def _array_text(v) -> str:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return format(float(a), ".15g")
    if a.size <= 8:
        return "[" + ", ".join(format(float(x), ".15g") for x in a.ravel()) + "]"
    return f"array{a.shape} min={a.min():.6g} max={a.max():.6g}"


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def cmd_run(args) -> int:
    from .runner import execute, write_outputs

    cfg = _load(args.config)
    result = execute(cfg)
    out = write_outputs(cfg, result, args.output)
    s = result.summary
    print(f"output: {out}")
    for key in ("K_hat", "k_fit", "r_squared", "max_dissipation_residual", "eep_worst_ratio"):
        print(f"{key}: {s[key]}")
    if s["flags"]:
        print("flags: " + ", ".join(s["flags"]))
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    from .runner import build_scenario

    if args.config:
        eq = build_scenario(_load(args.config)).eq
    else:
        from .equilibrium import solve_torus_equilibrium

        if args.C0 is None:
            raise ConfigError(["equilibrium: pass --C0 (and optionally --E0, --c) or a config file"])
        eq = solve_torus_equilibrium(args.C0, args.E0, args.c)
    if eq.C_n is not None:
        print(f"C_n={_array_text(eq.C_n)}")
        print(f"C_p={_array_text(eq.C_p)}")
    print(f"Sigma_e={_array_text(eq.Sigma_e)}")
    print(f"u_star={_array_text(eq.u_star)}")
    print(f"e_star={_array_text(eq.e_star)}")
    print(f"C_tilde={_array_text(eq.C_tilde)}")
    print(f"Sigma_u={_array_text(eq.Sigma_u)}")
    print(f"iterations={eq.iterations}")
    return EXIT_OK


def cmd_check_inequalities(args) -> int:
    from .inequalities import run_oracle_suite

    results = run_oracle_suite(args.samples, args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:8s} samples={r.samples} violations={r.violations} "
              f"worst_ratio={r.worst_ratio:.12g} time={r.seconds:.3f}s")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def cmd_constants(args) -> int:
    from .diagnostics import estimate_functional_constants

    n = tuple([args.n] * args.dim)
    grid = Grid(args.kind, n, args.half_width)
    weight = None
    if args.weight:
        weight = evaluate_expression(args.weight, grid.centers)
        weight = weight / grid.integrate(weight)
    fc = estimate_functional_constants(grid, weight, seed=args.seed, n_trials=args.trials)
    print(f"C_P={fc.C_P:.15g}")
    print(f"C_LS={fc.C_LS:.15g}")
    print(f"C_S={fc.C_S:.15g}")
    print(f"trial_based={fc.trial_based}")
    return EXIT_OK


def _sweep_one(job):
    """Worker: run one sweep point and return its index row."""
    from .runner import execute, write_outputs

    idx, cfg, overrides, root = job
    row = {"index": idx, **{k: v for k, v in overrides.items()}}
    try:
        result = execute(cfg)
    except NumericalError as exc:
        row.update(status="numerical-error", message=_describe_numerical(exc), hash=cfg.hash())
        return row
    out = write_outputs(cfg, result, root)
    s = result.summary
    row.update(status="ok", message="", hash=cfg.hash(), directory=str(out),
               k_fit=s["k_fit"], K_hat=s["K_hat"], eep_worst_ratio=s["eep_worst_ratio"])
    return row


def sweep_points(cfg: Config) -> list:
    """Cartesian product of the ``[sweep]`` override lists as validated configs."""
    if not cfg.sweep:
        raise ConfigError(["sweep: config has no [sweep] table"])
    keys = sorted(cfg.sweep)
    points, errors = [], []
    for values in itertools.product(*(cfg.sweep[k] for k in keys)):
        cur = cfg
        try:
            for k, v in zip(keys, values):
                cur = apply_override(cur, k, v)
        except ConfigError as exc:
            errors += [f"sweep point {dict(zip(keys, values))}: {e}" for e in exc.errors]
            continue
        points.append((cur, dict(zip(keys, values))))
    if errors:
        raise ConfigError(errors)
    return points


def cmd_sweep(args) -> int:
    from .runner import worker_count

    cfg = _load(args.config)
    root = Path(args.output or cfg.output.directory)
    points = sweep_points(cfg)
    jobs = [(i, c, o, str(root)) for i, (c, o) in enumerate(points)]
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        rows = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    root.mkdir(parents=True, exist_ok=True)
    keys = sorted(cfg.sweep)
    cols = ["index", *keys, "status", "hash", "directory", "k_fit", "K_hat", "eep_worst_ratio", "message"]
    with open(root / "sweep_index.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in cols})
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"sweep: {len(rows)} runs, {len(failed)} failed; index at {root / 'sweep_index.csv'}")
    for r in failed:
        print(f"  run {r['index']}: {r['message']}", file=sys.stderr)
    return EXIT_NUMERICAL if failed else EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="erds", description="Energy-reaction-diffusion simulations and diagnostics.")
    p.add_argument("--version", action="version", version=f"erds {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario and write series.csv and summary.json")
    r.add_argument("config")
    r.add_argument("--output", help="output root (default: output.directory of the config)")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("equilibrium", help="print the equilibrium state")
    e.add_argument("config", nargs="?")
    e.add_argument("--C0", type=float, help="conserved charge int(n - p)")
    e.add_argument("--E0", type=float, default=1.0, help="total energy int(e)")
    e.add_argument("--c", type=float, default=1.0, help="heat capacity constant")
    e.set_defaults(func=cmd_equilibrium)

    c = sub.add_parser("check-inequalities", help="randomised check of the elementary inequalities")
    c.add_argument("--samples", type=int, default=100_000)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check_inequalities)

    s = sub.add_parser("sweep", help="run the cartesian product of the [sweep] overrides")
    s.add_argument("config")
    s.add_argument("--output", help="output root")
    s.set_defaults(func=cmd_sweep)

    k = sub.add_parser("constants", help="Poincare, log-Sobolev and Sobolev constants of a grid")
    k.add_argument("--kind", choices=("torus", "box"), default="torus")
    k.add_argument("--n", type=int, default=128, help="cells per axis")
    k.add_argument("--dim", type=int, choices=(1, 2), default=1)
    k.add_argument("--half-width", type=float, default=6.0, help="box half width")
    k.add_argument("--weight", help="expression in x (and y) for the reference density")
    k.add_argument("--trials", type=int, default=8)
    k.add_argument("--seed", type=int, default=0)
    k.set_defaults(func=cmd_constants)
    return p


def run_command(argv=None) -> int:
    """Parse ``argv`` and dispatch; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {_describe_numerical(exc)}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ErdsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
