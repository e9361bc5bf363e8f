"""Command-line interface.

Subcommands write CSV (or a plain-text schedule table) to ``--out`` or stdout.
Relative output paths are placed under $RLOBJECTIVE_OUT_DIR when it is set.
Every subcommand also accepts ``--config FILE.toml`` whose keys mirror the long
flag names (dashes or underscores); explicit flags win over file values.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateScheduleError,
    DivergenceError,
    DomainError,
    ObjectiveUndefinedError,
)
from .policy import TabularPolicy, load_corpus, load_policy, p_correct, save_policy, tomllib
from .schedule import (
    BERNSTEIN_TARGETS,
    SINGULAR_TARGETS,
    bernstein_fit,
    bernstein_poly,
    grpo,
    mean_of_correct,
    parse_schedule_spec,
    poly_derivative,
    schedule_to_table,
)
from .specfun import RefTransform, harmonic, normalized_arcsin
from .trainer import TrainerConfig, train
from .transform import (
    SWEEP_HEADER,
    eval_h,
    eval_kappa,
    fmt_float,
    induced,
    sweep,
    uniform_grid,
    write_sweep_csv,
)
from .verify import run_checks

OUT_DIR_ENV = "RLOBJECTIVE_OUT_DIR"
EXIT_OK, EXIT_VERIFY_FAILED, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("rlobjective")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# Reference curves for `curves`. "arcsin" is the [0,1]-normalized (2/pi) arcsin(sqrt t).
def _ref_value(name: str, t: float) -> float | None:
    try:
        if name == "arcsin":
            return normalized_arcsin(t)
        return RefTransform(name).evaluate(t)
    except ObjectiveUndefinedError:
        return None


def _ref_derivative(name: str, t: float) -> float | None:
    try:
        if name == "arcsin":
            return RefTransform.TWO_ARCSIN_SQRT.derivative(t) / math.pi
        return RefTransform(name).derivative(t)
    except ObjectiveUndefinedError:
        return None


REF_NAMES = ("identity", "log", "arcsin", "logit")
NORMALIZED_REFS = {"identity", "arcsin"}


@contextlib.contextmanager
def _open_out(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
        return
    p = Path(path)
    base = os.environ.get(OUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        fh = open(p, "w", newline="")
    except OSError as exc:
        raise ConfigurationError(f"cannot write {p}: {exc}") from None
    with fh:
        yield fh


def _grid(args, lo_default: float = 0.0) -> list[float]:
    lo = lo_default if args.grid_min is None else args.grid_min
    hi = 1.0 if args.grid_max is None else args.grid_max
    if not (0.0 <= lo <= hi <= 1.0) or args.grid_points < 1:
        raise ConfigurationError("grid must satisfy 0 <= grid-min <= grid-max <= 1 with >= 1 point")
    return uniform_grid(args.grid_points, lo, hi)


def _add_grid(p: argparse.ArgumentParser, points: int = 101) -> None:
    p.add_argument("--grid-points", type=int, default=points)
    p.add_argument("--grid-min", type=float, default=None)
    p.add_argument("--grid-max", type=float, default=None)


# --- subcommands ---------------------------------------------------------

def cmd_curves(args) -> int:
    schedules = [parse_schedule_spec(s) for s in args.schedule]
    grid = _grid(args)
    with _open_out(args.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = list(SWEEP_HEADER)
        if args.ref:
            header += ["ref", "ref_value", "difference"]
        writer.writerow(header)
        for sched in schedules:
            rows = sweep(induced(sched), grid)
            if args.normalize and rows and rows[0].h_normalized is None:
                raise DegenerateScheduleError(f"{sched.label}: h_M(1) = 0, cannot normalize")
            for r in rows:
                line = [r.label, r.M, fmt_float(r.eps), fmt_float(r.t), fmt_float(r.h),
                        fmt_float(r.kappa), fmt_float(r.h_normalized)]
                if args.ref:
                    ref = _ref_value(args.ref, r.t)
                    mine = r.h_normalized if args.normalize else r.h
                    diff = None if ref is None else mine - ref
                    line += [args.ref, fmt_float(ref), fmt_float(diff)]
                writer.writerow(line)
        if not args.no_refs:
            for name in REF_NAMES:
                for t in grid:
                    v = _ref_value(name, t)
                    line = [f"ref:{name}", "", "", fmt_float(t), fmt_float(v),
                            fmt_float(_ref_derivative(name, t)),
                            fmt_float(v if name in NORMALIZED_REFS else None)]
                    if args.ref:
                        line += ["", "", ""]
                    writer.writerow(line)
    return EXIT_OK


def cmd_grpo_sweep(args) -> int:
    grid = _grid(args)
    rows = []
    for M in args.M:
        for eps in args.eps:
            rows.extend(sweep(induced(grpo(M, eps, args.variance)), grid))
    with _open_out(args.out) as fh:
        write_sweep_csv(rows, fh)
    return EXIT_OK


def cmd_rejection_compare(args) -> int:
    grid = _grid(args, lo_default=0.01)
    if grid[0] <= 0.0:
        raise ConfigurationError("rejection-compare needs grid-min > 0 (log t diverges at 0)")
    with _open_out(args.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("M", "t", "h", "log_plus_harmonic", "difference"))
        for M in args.M:
            tr = induced(mean_of_correct(M))
            H = harmonic(M)
            for t in grid:
                h = eval_h(tr, t)
                ref = math.log(t) + H
                writer.writerow((M, fmt_float(t), fmt_float(h), fmt_float(ref), fmt_float(h - ref)))
    return EXIT_OK


def _load_hprime_table(path: str):
    ts, vs = [], []
    with open(path, newline="") as fh:
        for i, rec in enumerate(csv.DictReader(fh), start=2):
            try:
                ts.append(float(rec["t"]))
                vs.append(float(rec["hprime"]))
            except (KeyError, TypeError, ValueError):
                raise ConfigurationError(f"{path}:{i}: expected numeric columns t,hprime") from None
    if len(ts) < 2 or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigurationError(f"{path}: need >= 2 rows with strictly increasing t")
    ts_arr, vs_arr = np.array(ts), np.array(vs)
    return lambda t: float(np.interp(t, ts_arr, vs_arr))


def cmd_bernstein(args) -> int:
    chosen = [x for x in (args.target, args.poly, args.hprime_file) if x is not None]
    if len(chosen) != 1:
        raise ConfigurationError("give exactly one of --target, --poly, --hprime-file")
    M = args.M
    if args.poly is not None:
        try:
            coeffs = poly_derivative([float(c) for c in args.poly.replace(",", ";").split(";")])
        except ValueError:
            raise ConfigurationError(f"bad polynomial {args.poly!r}") from None
        hprime = lambda t: math.fsum(c * t**k for k, c in enumerate(coeffs))  # noqa: E731
        build = lambda m: bernstein_poly(m, coeffs)  # noqa: E731
        singular = False
    else:
        if args.target is not None:
            hprime = BERNSTEIN_TARGETS[args.target]
            singular = args.target in SINGULAR_TARGETS
            label = f"bernstein_{args.target}"
        else:
            hprime = _load_hprime_table(args.hprime_file)
            singular = False
            label = "bernstein_table"
        clip_for = lambda m: (0.5 / m if singular else 0.0) if args.clip is None else args.clip  # noqa: E731
        build = lambda m: bernstein_fit(m, hprime, split=args.split, clip=clip_for(m), label=label)  # noqa: E731
    # Singular targets are compared on an interior window.
    lo = args.grid_min if args.grid_min is not None else (0.05 if singular else 0.0)
    hi = args.grid_max if args.grid_max is not None else (0.95 if singular else 1.0)
    grid = uniform_grid(args.grid_points, lo, hi)

    def sup_error(m: int) -> float:
        tr = induced(build(m))
        return max(abs(eval_kappa(tr, t) - hprime(t)) for t in grid)

    sched = build(M)
    err, err2 = sup_error(M), sup_error(2 * M)
    with _open_out(args.out) as fh:
        fh.write(schedule_to_table(sched))
    ratio = err / err2 if err2 > 0 else math.inf
    print(f"# sup|kappa - h'| on [{lo:g}, {hi:g}] ({len(grid)} points): M={M}: {err:.6g}; "
          f"M={2 * M}: {err2:.6g}; doubling ratio {ratio:.4g}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_checks(budget=args.budget, seed=args.seed)
    with _open_out(args.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("check", "status", "worst", "tolerance", "detail"))
        for r in results:
            writer.writerow((r.name, "PASS" if r.passed else "FAIL", fmt_float(r.worst),
                             fmt_float(r.tolerance), r.detail))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY_FAILED


def _objective_from_name(name: str | None):
    if name is None or name == "induced":
        return None
    try:
        return RefTransform(name)
    except ValueError:
        raise ConfigurationError(f"unknown objective {name!r}") from None


def cmd_train(args) -> int:
    if args.corpus is None:
        raise ConfigurationError("train needs --corpus")
    corpus = load_corpus(args.corpus)
    if args.mode == "algorithm1":
        if args.schedule is None:
            raise ConfigurationError("algorithm1 mode needs --schedule")
        cfg = TrainerConfig(schedule=parse_schedule_spec(args.schedule), eta=args.eta,
                            steps=args.steps, seed=args.seed, log_every=args.log_every,
                            objective=_objective_from_name(args.objective))
    else:
        if args.B is None:
            raise ConfigurationError("rejection mode needs --B")
        cfg = TrainerConfig(mode="rejection", B=args.B, max_attempts=args.max_attempts,
                            eta=args.eta, steps=args.steps, seed=args.seed,
                            log_every=args.log_every,
                            objective=_objective_from_name(args.objective))
    if args.init:
        with open(args.init, newline="") as fh:
            pol = load_policy(fh, corpus)
    else:
        pol = TabularPolicy.zeros(corpus)
    traj = train(pol, corpus, cfg)
    with _open_out(args.out) as fh:
        traj.write_csv(fh)
    if args.checkpoint:
        with _open_out(args.checkpoint) as fh:
            save_policy(pol, fh)
    for task in corpus:
        log.info("final p_correct[%s] = %.6f", task.id, p_correct(pol, task))
    return EXIT_OK


# --- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rlobjective", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, func, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="TOML file with default flag values")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.set_defaults(func=func)
        return p

    p = add("curves", cmd_curves, "h_M, kappa and h_M/h_M(1) for schedules plus reference curves")
    p.add_argument("--schedule", action="append", default=None,
                   help="schedule spec name:key=value,... (repeatable)")
    p.add_argument("--ref", choices=REF_NAMES, default=None,
                   help="add a difference column against this reference")
    p.add_argument("--normalize", action="store_true",
                   help="difference uses h_M/h_M(1) instead of h_M")
    p.add_argument("--no-refs", action="store_true", help="omit the reference-curve rows")
    _add_grid(p)

    p = add("grpo-sweep", cmd_grpo_sweep, "normalized GRPO transforms over an (M, eps) grid")
    p.add_argument("--M", type=int, nargs="+", default=[4, 16, 64, 256])
    p.add_argument("--eps", type=float, nargs="+", default=[1e-4, 1e-2, 1e-1, 1.0])
    p.add_argument("--variance", choices=("population", "sample"), default="population")
    _add_grid(p)

    p = add("rejection-compare", cmd_rejection_compare,
            "mean-of-correct transform against log t + H_M")
    p.add_argument("--M", type=int, nargs="+", default=[1, 2, 4, 8, 16, 64])
    _add_grid(p, points=100)

    p = add("bernstein", cmd_bernstein, "synthesize a schedule whose transform approximates h")
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--target", choices=sorted(BERNSTEIN_TARGETS), default=None)
    p.add_argument("--poly", default=None, help="coefficients of h, lowest degree first, ';'-separated")
    p.add_argument("--hprime-file", default=None, help="CSV with columns t,hprime")
    p.add_argument("--clip", type=float, default=None,
                   help="clamp nodes into [clip, 1-clip] (default 0.5/M for singular targets)")
    p.add_argument("--split", choices=("zero", "centered"), default="zero")
    _add_grid(p)

    p = add("verify", cmd_verify, "run the exact oracle suite")
    p.add_argument("--budget", type=int, default=10**5, help="max answer tuples per enumeration")
    p.add_argument("--seed", type=int, default=None, help="seed for the random test policies")

    p = add("train", cmd_train, "stochastic gradient ascent on a TOML corpus")
    p.add_argument("--corpus", default=None)
    p.add_argument("--mode", choices=("algorithm1", "rejection"), default="algorithm1")
    p.add_argument("--schedule", default=None)
    p.add_argument("--B", type=int, default=None)
    p.add_argument("--max-attempts", type=int, default=10_000)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log-every", type=int, default=1)
    p.add_argument("--objective", default=None,
                   help="logged objective: induced (default), identity, log, two_arcsin_sqrt, logit")
    p.add_argument("--init", default=None, help="initial policy checkpoint CSV")
    p.add_argument("--checkpoint", default=None, help="write the final policy here")
    return parser


STOCHASTIC = {"verify", "train"}


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        with open(args.config, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
    section = doc.get(args.command, doc)
    subparser = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
    known = {a.dest for a in subparser._actions}
    defaults = {}
    for key, value in section.items():
        if isinstance(value, dict):
            continue
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "func", "help"):
            raise ConfigurationError(f"unknown config key {key!r} for {args.command}")
        if dest == "schedule" and args.command == "curves" and isinstance(value, str):
            value = [value]
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(message)s")
        if args.command in STOCHASTIC and args.seed is None:
            raise UsageError(f"{args.command} requires --seed")
        if args.command == "curves" and not args.schedule:
            raise UsageError("curves needs at least one --schedule")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, DomainError, DegenerateScheduleError, DivergenceError,
            ObjectiveUndefinedError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
