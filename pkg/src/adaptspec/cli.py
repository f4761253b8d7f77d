"""Command-line interface: ``adaptspec test | simulate | weights``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical degeneracy.
Results go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import engine
from .bootstrap import BootstrapConfig
from .errors import DataError, DegenerateBandwidthError, FitError
from .models import MODEL_NAMES, get_model
from .simulation import PRESETS, emit_table, load_config, preset, render_text, run_experiment, table_to_csv
from .weights import build_grid, build_weights, parse_family

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MIN_ROWS = 10

logger = logging.getLogger("adaptspec")


@dataclass(frozen=True)
class Dataset:
    """Design rescaled to ``[0, 1]^p`` and untouched response.

    The original coordinate is ``lower + X * (upper - lower)``; a column
    already inside ``[0, 1]`` has ``lower = 0`` and ``upper = 1``.
    """

    X: np.ndarray
    Y: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    header: tuple[str, ...] | None = None

    def original(self) -> np.ndarray:
        """Design on its original scale."""
        return self.lower + self.X * (self.upper - self.lower)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_dataset(path, min_rows: int = MIN_ROWS) -> Dataset:
    """Read a CSV of ``p`` design columns followed by one response column.

    A first row that does not parse as numbers is taken as a header.
    Each design column is mapped affinely onto ``[0, 1]`` by its min and max,
    unless it already lies inside ``[0, 1]``.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh) if any(cell.strip() for cell in row)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header = None
    first_data_line = 1
    if any(cell.strip() and not _is_number(cell) for cell in rows[0]):
        header = tuple(c.strip() for c in rows[0])
        rows = rows[1:]
        first_data_line = 2
    if not rows:
        raise DataError(f"{path} has no data rows")
    width = len(rows[0])
    if width < 2:
        raise DataError(f"{path} needs at least one design column and one response column")
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + first_data_line
        if len(row) != width:
            raise DataError(f"row {line}: expected {width} columns, found {len(row)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            try:
                value = float(cell)
            except ValueError:
                what = "empty cell" if not cell else f"non-numeric cell {cell!r}"
                raise DataError(f"row {line}, column {j + 1}: {what}") from None
            if not math.isfinite(value):
                raise DataError(f"row {line}, column {j + 1}: non-finite value {cell!r}")
            values[i, j] = value
    if values.shape[0] < min_rows:
        raise DataError(f"{path} has {values.shape[0]} rows; at least {min_rows} are required")
    X, Y = values[:, :-1], values[:, -1]
    lower, upper = X.min(axis=0), X.max(axis=0)
    flat = np.flatnonzero(upper == lower)
    if flat.size:
        raise DataError(f"design column {int(flat[0]) + 1} is constant")
    # coordinates already on the unit interval keep the identity map
    unit = (lower >= 0.0) & (upper <= 1.0)
    lower, upper = np.where(unit, 0.0, lower), np.where(unit, 1.0, upper)
    return Dataset((X - lower) / (upper - lower), Y, lower, upper, header)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _mode(text: str) -> int | None:
    if text == "asymptotic":
        return None
    kind, _, arg = text.partition(":")
    if kind == "bootstrap":
        try:
            B = int(arg or "199")
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid bootstrap size in {text!r}") from None
        if B < 1:
            raise argparse.ArgumentTypeError("bootstrap size must be positive")
        return B
    raise argparse.ArgumentTypeError(f"mode must be 'asymptotic' or 'bootstrap:<B>', got {text!r}")


def _family(text: str) -> str:
    try:
        parse_family(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adaptspec", description="Data-driven smooth specification tests for regression models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("test", help="test a parametric regression model on a data file")
    t.add_argument("--data", required=True, help="CSV: design columns then the response")
    t.add_argument("--model", default="linear", choices=MODEL_NAMES)
    t.add_argument("--family", type=_family, default="piecewise:0", help="poly | piecewise:<q> | kernel:<kind> | additive")
    t.add_argument("--h0", type=float, default=0.25)
    t.add_argument("--a", type=float, default=2.0)
    t.add_argument("--Jn", type=int, default=5)
    t.add_argument("--c", type=float, default=1.0)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--mode", type=_mode, default=199, metavar="asymptotic|bootstrap:<B>")
    t.add_argument("--multiplier", default="two-point", choices=["two-point", "two-point-golden", "rademacher", "gaussian"])
    t.add_argument("--variance", default=None, help="rice | local:<b_n> | known:<value> (default: rice for p = 1, local:0.125 otherwise)")
    t.add_argument("--test", dest="variant", default="ours", choices=["ours", "max", "fixed", "selfnorm"])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="write the per-bandwidth table here instead of stdout")

    s = sub.add_parser("simulate", help="Monte Carlo rejection-rate tables")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESETS)
    src.add_argument("--config", help="experiment file (key = value, [scenario.NAME] sections)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--full-scale", action="store_true", help="5000 null / 1000 alternative replications")
    s.add_argument("--null-reps", type=int)
    s.add_argument("--alt-reps", type=int)
    s.add_argument("--B", type=int, help="bootstrap draws per replication")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help="write CSV here and the text rendering next to it")

    w = sub.add_parser("weights", help="export a weight matrix as dense CSV")
    w.add_argument("--data", required=True)
    w.add_argument("--family", type=_family, default="piecewise:0")
    w.add_argument("--h", type=float, required=True)
    w.add_argument("--out")
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _emit(text: str, out: str | None, stdout):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)


def _cmd_test(args, stdout) -> int:
    data = parse_dataset(args.data)
    p = data.X.shape[1]
    model = get_model(args.model, p)
    name, _ = parse_family(args.family)
    variance = args.variance or ("rice" if p == 1 else "local:0.125")
    boot = None if args.mode is None else BootstrapConfig(B=args.mode, multiplier=args.multiplier, seed=args.seed)
    try:
        grid = build_grid(args.h0, args.a, args.Jn, piecewise=(name == "piecewise"))
        cfg = engine.TestConfig(grid=grid, family=args.family, c=args.c, alpha=args.alpha, variance=variance, bootstrap=boot, fit_seed=args.seed)
    except ValueError as exc:
        raise _UsageError(f"adaptspec test: error: {exc}") from None
    pipeline = engine.TestPipeline(data.X, model, cfg)
    runner = {
        "ours": engine.run_test,
        "max": engine.run_max_test,
        "selfnorm": engine.run_selected_self_normalized,
    }.get(args.variant)
    if runner is None:
        outcome = engine.run_fixed_h_test(data.X, data.Y, model, cfg, pipeline=pipeline)
    else:
        outcome = runner(data.X, data.Y, model, cfg, pipeline=pipeline)
    verdict = "REJECT" if outcome.reject else "ACCEPT"
    stdout.write(
        f"{verdict} H0 (model={args.model}, test={args.variant}, alpha={args.alpha:g}): "
        f"statistic={outcome.statistic:.6g} threshold={outcome.threshold:.6g} "
        f"h_selected={outcome.h_selected:.6g} n={data.X.shape[0]}\n"
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["h", "T_h", "v_h_h0", "v_h", "objective"])
    for (h, T, v), vs, obj in zip(outcome.per_h, outcome.v_single, outcome.objective):
        writer.writerow([repr(h), repr(T), repr(v), repr(vs), repr(obj)])
    _emit(buf.getvalue(), args.out, stdout)
    return EXIT_OK


def _cmd_simulate(args, stdout) -> int:
    if args.config:
        try:
            scenarios, variants, settings, seed = load_config(args.config, args.full_scale)
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"bad configuration {args.config}: {exc}") from exc
    else:
        scenarios, variants, settings = preset(args.preset, args.full_scale, args.null_reps, args.alt_reps)
        seed = 0
    if args.seed is not None:
        seed = args.seed
    if args.B is not None:
        settings = replace(settings, B=args.B)
    if args.config and (args.null_reps or args.alt_reps):
        scenarios = [replace(s, replications=(args.null_reps if s.dgp.r == 0 else args.alt_reps) or s.replications) for s in scenarios]
    table = run_experiment(scenarios, variants, settings, seed=seed, jobs=args.jobs)
    failed = sum(table.failures.values())
    if failed:
        print(f"warning: {failed} replicates failed and were excluded: {table.failures}", file=sys.stderr)
    bad = {k: v for k, v in table.violations.items() if v}
    if bad:
        print(f"warning: selection invariant violations: {bad}", file=sys.stderr)
    if args.out:
        csv_path, txt_path = emit_table(table, args.out)
        stdout.write(render_text(table))
        print(f"wrote {csv_path} and {txt_path}", file=sys.stderr)
    else:
        stdout.write(table_to_csv(table))
    return EXIT_OK


def _cmd_weights(args, stdout) -> int:
    data = parse_dataset(args.data)
    W = build_weights(data.X, args.h, args.family)
    if W.degenerate:
        raise DegenerateBandwidthError(f"bandwidth h = {args.h} is degenerate at points {list(W.degenerate_points)[:10]}", args.h, W.degenerate_points)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in W.entries:
        writer.writerow([repr(float(x)) for x in row])
    _emit(buf.getvalue(), args.out, stdout)
    return EXIT_OK


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    command = {"test": _cmd_test, "simulate": _cmd_simulate, "weights": _cmd_weights}[args.command]
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            return command(args, stdout)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # reader went away (e.g. ``| head``); silence the flush at exit
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DegenerateBandwidthError, FitError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
