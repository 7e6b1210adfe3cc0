"""Command-line interface: ``rssanova {fit,predict,risk,simulate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .design import ModelSpec
from .kernel import KernelSpec
from .risk import DENSE_CAP, RiskReport, risk_sweep
from .rounding import Continuous, Nominal, RoundingSpec
from .simharness import BENCHMARK_COLUMNS, FUNCTION_IDS, Scenario, run_benchmark
from .solver import FitResult, NumericalError, bayes_interval, fit, predict

SCHEMA = "rssanova.model/1"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("rssanova")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class ColumnSchema:
    response: Optional[str]
    continuous: list = field(default_factory=list)  # (name, r)
    nominal: list = field(default_factory=list)  # (name, [labels])

    @property
    def predictor_names(self):
        return [c[0] for c in self.continuous] + [c[0] for c in self.nominal]

    def to_dict(self):
        return {
            "response": self.response,
            "continuous": [{"name": n, "r": r} for n, r in self.continuous],
            "nominal": [{"name": n, "levels": levels} for n, levels in self.nominal],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["response"],
            [(c["name"], c["r"]) for c in d["continuous"]],
            [(c["name"], list(c["levels"])) for c in d["nominal"]],
        )


def parse_rounding(item: str):
    """``name:r`` with ``r`` a number or ``none``; bare ``name`` means unrounded."""
    name, sep, value = item.partition(":")
    if not name:
        raise UsageError(f"bad continuous column spec {item!r}")
    if not sep or value.lower() in ("none", "na", ""):
        return name, None
    try:
        r = float(value)
    except ValueError:
        raise UsageError(f"bad rounding parameter in {item!r}") from None
    if not 0.0 < r <= 1.0:
        raise UsageError(f"rounding parameter must be in (0, 1], got {r}")
    return name, r


def parse_r_list(text: str):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok.lower() in ("none", "na"):
            out.append(None)
            continue
        try:
            r = float(tok)
        except ValueError:
            raise UsageError(f"bad rounding value {tok!r}") from None
        if not 0.0 < r <= 1.0:
            raise UsageError(f"rounding parameter must be in (0, 1], got {r}")
        out.append(r)
    return out


def read_table(path):
    """Read a comma-separated file with a header row; returns (header, rows, line numbers)."""
    try:
        fh = sys.stdin if path == "-" else open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows, lines = [], []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            rows.append([c.strip() for c in row])
            lines.append(reader.line_num)
    if not rows:
        raise DataError(f"{path} has no data rows")
    return header, rows, lines


def _column(header, rows, lines, name, path, numeric=True):
    if name not in header:
        raise DataError(f"column {name!r} not found in {path}")
    j = header.index(name)
    if not numeric:
        return [row[j] for row in rows]
    out = np.empty(len(rows))
    for i, (row, line) in enumerate(zip(rows, lines)):
        try:
            out[i] = float(row[j])
        except ValueError:
            raise DataError(f"{path}:{line}: cannot parse {row[j]!r} in column {name!r}") from None
        if not np.isfinite(out[i]):
            raise DataError(f"{path}:{line}: non-finite value in column {name!r}")
    return out


def _level_sort_key(label):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def load_training(path, response, continuous, nominal):
    header, rows, lines = read_table(path)
    y = _column(header, rows, lines, response, path)
    cols, schema = [], ColumnSchema(response)
    for name, r in continuous:
        cols.append(_column(header, rows, lines, name, path))
        schema.continuous.append((name, r))
    for name in nominal:
        labels = _column(header, rows, lines, name, path, numeric=False)
        levels = sorted(set(labels), key=_level_sort_key)
        if len(levels) < 2:
            raise DataError(f"nominal column {name!r} has fewer than 2 levels")
        code = {lab: i + 1 for i, lab in enumerate(levels)}
        cols.append(np.array([code[lab] for lab in labels], dtype=float))
        schema.nominal.append((name, levels))
    if not cols:
        raise UsageError("need at least one predictor column")
    return y, np.column_stack(cols), schema


def load_predictors(path, schema: ColumnSchema):
    header, rows, lines = read_table(path)
    cols = [_column(header, rows, lines, name, path) for name, _ in schema.continuous]
    for name, levels in schema.nominal:
        code = {lab: i + 1 for i, lab in enumerate(levels)}
        labels = _column(header, rows, lines, name, path, numeric=False)
        bad = [(line, lab) for line, lab in zip(lines, labels) if lab not in code]
        if bad:
            line, lab = bad[0]
            raise DataError(f"{path}:{line}: unknown level {lab!r} for nominal column {name!r}")
        cols.append(np.array([code[lab] for lab in labels], dtype=float))
    return np.column_stack(cols), lines


def build_specs(schema: ColumnSchema, order=2, knots=None, seed=0, interactions=False):
    entries, kernels = [], []
    for name, r in schema.continuous:
        entries.append(Continuous(r))
        kernels.append(KernelSpec.polynomial(order))
    for name, levels in schema.nominal:
        entries.append(Nominal(len(levels)))
        kernels.append(KernelSpec.nominal(len(levels)))
    names = schema.predictor_names
    builder = ModelSpec.two_way if interactions and len(kernels) > 1 else ModelSpec.additive
    return RoundingSpec(entries), builder(kernels, q=knots, seed=seed, names=names)


def atomic_write(path, text):
    if path == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def to_csv(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def model_document(result: FitResult, schema: ColumnSchema) -> str:
    doc = {"schema": SCHEMA, "columns": schema.to_dict(), "fit": result.to_dict()}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None
    if doc.get("schema") != SCHEMA:
        raise DataError(f"{path} is not a {SCHEMA} document")
    return FitResult.from_dict(doc["fit"]), ColumnSchema.from_dict(doc["columns"])


def cmd_fit(args):
    continuous = [parse_rounding(c) for c in args.continuous]
    y, X, schema = load_training(args.data, args.response, continuous, args.nominal)
    rounding, model = build_specs(schema, args.order, args.knots, args.seed, args.interactions)
    result = fit(y, X, rounding, model, lam=args.lam)
    atomic_write(args.out, model_document(result, schema))
    theta = " ".join(f"{lab}={t:.6g}" for lab, t in zip(model.term_labels(), result.theta))
    print(f"n={result.n} u={result.u} q={result.q}")
    print(f"lambda={result.lam:.6g} theta: {theta}")
    print(f"GCV={result.gcv:.6g} edf={result.edf:.4f} sigma2={result.sigma2_hat:.6g} R2={result.r2:.4f}")
    print(f"model written to {args.out}")
    return EXIT_OK


def _grid(result: FitResult, schema: ColumnSchema, size):
    axes = []
    for j, _ in enumerate(schema.continuous):
        axes.append(np.linspace(result.lower[j], result.upper[j], size))
    for _, levels in schema.nominal:
        axes.append(np.arange(1, len(levels) + 1, dtype=float))
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(axes))


def _check_range(result: FitResult, X, lines, path):
    for j, e in enumerate(result.rounding.entries):
        if isinstance(e, Nominal):
            continue
        lo, hi = result.lower[j], result.upper[j]
        tol = 1e-12 * (hi - lo)
        bad = np.flatnonzero((X[:, j] < lo - tol) | (X[:, j] > hi + tol))
        if len(bad):
            where = ", ".join(str(lines[i]) for i in bad[:10])
            more = "" if len(bad) <= 10 else f" and {len(bad) - 10} more"
            raise DataError(f"{path}: rows outside the training range [{lo!r}, {hi!r}] "
                            f"of column {result.model.names[j]!r} at lines {where}{more}")


def cmd_predict(args):
    result, schema = load_model(args.model)
    if (args.data is None) == (args.grid is None):
        raise UsageError("give exactly one of --data or --grid")
    if args.grid is not None:
        if args.grid < 2:
            raise UsageError("--grid needs at least 2 points")
        X = _grid(result, schema, args.grid)
    else:
        X, lines = load_predictors(args.data, schema)
        _check_range(result, X, lines, args.data)
    yhat = predict(result, X)
    names = schema.predictor_names
    columns = names + ["yhat"]
    if args.level is not None:
        half = bayes_interval(result, X, args.level)
        columns += ["lower", "upper"]
    rows = []
    n_cont = len(schema.continuous)
    for i in range(len(X)):
        row = {name: float(X[i, j]) for j, name in enumerate(names[:n_cont])}
        for k, (name, levels) in enumerate(schema.nominal):
            row[name] = levels[int(X[i, n_cont + k]) - 1]
        row["yhat"] = float(yhat[i])
        if args.level is not None:
            row["lower"] = float(yhat[i] - half[i])
            row["upper"] = float(yhat[i] + half[i])
        rows.append(row)
    atomic_write(args.out, to_csv(columns, rows))
    return EXIT_OK


def cmd_risk(args):
    continuous = [parse_rounding(c) for c in args.continuous]
    r_values = parse_r_list(args.r_values)
    if args.n_tilde > args.dense_cap:
        raise UsageError(f"--n-tilde {args.n_tilde} exceeds the dense cap of {args.dense_cap}")
    y, X, schema = load_training(args.data, args.response, continuous, args.nominal)
    rounding, model = build_specs(schema, args.order, args.knots, args.seed, args.interactions)
    report = risk_sweep(y, X, model, rounding, r_values, n_tilde=args.n_tilde,
                        replications=args.reps, seed=args.seed, snr=args.snr,
                        dense_cap=args.dense_cap)
    atomic_write(args.out, to_csv(RiskReport.COLUMNS, report.rows + report.summary_rows()))
    for row in report.summary_rows():
        print(f"r={_fmt(row['r'])} median risk={row['risk_hat']:.6g} "
              f"rel bound={row['rel_risk_bound']:.6g}")
    return EXIT_OK


def cmd_simulate(args):
    fns = [f.strip() for f in args.fn.split(",")]
    for fn in fns:
        if fn not in FUNCTION_IDS:
            raise UsageError(f"unknown function id {fn!r}; expected one of {', '.join(FUNCTION_IDS)}")
    try:
        sizes = [int(v) for v in args.n.split(",")]
    except ValueError:
        raise UsageError(f"bad --n list {args.n!r}") from None
    r_values = parse_r_list(args.r)
    rows = []
    for fn, n, r in itertools.product(fns, sizes, r_values):
        sc = Scenario(fn=fn, n=n, r=r, q=args.q, sigma=args.sigma,
                      replications=args.reps, seed=args.seed)
        scenario_rows = run_benchmark(sc)
        rows.extend(scenario_rows)
        med = scenario_rows[-1]
        print(f"{fn} n={n} r={_fmt(r)}: median MSE={med['mse']:.3e} "
              f"median runtime={med['runtime_s']:.3f}s")
    atomic_write(args.out, to_csv(BENCHMARK_COLUMNS, rows))
    return EXIT_OK


def _add_columns(p):
    p.add_argument("--data", required=True, help="comma-separated input with header")
    p.add_argument("--response", required=True)
    p.add_argument("--continuous", action="append", default=[], metavar="NAME[:R]",
                   help="continuous predictor with optional rounding parameter (repeatable)")
    p.add_argument("--nominal", action="append", default=[], metavar="NAME",
                   help="nominal predictor (repeatable)")
    p.add_argument("--order", type=int, default=2, choices=(1, 2, 3),
                   help="polynomial spline order m (2 = cubic)")
    p.add_argument("--knots", type=int, default=None, help="knot count q")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--interactions", action="store_true", help="add all two-way interactions")


def build_parser():
    parser = _Parser(prog="rssanova", description="Smoothing spline ANOVA with rounding parameters")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model and write the model document")
    _add_columns(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="fix lambda instead of minimizing GCV")
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict from a model document")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--grid", type=int, default=None, metavar="G",
                   help="G evenly spaced points per continuous predictor")
    p.add_argument("--level", type=float, default=None,
                   help="add Bayesian interval bounds at this level")
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("risk", help="subsample rounding-risk sweep")
    _add_columns(p)
    p.add_argument("--r-values", default="0.01,0.02,0.05")
    p.add_argument("--n-tilde", type=int, default=500)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--snr", type=float, default=None,
                   help="known signal-to-noise ratio (estimated when omitted)")
    p.add_argument("--dense-cap", type=int, default=DENSE_CAP)
    p.add_argument("--out", default="risk.csv")
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("simulate", help="simulation benchmark")
    p.add_argument("--fn", default="A1", help="function ids, comma-separated")
    p.add_argument("--n", default="10000", help="sample sizes, comma-separated")
    p.add_argument("--r", default="0.01", help="rounding parameters, comma-separated (none = unrounded)")
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="benchmark.csv")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rssanova: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"rssanova: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"rssanova: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"rssanova: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
