"""Command-line interface: ``nndm <subcommand> ...``.

Every output file is written through a temporary file in the destination
directory and renamed into place only after all outputs of the run have been
produced, so a failed run leaves no partial files behind.  Each artifact
carries the resolved run configuration and the library version.
"""

import argparse
import csv
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .classifier import brier_score, fit_classifier, predict_proba, roc_auc, sensitivity_specificity
from .cv import DEFAULT_GRID, cv_delta0
from .estimator import FitOptions, auto_grid, density_on_grid, dumps_model, fit, load_model
from .estimator import FittedModel
from .evaluation import coverage_experiment, get_density, k_sweep, l1_error
from .exceptions import InvalidDataError, InvalidParameterError, NNDMError
from .hyper import default_hyperparameters

THREADS_ENV = "NNDM_THREADS"

# options that only say where results go or how fast they are computed
_NOT_ECHOED = {"output", "report", "metrics", "threads", "func"}


class CliError(Exception):
    """A user-facing error; the message is printed without a traceback."""


# --- input ------------------------------------------------------------------


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_csv(path):
    """Read a numeric CSV.  Returns ``(header or None, rows)`` with ``rows`` as floats.

    A first row with any non-numeric field is taken as a header.  Blank lines
    and lines starting with ``#`` are skipped.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot open {path}: {exc.strerror}") from exc
    header, rows, width = None, [], None
    with fh:
        reader = csv.reader(fh)
        try:
            for record in reader:
                line = reader.line_num
                if not record or (len(record) == 1 and not record[0].strip()):
                    continue
                if record[0].lstrip().startswith("#"):
                    continue
                fields = [f.strip() for f in record]
                if header is None and not rows and not all(_is_number(f) for f in fields):
                    header = fields
                    width = len(fields)
                    continue
                if width is None:
                    width = len(fields)
                if len(fields) != width:
                    raise CliError(f"{path}: line {line}: expected {width} columns, found {len(fields)}")
                values = []
                for col, f in enumerate(fields, start=1):
                    try:
                        v = float(f)
                    except ValueError:
                        raise CliError(f"{path}: line {line}, column {col}: cannot parse {f!r} as a number") from None
                    if not math.isfinite(v):
                        raise CliError(f"{path}: line {line}, column {col}: value {f!r} is not finite")
                    values.append(v)
                rows.append(values)
        except UnicodeDecodeError as exc:
            raise CliError(f"{path}: not valid UTF-8 ({exc.reason})") from exc
        except csv.Error as exc:
            raise CliError(f"{path}: line {reader.line_num}: {exc}") from exc
    if not rows:
        raise CliError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def _label_index(header, spec, width, path):
    if spec is None:
        return width - 1
    try:
        idx = int(spec)
    except ValueError:
        if header is None or spec not in header:
            raise CliError(f"{path}: no label column named {spec!r}") from None
        return header.index(spec)
    if not -width <= idx < width:
        raise CliError(f"{path}: label column index {idx} out of range for {width} columns")
    return idx % width


def read_labeled(path, label_column):
    header, data = read_csv(path)
    if data.shape[1] < 2:
        raise CliError(f"{path}: need at least one feature column and a label column")
    j = _label_index(header, label_column, data.shape[1], path)
    y = data[:, j]
    if not np.all((y == 0) | (y == 1)):
        bad = sorted(set(y[(y != 0) & (y != 1)].tolist()))[:3]
        raise CliError(f"{path}: label column must contain only 0 and 1, found {bad}")
    return np.delete(data, j, axis=1), y.astype(int)


def parse_range(text, what):
    """``lo:hi:steps`` -> ``(lo, hi, steps)``."""
    parts = text.split(":")
    try:
        lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
        if len(parts) != 3:
            raise ValueError
    except (ValueError, IndexError):
        raise CliError(f"{what} must look like LO:HI:STEPS, got {text!r}") from None
    if steps < 1 or not lo <= hi:
        raise CliError(f"{what}: need LO <= HI and STEPS >= 1, got {text!r}")
    return lo, hi, steps


def _number_or(text, word):
    if text is None or text == word:
        return text
    try:
        return float(text)
    except ValueError:
        raise CliError(f"expected a number or {word!r}, got {text!r}") from None


# --- output -----------------------------------------------------------------


class Outputs:
    """Collects output files and commits them all at once."""

    def __init__(self):
        self._pending = []

    def add(self, path, text):
        if path is None:
            return
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(prefix=".nndm-", suffix=".tmp", dir=directory)
        self._pending.append((tmp, path))
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def commit(self):
        for tmp, path in self._pending:
            os.replace(tmp, path)
        self._pending = []

    def discard(self):
        for tmp, _ in self._pending:
            try:
                os.unlink(tmp)
            except OSError:
                pass
        self._pending = []


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def to_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _fmt(v):
    return repr(float(v))


def to_csv(columns, rows, echo):
    lines = [f"# nndm {__version__} config: {json.dumps(_jsonable(echo), sort_keys=True)}", ",".join(columns)]
    lines.extend(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def run_config(args):
    cfg = {k: v for k, v in vars(args).items() if k not in _NOT_ECHOED}
    return cfg


def _artifact(args, **payload):
    return {"library_version": __version__, "config": run_config(args), **payload}


def _threads(args):
    return args.threads if args.threads and args.threads > 0 else None


# --- subcommands ------------------------------------------------------------


def _fit_options(args, n, p):
    delta = "cv" if getattr(args, "cv_delta0", False) else _number_or(args.delta0sq, "cv")
    grid = None
    if args.cv_grid:
        lo, hi, steps = parse_range(args.cv_grid, "--cv-grid")
        if lo <= 0:
            raise CliError("--cv-grid bounds must be positive")
        grid = tuple(np.logspace(math.log10(lo), math.log10(hi), steps).tolist())
    k = args.k
    if k is not None and n < max(3, k):
        raise CliError(f"n = {n} observations is too few for k = {k} (need n >= max(3, k))")
    return FitOptions(k=k, delta0sq=delta, cv_grid=grid, alpha=_number_or(args.alpha, "auto"), seed=args.seed)


def cmd_fit(args, out):
    _, X = read_csv(args.input)
    options = _fit_options(args, *X.shape)
    model = fit(X, options)
    model = FittedModel(model.hyper, model.mu, model.psi, {**model.provenance, "run_config": run_config(args)})
    h = model.hyper
    report = _artifact(
        args,
        n=model.n,
        p=model.p,
        k=h.k,
        delta0sq=h.delta0sq,
        delta0sq_source=model.provenance["delta0sq_source"],
        alpha=h.alpha,
        alpha_source=model.provenance["alpha_source"],
    )
    if "cv_grid" in model.provenance:
        report["cv"] = {"grid": model.provenance["cv_grid"], "scores": model.provenance["cv_scores"]}
    out.add(args.output, dumps_model(model))
    out.add(args.report, to_json(report))
    if args.report is None:
        sys.stdout.write(to_json(report))


def _grid(args, p):
    chosen = [g for g in (args.grid, args.grid_auto, args.grid_data) if g]
    if len(chosen) != 1:
        raise CliError("give exactly one of --grid, --grid-auto, --grid-data")
    if args.grid:
        _, G = read_csv(args.grid)
        if G.shape[1] != p:
            raise CliError(f"grid has {G.shape[1]} columns but the model has p = {p}")
        return G
    if p != 1:
        raise CliError("--grid-auto and --grid-data are only available for p = 1; use --grid")
    if args.grid_auto:
        lo, hi, steps = parse_range(args.grid_auto, "--grid-auto")
        return np.linspace(lo, hi, steps)[:, None]
    _, D = read_csv(args.grid_data)
    return auto_grid(D, steps=args.steps)[:, None]


def _load(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(f"cannot open {path}: {exc.strerror}") from exc


def cmd_density(args, out):
    model = _load(args.model)
    G = _grid(args, model.p)
    table = density_on_grid(model, G, M=args.draws, level=args.level, seed=args.seed)
    xcols = [f"x{j + 1}" for j in range(model.p)]
    if args.draws:
        cols = xcols + ["mean", "lo", "hi", "mc_mean"]
        rows = [list(x) + [m, lo, hi, mc] for x, m, lo, hi, mc in zip(G, table.mean, table.lo, table.hi, table.mc_mean)]
    else:
        cols = xcols + ["mean"]
        rows = [list(x) + [m] for x, m in zip(G, table.mean)]
    text = to_csv(cols, rows, _artifact(args))
    if args.output:
        out.add(args.output, text)
    else:
        sys.stdout.write(text)


def cmd_sample(args, out):
    model = _load(args.model)
    G = _grid(args, model.p)
    values = model.sample(args.draws, args.seed).evaluate(G)
    cols = ["draw"] + [f"x{j + 1}" for j in range(model.p)] + ["density"]
    rows = [[str(t)] + list(x) + [values[t, i]] for t in range(values.shape[0]) for i, x in enumerate(G)]
    text = to_csv(cols, rows, _artifact(args))
    if args.output:
        out.add(args.output, text)
    else:
        sys.stdout.write(text)


def cmd_cv(args, out):
    _, X = read_csv(args.input)
    n, p = X.shape
    base = default_hyperparameters(n, p)
    k = base.k if args.k is None else args.k
    grid = DEFAULT_GRID
    if args.cv_grid:
        lo, hi, steps = parse_range(args.cv_grid, "--cv-grid")
        if lo <= 0:
            raise CliError("--cv-grid bounds must be positive")
        grid = np.logspace(math.log10(lo), math.log10(hi), steps)
    res = cv_delta0(X, k, base, grid)
    report = _artifact(args, n=n, p=p, k=k, grid=res.grid, scores=res.scores, best=res.best, best_score=res.best_score)
    out.add(args.output, to_json(report))
    if args.output is None:
        sys.stdout.write(to_json(report))


def cmd_classify(args, out):
    Xtr, ytr = read_labeled(args.train, args.label_column)
    header, test = read_csv(args.test)
    if test.shape[1] == Xtr.shape[1] + 1:
        Xte, yte = read_labeled(args.test, args.label_column)
    elif test.shape[1] == Xtr.shape[1]:
        Xte, yte = test, None
    else:
        raise CliError(f"test file has {test.shape[1]} columns; expected {Xtr.shape[1]} features (plus optional label)")
    priors = None
    if args.priors:
        try:
            priors = tuple(float(v) for v in args.priors.split(","))
        except ValueError:
            raise CliError(f"--priors must look like P0,P1, got {args.priors!r}") from None
        if len(priors) != 2:
            raise CliError(f"--priors must look like P0,P1, got {args.priors!r}")
    options = _fit_options(args, *Xtr.shape)
    model = fit_classifier(Xtr, ytr, options, priors=priors, standardize=args.standardize)
    prob, flags = predict_proba(model, Xte, return_flags=True)
    draws = predict_proba(model, Xte, mode="draws", M=args.draws, seed=args.seed) if args.draws else None

    cols = ["prob", "flag"] + (["label"] if yte is not None else [])
    cols += [f"draw_{t + 1}" for t in range(args.draws)]
    rows = []
    for i in range(Xte.shape[0]):
        row = [prob[i], str(int(flags[i]))]
        if yte is not None:
            row.append(str(int(yte[i])))
        if draws is not None:
            row.extend(draws[:, i])
        rows.append(row)
    out.add(args.output, to_csv(cols, rows, _artifact(args)))

    metrics = {"n_test": int(Xte.shape[0]), "priors": list(model.priors), "prior_source": model.prior_source,
               "flagged": int(flags.sum())}
    if yte is not None:
        sens, spec = sensitivity_specificity(prob, yte)
        metrics.update(sensitivity=sens, specificity=spec, threshold=0.5)
        metrics["accuracy"] = float(((prob >= 0.5).astype(int) == yte).mean())
        if 0 < yte.sum() < yte.size:
            metrics["auc"] = roc_auc(prob, yte).auc
        per, mean = brier_score(draws if draws is not None else prob[None, :], yte)
        metrics["brier_mean"] = mean
        metrics["brier_source"] = "draws" if draws is not None else "mean"
    text = to_json(_artifact(args, metrics=metrics))
    out.add(args.metrics, text)
    if args.metrics is None:
        sys.stdout.write(text)


def _report(args, out, payload, csv_cols, csv_rows):
    text = to_json(_artifact(args, **payload))
    out.add(args.output, text)
    if args.csv:
        out.add(args.csv, to_csv(csv_cols, csv_rows, _artifact(args)))
    if args.output is None:
        sys.stdout.write(text)


def _density_arg(args):
    return get_density(args.density, args.p)


def cmd_bench(args, out):
    d = _density_arg(args)
    delta = _number_or(args.delta0sq, "cv")
    options = FitOptions(k=args.k, delta0sq=delta)
    rep = l1_error(d, options, n=args.n, n_t=args.nt, R=args.reps, seed=args.seed, n_jobs=_threads(args))
    rows = [[str(r), v] for r, v in enumerate(rep.replicates)]
    _report(args, out, {"l1": rep.to_dict()}, ["replicate", "l1"], rows)


def cmd_coverage(args, out):
    d = _density_arg(args)
    rep = coverage_experiment(
        d, n=args.n, n_t=args.nt, R_cov=args.reps, k=args.k, level=args.level, seed=args.seed, M=args.draws,
        n_jobs=_threads(args),
    )
    rows = [[str(r), c, ln] for r, (c, ln) in enumerate(zip(rep.coverage_per_rep, rep.length_per_rep))]
    _report(args, out, {"coverage": rep.to_dict()}, ["replicate", "coverage", "length"], rows)


def cmd_k_sweep(args, out):
    d = _density_arg(args)
    try:
        ks = [int(v) for v in args.k_values.split(",")]
    except ValueError:
        raise CliError(f"--k-values must be a comma-separated list of integers, got {args.k_values!r}") from None
    tab = k_sweep(d, n=args.n, n_t=args.nt, k_values=ks, seed=args.seed, reps=args.reps, n_jobs=_threads(args))
    payload = {"k_sweep": {"k": tab.k, "mean_oosll": tab.mean_oosll, "per_rep": tab.per_rep}}
    _report(args, out, payload, ["k", "mean_oosll"], [[str(k), v] for k, v in tab.rows()])


# --- parser -----------------------------------------------------------------


def _default_threads():
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            pass
    return os.cpu_count() or 1


def _add_fit_flags(p):
    p.add_argument("--k", type=int, help="neighborhood size (default: rule based on n and p)")
    p.add_argument("--delta0sq", default=None, help="prior scale, a number or 'cv' (default 1)")
    p.add_argument("--cv-delta0", action="store_true", help="shorthand for --delta0sq cv")
    p.add_argument("--cv-grid", help="log-spaced CV grid LO:HI:STEPS (default 1e-3:1e2:25)")
    p.add_argument("--alpha", default=None, help="Dirichlet concentration, a number or 'auto' (default 0)")


def _add_grid_flags(p):
    p.add_argument("--grid", help="CSV of evaluation points, one per row")
    p.add_argument("--grid-auto", help="regular grid LO:HI:STEPS (p = 1)")
    p.add_argument("--grid-data", help="CSV of data; grid spans its range +/- 3 sample SDs (p = 1)")
    p.add_argument("--steps", type=int, default=200, help="grid size with --grid-data (default 200)")


def _add_density_flags(p, n, nt, reps):
    p.add_argument("--density", required=True, help="test density: gs, mg, t or cw")
    p.add_argument("--p", type=int, default=1, help="dimension (default 1)")
    p.add_argument("--n", type=int, default=n)
    p.add_argument("--nt", type=int, default=nt)
    p.add_argument("--reps", type=int, default=reps)
    p.add_argument("--csv", help="also write a per-replicate CSV table here")


def build_parser():
    parser = argparse.ArgumentParser(prog="nndm", description="Nearest neighbor-Dirichlet mixture density estimation.")
    parser.add_argument("--version", action="version", version=f"nndm {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument(
        "--threads", type=int, default=_default_threads(),
        help=f"worker threads for replicated experiments (default ${THREADS_ENV} or CPU count)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a model to a CSV data file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="model file to write")
    p.add_argument("--report", help="JSON fit report (default: stdout)")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("density", parents=[common], help="posterior mean density and credible band on a grid")
    p.add_argument("--model", required=True)
    _add_grid_flags(p)
    p.add_argument("--draws", type=int, default=0, help="Monte Carlo draws for the band (0: mean only)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--output", help="CSV table (default: stdout)")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("sample", parents=[common], help="evaluate sampled densities on a grid")
    p.add_argument("--model", required=True)
    _add_grid_flags(p)
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--output", help="long-format CSV (default: stdout)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("cv", parents=[common], help="cross-validate the prior scale")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--cv-grid", help="log-spaced grid LO:HI:STEPS (default 1e-3:1e2:25)")
    p.add_argument("--output", help="JSON report (default: stdout)")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("classify", parents=[common], help="two-class plug-in Bayes classification")
    p.add_argument("--train", required=True, help="CSV with features and a 0/1 label column")
    p.add_argument("--test", required=True, help="CSV of features, optionally with the label column")
    p.add_argument("--label-column", help="label column name or index (default: last column)")
    p.add_argument("--priors", help="class priors P0,P1 (default: training prevalence)")
    p.add_argument("--standardize", action="store_true", help="scale features by pooled training mean and SD")
    p.add_argument("--draws", type=int, default=0, help="probability draws per test point")
    p.add_argument("--output", required=True, help="predictions CSV")
    p.add_argument("--metrics", help="metrics JSON (default: stdout)")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("bench", parents=[common], help="L1 error benchmark on a test density")
    _add_density_flags(p, 200, 500, 20)
    p.add_argument("--k", type=int)
    p.add_argument("--delta0sq", default="cv", help="a number or 'cv' (default cv)")
    p.add_argument("--output", help="JSON report (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("coverage", parents=[common], help="frequentist coverage of credible intervals")
    _add_density_flags(p, 500, 200, 50)
    p.add_argument("--k", type=int)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--output", help="JSON report (default: stdout)")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("k-sweep", parents=[common], help="out-of-sample log-likelihood across k")
    _add_density_flags(p, 200, 500, 10)
    p.add_argument("--k-values", default="2,5,10,20")
    p.add_argument("--output", help="JSON report (default: stdout)")
    p.set_defaults(func=cmd_k_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Outputs()
    try:
        args.func(args, out)
        out.commit()
    except (CliError, NNDMError, InvalidDataError, InvalidParameterError) as exc:
        out.discard()
        stage = getattr(exc, "stage", None)
        where = f" (during {stage})" if stage else ""
        print(f"nndm {args.command}: error{where}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        out.discard()
        print(f"nndm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        out.discard()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
