"""Command-line interface: ``controlburn {grow,select,compare,synth,eval}``.

Every run writes ``manifest.json`` next to its outputs. Passing that file
back with ``--from-manifest`` replays the run with the same configuration
and seed.

Exit codes: 0 success (possibly with warnings), 1 usage error, 2 data
validation or I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import warnings
from pathlib import Path

import numpy as np
import sklearn

from . import __version__
from .dataset import (CLASSIFICATION, TASKS, Dataset, DataValidationError, as_generator,
                      duplicate_features, load_csv, make_signal_dataset, save_csv)
from .eval import (FoldError, compare_cv, positive_scores, roc_auc,
                   uninformative_rank_experiment)
from .grow import Forest, grow_forest
from .prune import CostSpec, NumericalError
from .select import K_MAX, controlburn, refit

logger = logging.getLogger("controlburn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_SEED = 0
# options that only affect where things go, not what is computed
_NON_CONFIG = {"out", "from_manifest", "replay_out", "log_level", "func"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    """``"1,2,5"`` or ``"1-10"`` (inclusive) or a mix like ``"1-3,7"``."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


def _dup_spec(text: str) -> tuple[int, int]:
    """``"3x5"``: duplicate the first 3 columns 5 times each."""
    try:
        n, c = text.lower().split("x")
        n, c = int(n), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxC, got {text!r}") from None
    if n < 1 or c < 1:
        raise argparse.ArgumentTypeError("both counts must be >= 1")
    return n, c


def _add_common(p):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help=f"root seed for all randomness (default {DEFAULT_SEED})")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for refit forests (default 1)")
    p.add_argument("--out", default=".", help="output directory (default: cwd)")


def _add_data(p, required=True):
    p.add_argument("--input", required=required, help="CSV file with a header row")
    p.add_argument("--label", default="y", help="label column name (default y)")
    p.add_argument("--task", choices=TASKS, default=CLASSIFICATION)


def _add_grower(p):
    p.add_argument("--grower", choices=("bagboost", "bag"), default="bagboost")
    p.add_argument("--max-depth", type=int, default=5, help="d_max for the bag grower")
    p.add_argument("--window", type=int, default=5, help="convergence window N")
    p.add_argument("--epsilon", type=float, default=1e-3, help="convergence tube width")
    p.add_argument("--sparse-cost", type=float, default=0.0,
                   help="split cost for features not used yet")
    p.add_argument("--sparse-scope", choices=("tree", "forest"), default="tree")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="controlburn", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default="ERROR")
    parser.add_argument("--from-manifest", metavar="PATH",
                        help="replay the run recorded in a manifest")
    parser.add_argument("--replay-out", metavar="DIR",
                        help="output directory for a replay (default: the manifest's)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("grow", help="grow a forest and write forest.json + trace.jsonl")
    _add_data(g)
    _add_grower(g)
    _add_common(g)
    g.set_defaults(func=cmd_grow)

    s = sub.add_parser("select", help="select features at one k, a path, or one lambda")
    _add_data(s)
    _add_grower(s)
    s.add_argument("--forest", help="reuse a forest.json instead of growing")
    s.add_argument("--costs", help="JSON cost specification")
    s.add_argument("--sketch", type=int, help="rows of a Gaussian sketch (squared loss)")
    mode = s.add_mutually_exclusive_group(required=True)
    mode.add_argument("--k", type=int, help="target number of features")
    mode.add_argument("--path", action="store_true", help="every k in 1..kmax")
    mode.add_argument("--lambda", dest="lam", type=float, help="single solve at this lambda")
    s.add_argument("--kmax", type=int, default=K_MAX)
    _add_common(s)
    s.set_defaults(func=cmd_select)

    c = sub.add_parser("compare", help="cross-validated AUC against the MDI baseline")
    _add_data(c, required=False)
    _add_grower(c)
    c.add_argument("--costs", help="JSON cost specification")
    ks = c.add_mutually_exclusive_group()
    ks.add_argument("--k", type=int)
    ks.add_argument("--k-range", type=_int_list, help='e.g. "1-10" or "1,3,5"')
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--synth-duplicate", type=_dup_spec, metavar="NxC",
                   help="first duplicate the first N columns C times")
    c.add_argument("--sigma", type=float, default=0.1, help="duplicate noise std")
    c.add_argument("--rows", type=int, default=2000,
                   help="rows of generated data when --input is absent")
    _add_common(c)
    c.set_defaults(func=cmd_compare)

    y = sub.add_parser("synth", help="append noisy duplicates of columns to a dataset")
    _add_data(y, required=False)
    y.add_argument("--duplicate", type=_int_list, required=True,
                   help="0-based column indices to duplicate")
    y.add_argument("--copies", type=int, default=5)
    y.add_argument("--sigma", type=float, default=0.1)
    y.add_argument("--rows", type=int, default=2000,
                   help="rows of generated data when --input is absent")
    y.add_argument("--kind", choices=("gaussian", "binary"), default="gaussian")
    y.add_argument("--output", default="synth.csv", help="file name inside --out")
    _add_common(y)
    y.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="score a selection on test data, or run the "
                                    "uninformative-feature experiment")
    _add_data(e)
    e.add_argument("--selection", help="selection.json from `select`")
    e.add_argument("--test", help="held-out CSV to score the refit models on")
    e.add_argument("--uninformative", action="store_true",
                   help="inject a random column and trace its rank along the path")
    e.add_argument("--kmax", type=int)
    _add_grower(e)
    _add_common(e)
    e.set_defaults(func=cmd_eval)
    return parser


# helpers -------------------------------------------------------------------

def _grower_params(args) -> dict:
    params = {"window": args.window, "epsilon": args.epsilon,
              "sparse_cost": args.sparse_cost, "sparse_scope": args.sparse_scope}
    if args.grower == "bag":
        params["max_depth"] = args.max_depth
    return params


def _load(args) -> Dataset:
    return load_csv(args.input, args.label, args.task)


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _versions() -> dict:
    return {"controlburn": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scikit-learn": sklearn.__version__}


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NON_CONFIG}


def _write_manifest(args, out: Path, outputs: list[Path]) -> None:
    manifest = {"config": _config(args), "seed": args.seed, "versions": _versions(),
                "outputs": sorted(p.name for p in outputs)}
    _write(out, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _args_from_manifest(parser, path: str, out: str | None) -> argparse.Namespace:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
        config = dict(manifest["config"])
    except (OSError, ValueError, KeyError) as exc:
        raise DataValidationError(f"cannot read manifest {path}: {exc}") from None
    command = config.pop("command", None)
    if command is None:
        raise DataValidationError(f"manifest {path} names no subcommand")
    # start from the subcommand's defaults, then overlay the recorded values
    args = parser.parse_args([command] + _required_stub(command, config))
    for key, value in config.items():
        setattr(args, key, value)
    args.out = out if out is not None else str(Path(path).parent)
    return args


def _required_stub(command: str, config: dict) -> list[str]:
    # the parser needs required options present; real values are overlaid after
    if command in ("grow", "eval"):
        return ["--input", str(config.get("input"))]
    if command == "select":
        return ["--input", str(config.get("input")), "--path"]
    if command == "synth":
        return ["--duplicate", "0"]
    return []


# subcommands ---------------------------------------------------------------

def cmd_grow(args) -> int:
    data = _load(args)
    out = Path(args.out)
    forest = grow_forest(data, args.grower, rng=args.seed, **_grower_params(args))
    paths = [_write(out, "forest.json", forest.to_json()),
             _write(out, "trace.jsonl", forest.trace_jsonl())]
    _write_manifest(args, out, paths)
    print(f"grew {len(forest)} trees in {forest.n_stages} stages -> {paths[0]}")
    return EXIT_OK


def cmd_select(args) -> int:
    data = _load(args)
    out = Path(args.out)
    costs = CostSpec.load(args.costs) if args.costs else None
    forest = None
    if args.forest:
        try:
            forest = Forest.from_dict(json.loads(Path(args.forest).read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError) as exc:
            raise DataValidationError(f"cannot read forest {args.forest}: {exc}") from None
        if forest.n_features != data.p:
            raise DataValidationError(
                f"forest was grown on {forest.n_features} features, data has {data.p}")
    if args.k is not None:
        k, k_max = args.k, max(args.k, args.kmax)
        if not 1 <= k <= data.p:
            raise UsageError(f"--k must lie in [1, {data.p}]")
    else:
        k, k_max = None, min(args.kmax, data.p)
    result = controlburn(data, k, k_max=k_max, lam=args.lam, grower=args.grower,
                         grower_params=_grower_params(args), costs=costs,
                         rng=args.seed, n_jobs=args.threads, forest=forest,
                         sketch=args.sketch)
    doc = result.to_dict()
    for rec in result.records.values():
        model = rec.model
        if model is not None and data.task == CLASSIFICATION:
            s = positive_scores(model, data.features[:, list(rec.selected)])
            doc_rec = next(r for r in doc["records"] if r["k"] == rec.k)
            doc_rec["train_auc"] = roc_auc(s, data.labels) if 0 < data.labels.sum() < data.m \
                else None
    paths = [_write(out, "selection.json", json.dumps(doc, indent=2) + "\n")]
    if forest is None:
        paths.append(_write(out, "forest.json", result.forest.to_json()))
        paths.append(_write(out, "trace.jsonl", result.forest.trace_jsonl()))
    _write_manifest(args, out, paths)
    for kk in result.achieved:
        print(f"k={kk}: {', '.join(result[kk].names)}")
    if args.lam is not None and not result.records:
        print(f"lambda={args.lam} selects no features")
    for kk in result.unreachable:
        print(f"warning: k={kk} not realized; nearest achieved {result.nearest.get(kk)}",
              file=sys.stderr)
    return EXIT_OK


def _compare_data(args) -> Dataset:
    gen = as_generator(args.seed)
    if args.input:
        data = _load(args)
    else:
        data = make_signal_dataset(args.rows, task=args.task, rng=gen)
    if args.synth_duplicate:
        n, copies = args.synth_duplicate
        if n > data.p:
            raise UsageError(f"cannot duplicate {n} of {data.p} columns")
        data = duplicate_features(data, range(n), copies, args.sigma, gen)
    return data


def cmd_compare(args) -> int:
    if args.k is None and args.k_range is None:
        raise UsageError("compare needs --k or --k-range")
    k_range = [args.k] if args.k is not None else args.k_range
    data = _compare_data(args)
    out = Path(args.out)
    costs = CostSpec.load(args.costs) if args.costs else None
    report = compare_cv(data, k_range, args.folds, np.random.default_rng(args.seed + 1),
                        grower=args.grower, grower_params=_grower_params(args),
                        costs=costs, n_jobs=args.threads)
    paths = [_write(out, "comparison.json", report.to_json(indent=2) + "\n"),
             _write(out, "comparison.csv", report.to_csv())]
    _write_manifest(args, out, paths)
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_synth(args) -> int:
    gen = as_generator(args.seed)
    if args.input:
        data = _load(args)
    else:
        data = make_signal_dataset(args.rows, task=args.task, rng=gen, kind=args.kind)
    if args.copies < 1 or args.sigma < 0:
        raise UsageError("--copies must be >= 1 and --sigma >= 0")
    for j in args.duplicate:
        if not 0 <= j < data.p:
            raise UsageError(f"column {j} out of range for {data.p} features")
    aug = duplicate_features(data, args.duplicate, args.copies, args.sigma, gen)
    out = Path(args.out)
    path = out / args.output
    save_csv(aug, path, args.label)
    _write_manifest(args, out, [path])
    print(f"wrote {aug.m} rows x {aug.p} features -> {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data = _load(args)
    out = Path(args.out)
    if args.uninformative:
        trace = uninformative_rank_experiment(data, args.seed, k_max=args.kmax,
                                              grower=args.grower,
                                              grower_params=_grower_params(args),
                                              n_jobs=args.threads)
        doc = {"trace": [{"k": p.k, "selected": p.selected, "rank": p.rank} for p in trace]}
        paths = [_write(out, "uninformative.json", json.dumps(doc, indent=2) + "\n")]
        for p in trace:
            print(f"k={p.k}: " + (f"rank {p.rank}" if p.selected else "not selected"))
    elif args.selection:
        if not args.test:
            raise UsageError("--selection needs --test")
        try:
            sel = json.loads(Path(args.selection).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataValidationError(f"cannot read selection {args.selection}: {exc}") from None
        test = load_csv(args.test, args.label, args.task)
        if test.names != data.names:
            raise DataValidationError("train and test columns differ")
        rows = []
        for i, rec in enumerate(sel.get("records", [])):
            cols = [int(j) for j in rec["selected"]]
            model = refit(data, cols, args.seed + i, n_jobs=args.threads)
            Xt = test.features[:, cols]
            if data.task == CLASSIFICATION:
                score = roc_auc(positive_scores(model, Xt), test.labels)
                metric = "auc"
            else:
                score = float(np.mean((model.predict(Xt) - test.labels) ** 2))
                metric = "mse"
            rows.append({"k": rec["k"], "features": rec.get("features"), metric: score})
            print(f"k={rec['k']}: {metric}={score:.4f}")
        paths = [_write(out, "evaluation.json", json.dumps({"scores": rows}, indent=2) + "\n")]
    else:
        raise UsageError("eval needs --selection/--test or --uninformative")
    _write_manifest(args, out, paths)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.from_manifest:
            args = _args_from_manifest(parser, args.from_manifest, args.replay_out)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            print("controlburn: error: a subcommand is required", file=sys.stderr)
            return EXIT_USAGE
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            return args.func(args)
    except UsageError as exc:
        print(f"controlburn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, OSError) as exc:
        print(f"controlburn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FoldError as exc:
        code = EXIT_NUMERIC if isinstance(exc.__cause__, (NumericalError, FloatingPointError)) \
            else EXIT_DATA
        print(f"controlburn: {exc}", file=sys.stderr)
        return code
    except (NumericalError, FloatingPointError) as exc:
        print(f"controlburn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"controlburn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
