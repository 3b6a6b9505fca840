"""Command-line pipeline: gen-data -> train -> proximity -> knn-eval, plus importance.

Stages communicate through files in their ``--out`` directories. Logs go
to stderr; every command writes ``<command>_summary.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import matrix_io
from .dataset import (
    DataValidationError,
    EncodedMatrix,
    FeatureSchema,
    GeneratorConfig,
    SplitIndices,
    generate_synthetic_bonds,
    load_csv,
    train_test_split,
)
from .evaluation import (
    DEFAULT_DEPTH_GRID,
    DEFAULT_K_VALUES,
    DEFAULT_TREES_GRID,
    Baseline,
    depth_label,
    grid_search_cv,
    k_sweep,
    parse_depth,
    rank_metrics,
)
from .experiment import (
    D_EUCLIDEAN,
    D_EUCLIDEAN_RAW,
    D_GOWER,
    D_PROX,
    D_PROX_OOB,
    METRIC_ORDER,
    PreparedSplit,
    baseline_distances,
)
from .forest import ForestRegressor, load_model, permutation_importance, save_model
from .proximity import OOB, ORIGINAL

log = logging.getLogger("forestsim")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

DATA_CSV = "bonds.csv"
SCHEMA_JSON = "schema.json"
GROUND_TRUTH_JSON = "ground_truth.json"
MODEL_FILE = "model.json.gz"
MATRIX_NAMES = {
    (ORIGINAL, "train"): "train_prox",
    (ORIGINAL, "test"): "test_prox",
    (OOB, "train"): "train_prox_oob",
    (OOB, "test"): "test_prox_oob",
}


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


# ---------------------------------------------------------------------------
# helpers


def _load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _data_paths(args, cfg) -> tuple[Path, Path | None]:
    section = cfg.get("data", {})
    csv_path = args.data or section.get("csv")
    schema_path = getattr(args, "schema", None) or section.get("schema")
    if csv_path is None:
        raise UsageError("no data file given (use --data or config data.csv)")
    csv_path = Path(csv_path)
    if schema_path is None and getattr(args, "require_schema", False):
        schema_path = csv_path.with_name(SCHEMA_JSON)
    if not csv_path.exists():
        raise UsageError(f"data file not found: {csv_path}")
    if schema_path is not None:
        schema_path = Path(schema_path)
        if not schema_path.exists():
            raise UsageError(f"schema file not found: {schema_path}")
    return csv_path, schema_path


def _load_model_and_data(args, cfg):
    model_path = Path(args.model)
    if not model_path.exists():
        raise UsageError(f"model file not found: {model_path}")
    model = load_model(model_path)
    csv_path, schema_path = _data_paths(args, cfg)
    schema = model.encoder.schema
    if schema_path is not None:
        given = FeatureSchema.load(schema_path)
        if given != schema:
            raise DataValidationError(
                f"schema {schema_path} does not match the vocabulary stored in the model "
                f"({given.names} vs {schema.names})"
            )
    data = load_csv(csv_path, schema)
    split = SplitIndices.from_dict(model.extra["split"])
    if len(split.train) + len(split.test) != len(data):
        raise DataValidationError(
            f"data has {len(data)} rows but the model's split covers {len(split.train) + len(split.test)}"
        )
    prep = PreparedSplit.build(data, split)
    if prep.encoder.feature_names_out_ != model.feature_names:
        raise DataValidationError("encoding vocabulary of the data does not match the model")
    prep.encoder = model.encoder
    return model, prep


def _error_table(baseline: Baseline) -> str:
    return "\n".join([
        f"{'Dataset':<8} {'RMSE':>8} {'MAPE':>8}",
        f"{'Train':<8} {baseline.train_rmse:>8.4f} {baseline.train_mape:>8.4f}",
        f"{'Test':<8} {baseline.test_rmse:>8.4f} {baseline.test_mape:>8.4f}",
    ])


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    syn = dict(cfg.get("synthetic", {}))
    n = args.n if args.n is not None else syn.get("n", 2000)
    if n is None or int(n) < 1:
        raise UsageError(f"n must be a positive integer, got {n}")
    seed = args.seed if args.seed is not None else syn.get("seed", 0)
    gen_cfg = GeneratorConfig.from_dict(syn)
    out = _out_dir(args)
    bonds = generate_synthetic_bonds(int(n), int(seed), gen_cfg)
    bonds.data.save_csv(out / DATA_CSV)
    bonds.data.schema.save(out / SCHEMA_JSON)
    _write_json(out / GROUND_TRUTH_JSON, bonds.ledger())
    summary = {"command": "gen-data", "n": int(n), "seed": int(seed),
               "files": [DATA_CSV, SCHEMA_JSON, GROUND_TRUTH_JSON],
               "y_min": float(bonds.data.y.min()), "y_max": float(bonds.data.y.max())}
    _write_json(out / "gen-data_summary.json", summary)
    log.info("wrote %d rows to %s", int(n), out / DATA_CSV)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    args.require_schema = True
    csv_path, schema_path = _data_paths(args, cfg)
    data = load_csv(csv_path, FeatureSchema.load(schema_path))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    fraction = cfg.get("split", {}).get("fraction", 0.9)
    forest_cfg = cfg.get("forest", {})
    cv_cfg = cfg.get("cv", {})
    out = _out_dir(args)

    split = train_test_split(data, fraction, seed)
    prep = PreparedSplit.build(data, split)
    common = dict(min_samples_split=forest_cfg.get("min_samples_split", 2),
                  max_features=forest_cfg.get("max_features"))

    if args.no_cv or cv_cfg.get("enabled", True) is False:
        best = {"max_depth": parse_depth(forest_cfg.get("max_depth", 10)),
                "n_trees": int(forest_cfg.get("n_trees", 1000))}
        cv_rows = None
    else:
        depth_grid = [parse_depth(d) for d in cv_cfg.get("depth_grid", DEFAULT_DEPTH_GRID)]
        trees_grid = cv_cfg.get("trees_grid", list(DEFAULT_TREES_GRID))
        t0 = time.perf_counter()
        result = grid_search_cv(
            _encoded(prep), depth_grid, trees_grid, cv_cfg.get("k_folds", 5), seed,
            n_jobs=args.threads, **common,
        )
        log.info("grid search over %d points took %.1fs", len(result.cv_table), time.perf_counter() - t0)
        result.write_csv(out / "cv_table.csv")
        best = result.best_params
        cv_rows = len(result.cv_table)

    forest = ForestRegressor(n_estimators=best["n_trees"], max_depth=best["max_depth"], random_state=seed,
                             n_jobs=args.threads, **common).fit(prep.X_train, prep.train.y)
    baseline = Baseline.from_predictions(prep.train.y, forest.predict(prep.X_train),
                                         prep.test.y, forest.predict(prep.X_test))
    extra = {"split": split.to_dict(), "seed": int(seed), "fraction": fraction,
             "best_params": {"max_depth": depth_label(best["max_depth"]), "n_trees": best["n_trees"]},
             "data_rows": len(data)}
    save_model(out / MODEL_FILE, forest, prep.encoder.feature_names_out_, prep.encoder, extra)
    _write_json(out / "metrics.json", baseline.to_dict())
    print(_error_table(baseline))
    _write_json(out / "train_summary.json", {
        "command": "train", "seed": int(seed), "best_params": extra["best_params"], "cv_points": cv_rows,
        "metrics": baseline.to_dict(), "model": MODEL_FILE,
        "oob_rmse": forest.oob_score_rmse(prep.X_train, prep.train.y) if forest.bootstrap else None,
    })
    return EXIT_OK


def _encoded(prep: PreparedSplit) -> EncodedMatrix:
    return EncodedMatrix(prep.X_train, list(prep.encoder.feature_names_out_), prep.train.y,
                         dict(prep.encoder.blocks_))


def cmd_proximity(args) -> int:
    cfg = _load_config(args.config)
    model, prep = _load_model_and_data(args, cfg)
    forest = model.forest
    forest.n_jobs = args.threads
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in (ORIGINAL, OOB):
            raise UsageError(f"unknown proximity mode {m!r}; choose from original, oob")
    if not modes:
        raise UsageError("no proximity modes selected")
    out = _out_dir(args)

    t0 = time.perf_counter()
    train_leaves = forest.apply(prep.X_train)
    test_leaves = forest.apply(prep.X_test)
    info = {}
    for mode in modes:
        for side, rows, cols in (("train", train_leaves, None), ("test", test_leaves, train_leaves)):
            name = MATRIX_NAMES[(mode, side)]
            start = time.perf_counter()
            header = matrix_io.stream_proximity(out / name, forest, rows, cols, mode, args.tile_rows, args.threads)
            elapsed = time.perf_counter() - start
            entry = {"shape": [header["m"], header["n"]], "seconds": round(elapsed, 3)}
            if mode == OOB:
                undefined = header["undefined_entries"]
                entry["undefined_pairs"] = undefined // 2 if side == "train" else undefined
                log.info("%s: %d undefined OOB %s (never jointly OOB); raise T to reduce", name,
                         entry["undefined_pairs"], "pairs" if side == "train" else "entries")
            if args.csv:
                values, _ = matrix_io.load_matrix(out / name)
                matrix_io.save_matrix_csv(out / f"{name}.csv", values)
            log.info("%s %s computed in %.2fs", name, tuple(entry["shape"]), elapsed)
            info[name] = entry
    total = time.perf_counter() - t0
    log.info("proximity stage finished in %.2fs", total)
    _write_json(out / "proximity_summary.json", {"command": "proximity", "matrices": info,
                                                  "seconds": round(total, 3), "n_trees": len(forest.estimators_)})
    return EXIT_OK


def _load_distance(dirpath: Path, name: str, expected_shape) -> np.ndarray:
    try:
        values, header = matrix_io.load_matrix(dirpath / name)
    except FileNotFoundError as exc:
        raise UsageError(f"{exc}; run the proximity command first") from exc
    if values.shape != tuple(expected_shape):
        raise DataValidationError(f"{name} has shape {values.shape}, expected {tuple(expected_shape)}")
    if header.get("quantity") == "proximity":
        values = 1.0 - values
        values[np.isnan(values)] = 1.0
        if name.startswith("train_"):
            np.fill_diagonal(values, 0.0)
    return values


def cmd_knn_eval(args) -> int:
    cfg = _load_config(args.config)
    model, prep = _load_model_and_data(args, cfg)
    model.forest.n_jobs = args.threads
    toggles = cfg.get("metrics")
    if args.metrics is not None:
        metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    elif toggles is not None:
        metrics = [m for m in METRIC_ORDER if toggles.get(m, False)]
    else:
        metrics = [D_EUCLIDEAN, D_GOWER, D_PROX, D_PROX_OOB]
    unknown = [m for m in metrics if m not in METRIC_ORDER]
    if unknown:
        raise UsageError(f"unknown metric(s) {unknown}; choose from {list(METRIC_ORDER)}")
    if not metrics:
        raise UsageError("all metrics are toggled off; enable at least one")
    k_values = args.k_values or cfg.get("k_values", list(DEFAULT_K_VALUES))
    self_exclusion = cfg.get("self_exclusion", True) if not args.include_self else False
    out = _out_dir(args)

    sets = baseline_distances(prep, metrics)
    n, m = len(prep.train.y), len(prep.test.y)
    mdir = Path(args.matrices)
    for metric, mode in ((D_PROX, ORIGINAL), (D_PROX_OOB, OOB)):
        if metric in metrics:
            sets[metric] = (_load_distance(mdir, MATRIX_NAMES[(mode, "train")], (n, n)),
                            _load_distance(mdir, MATRIX_NAMES[(mode, "test")], (m, n)))
    ordered = {name: sets[name] for name in METRIC_ORDER if name in sets}
    forest = model.forest
    baseline = Baseline.from_predictions(prep.train.y, forest.predict(prep.X_train),
                                         prep.test.y, forest.predict(prep.X_test))
    reports = k_sweep(ordered, prep.train.y, prep.test.y, k_values, baseline, self_exclusion=self_exclusion)
    for name, rep in reports.items():
        rep.write_csv(out / f"k_sweep_{name}.csv")
    with open(out / "forest_baseline.csv", "w") as fh:
        fh.write("train_rmse,train_mape,test_rmse,test_mape\n")
        fh.write(",".join(repr(v) for v in baseline.to_dict().values()) + "\n")

    ranking = rank_metrics(reports)
    with open(out / "best_k_summary.csv", "w") as fh:
        fh.write("metric,best_k,test_rmse,test_mape_at_best_k\n")
        for name, k, val in ranking:
            rep = reports[name]
            fh.write(f"{name},{k},{val!r},{float(rep.test_mape[rep.k_values.index(k)])!r}\n")
    verdict = " < ".join(f"{name}(K={k}, {val:.4f})" for name, k, val in ranking)
    print(f"forest baseline: test RMSE {baseline.test_rmse:.4f}, test MAPE {baseline.test_mape:.4f}")
    print(f"{'metric':<14} {'best K':>6} {'test RMSE':>10} {'test MAPE':>10}")
    for name, k, val in ranking:
        rep = reports[name]
        print(f"{name:<14} {k:>6} {val:>10.4f} {rep.test_mape[rep.k_values.index(k)]:>10.4f}")
    print(f"verdict (test RMSE at optimal K): {verdict}")
    _write_json(out / "knn-eval_summary.json", {
        "command": "knn-eval", "metrics": [r.summary() for r in reports.values()],
        "ranking": [{"metric": a, "best_k": b, "test_rmse": c} for a, b, c in ranking],
        "baseline": baseline.to_dict(), "self_exclusion": self_exclusion, "verdict": verdict,
    })
    return EXIT_OK


def cmd_importance(args) -> int:
    cfg = _load_config(args.config)
    model, prep = _load_model_and_data(args, cfg)
    model.forest.n_jobs = args.threads
    imp_cfg = cfg.get("importance", {})
    n_repeats = args.n_repeats or imp_cfg.get("n_repeats", 5)
    grouped = args.grouped or imp_cfg.get("grouped", False)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    X, y = (prep.X_test, prep.test.y) if args.split == "test" else (prep.X_train, prep.train.y)
    result = permutation_importance(
        model.forest, X, y, n_repeats, seed, feature_names=model.feature_names,
        groups=model.encoder.blocks_ if grouped else None,
    )
    out = _out_dir(args)
    ranking = result.ranking()
    with open(out / "importance.csv", "w") as fh:
        fh.write("feature,mean_increase_rmse,std\n")
        for name, mean, std in ranking:
            fh.write(f"{name},{mean!r},{std!r}\n")
    print(f"baseline RMSE {result.baseline_rmse:.4f}; top features by RMSE increase:")
    for name, mean, std in ranking[:5]:
        print(f"  {name:<28} {mean:.4f} +/- {std:.4f}")
    _write_json(out / "importance_summary.json", {
        "command": "importance", "split": args.split, "grouped": bool(grouped), "n_repeats": n_repeats,
        "baseline_rmse": result.baseline_rmse, "top5": [r[0] for r in ranking[:5]],
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(value: str) -> int:
    try:
        v = int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forestsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="master seed for all randomness")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=_positive_int, default=None, help="worker cap (default: all cores)")

    p = sub.add_parser("gen-data", help="write a synthetic bond dataset")
    common(p)
    p.add_argument("--n", type=int, help="number of rows")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="split, grid-search, refit and save a forest")
    common(p)
    p.add_argument("--data", help="CSV file")
    p.add_argument("--schema", help="schema JSON (default: schema.json next to the CSV)")
    p.add_argument("--no-cv", action="store_true", help="skip grid search; use config forest.max_depth/n_trees")
    p.set_defaults(func=cmd_train)

    def model_args(p):
        p.add_argument("--model", required=True, help="model file written by train")
        p.add_argument("--data", help="the CSV the model was trained from")
        p.add_argument("--schema", help="optional schema JSON checked against the model")

    p = sub.add_parser("proximity", help="export train and test proximity matrices")
    common(p)
    model_args(p)
    p.add_argument("--modes", default="original,oob", help="comma list of original, oob")
    p.add_argument("--tile-rows", type=_positive_int, default=matrix_io.DEFAULT_TILE_ROWS)
    p.add_argument("--csv", action="store_true", help="also write CSV copies")
    p.set_defaults(func=cmd_proximity)

    p = sub.add_parser("knn-eval", help="K-sweep KNN regression for each distance metric")
    common(p)
    model_args(p)
    p.add_argument("--matrices", required=True, help="directory written by the proximity command")
    p.add_argument("--metrics", help=f"comma list from {','.join(METRIC_ORDER)}")
    p.add_argument("--k-values", type=_positive_int, nargs="+")
    p.add_argument("--include-self", action="store_true", help="keep each training row as its own neighbour")
    p.set_defaults(func=cmd_knn_eval)

    p = sub.add_parser("importance", help="permutation feature importance")
    common(p)
    model_args(p)
    p.add_argument("--n-repeats", type=_positive_int)
    p.add_argument("--grouped", action="store_true", help="permute each categorical block jointly")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DataValidationError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("%s failed: %s", args.command, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
