"""Command-line entry points: fit, detect, eval, bench, export-heatmap.

Every command writes a manifest.json recording the command, full config,
seed, content digests of its inputs, output paths, and wall-clock timings,
so a run can be reproduced or audited later.  All randomness flows from the
single --seed flag.

Exit codes: 2 input errors, 3 config errors, 4 schema mismatch,
5 single-class labels.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (
    Schema,
    Table,
    infer_schema,
    load_labeled_table,
    load_table,
    load_table_strict,
    read_schema_json,
    split_for_eval,
    write_split,
)
from .engine import (
    RfodConfig,
    RfodModel,
    detect,
    fit,
    load_model,
    save_model,
)
from .errors import (
    ConfigError,
    DegenerateLabelsError,
    LoadError,
    SchemaMismatchError,
)
from .evaluation import StageTimings, build_report
from .forest import FORMAT_VERSION, ForestConfig
from .scoring import (
    DEFAULT_SCORE_CAP,
    Aggregation,
    DistanceVariant,
    heatmap_bundle,
    read_cell_matrix_csv,
    write_cell_matrix_csv,
    write_row_scores_csv,
)
from .seeding import derive_rng
from .tree import TreeConfig


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SchemaMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except DegenerateLabelsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except (LoadError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfod",
        description="Outlier detection via per-feature random-forest reconstruction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="train a model from a CSV of normal rows")
    p_fit.add_argument("--train", required=True, help="training CSV (normal data only)")
    p_fit.add_argument("--out", required=True, help="directory for the model")
    _add_schema_flags(p_fit)
    _add_model_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_detect = sub.add_parser("detect", help="score a test CSV with a fitted model")
    p_detect.add_argument("--model", required=True, help="model directory from `fit`")
    p_detect.add_argument("--test", required=True, help="test CSV matching the model schema")
    p_detect.add_argument("--out", required=True, help="directory for score files")
    _add_scoring_flags(p_detect)
    p_detect.add_argument("--threads", type=int, default=1)
    p_detect.set_defaults(func=cmd_detect)

    p_eval = sub.add_parser("eval", help="split, fit, score, and report metrics")
    p_eval.add_argument("--data", required=True, help="labeled CSV (features + label column)")
    p_eval.add_argument("--label-column", default="label")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--train-fraction", type=float, default=0.5)
    p_eval.add_argument(
        "--contamination",
        default="auto",
        help="anomaly share for thresholding, or 'auto' for the test split ratio",
    )
    p_eval.add_argument(
        "--sweep-alpha",
        default=None,
        help="comma-separated alphas; rescoring reuses the fitted model",
    )
    _add_schema_flags(p_eval)
    _add_model_flags(p_eval)
    _add_scoring_overrides(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="timing across training-set fractions")
    p_bench.add_argument("--data", required=True, help="labeled CSV")
    p_bench.add_argument("--label-column", default="label")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--train-fraction", type=float, default=0.5)
    p_bench.add_argument(
        "--fractions", default="0.25,0.5,1.0", help="training subsample fractions"
    )
    _add_schema_flags(p_bench)
    _add_model_flags(p_bench)
    _add_scoring_overrides(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_heat = sub.add_parser(
        "export-heatmap", help="convert a cell-score CSV to the JSON heatmap bundle"
    )
    p_heat.add_argument("--cell-scores", required=True, help="cell_scores.csv from `detect`")
    p_heat.add_argument("--out", required=True, help="output JSON path")
    p_heat.set_defaults(func=cmd_export_heatmap)

    return parser


def _add_schema_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schema", default=None, help="JSON sidecar: list of {name, kind}")
    p.add_argument(
        "--categorical-max-cardinality",
        type=int,
        default=16,
        help="cardinality bound for --force-integer-categoricals",
    )
    p.add_argument(
        "--force-integer-categoricals",
        action="store_true",
        help="treat low-cardinality integer columns as categorical when inferring",
    )


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--quantile-cap", type=float, default=DEFAULT_SCORE_CAP)
    p.add_argument("--threads", type=int, default=1)


def _add_scoring_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--distance", choices=[v.value for v in DistanceVariant], default=None)
    p.add_argument("--agg", choices=[v.value for v in Aggregation], default=None)
    p.add_argument("--alpha", type=float, default=None, help="override the model's alpha")
    p.add_argument("--quantile-cap", type=float, default=None)


def _add_scoring_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--distance", choices=[v.value for v in DistanceVariant], default="agd")
    p.add_argument("--agg", choices=[v.value for v in Aggregation], default="uwa")


def _config_from_args(args: argparse.Namespace) -> RfodConfig:
    config = RfodConfig(
        alpha=args.alpha,
        beta=args.beta,
        seed=args.seed,
        distance_variant=DistanceVariant(getattr(args, "distance", None) or "agd"),
        aggregation=Aggregation(getattr(args, "agg", None) or "uwa"),
        quantile_cap=args.quantile_cap,
        forest=ForestConfig(
            t=args.trees,
            tree=TreeConfig(mtry=args.mtry, max_depth=args.max_depth),
        ),
    )
    config.validate()
    if args.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {args.threads}")
    return config


def _resolve_schema(args: argparse.Namespace) -> Schema | None:
    if args.schema is not None:
        return read_schema_json(args.schema)
    return None


def _load_train(args: argparse.Namespace) -> Table:
    schema = _resolve_schema(args)
    if schema is None:
        schema = infer_schema(
            args.train,
            categorical_max_cardinality=args.categorical_max_cardinality,
            force_integer_categoricals=args.force_integer_categoricals,
        )
    return load_table(args.train, schema)


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _model_digest(model_dir: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(model_dir.glob("*.json")):
        h.update(path.name.encode())
        h.update(_digest(path).encode())
    return h.hexdigest()


def _write_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    seed: int,
    inputs: dict[str, Path],
    outputs: list[Path],
    timings: dict[str, float],
    filename: str = "manifest.json",
) -> None:
    manifest = {
        "format": FORMAT_VERSION,
        "command": command,
        "config": config,
        "seed": seed,
        "input_digests": {
            name: {"path": str(path), "sha256": _digest(path)}
            for name, path in inputs.items()
        },
        "output_paths": [str(p) for p in outputs],
        "timings": timings,
    }
    with open(out_dir / filename, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands ---------------------------------------------------------------


def cmd_fit(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    train = _load_train(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model = fit(train, config, threads=args.threads)
    save_model(model, out)

    timings = model.timings
    assert timings is not None
    for name, seconds in zip(train.schema.names, timings.per_feature):
        print(f"feature {name}: fit {seconds:.3f}s")
    print(
        f"fit total {timings.total:.3f}s "
        f"(TPF {timings.mean_per_feature:.3f}s, prune {timings.prune_total:.3f}s)"
    )

    inputs = {"train": Path(args.train)}
    if args.schema:
        inputs["schema"] = Path(args.schema)
    _write_manifest(
        out,
        "fit",
        config.to_dict(),
        args.seed,
        inputs,
        sorted(p for p in out.glob("*.json") if p.name != "manifest.json"),
        {
            "fit_total": timings.total,
            "fit_per_feature": timings.mean_per_feature,
            "prune": timings.prune_total,
        },
    )
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    if args.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {args.threads}")
    model_dir = Path(args.model)
    if not model_dir.is_dir():
        raise LoadError(f"model directory {model_dir} does not exist")
    model = load_model(model_dir)
    model = _apply_scoring_overrides(model, args)
    test = load_table_strict(args.test, model.schema)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    cell_scores, row_scores = detect(model, test, threads=args.threads)
    elapsed = time.perf_counter() - started

    names = test.schema.names
    write_cell_matrix_csv(out / "cell_scores.csv", names, cell_scores)
    write_row_scores_csv(out / "row_scores.csv", row_scores)
    with open(out / "heatmap.json", "w", encoding="utf-8") as fh:
        json.dump(heatmap_bundle(names, cell_scores), fh, sort_keys=True)
        fh.write("\n")

    tps = elapsed / test.n_rows if test.n_rows else 0.0
    print(f"scored {test.n_rows} rows in {elapsed:.3f}s (TPS {tps:.6f}s)")

    _write_manifest(
        out,
        "detect",
        model.config.to_dict(),
        model.config.seed,
        {"test": Path(args.test), "model_manifest": model_dir / "manifest.json"},
        [out / "cell_scores.csv", out / "row_scores.csv", out / "heatmap.json"],
        {"score_total": elapsed, "score_per_sample": tps},
    )
    return 0


def _apply_scoring_overrides(model: RfodModel, args: argparse.Namespace) -> RfodModel:
    from dataclasses import replace

    config = model.config
    if args.alpha is not None:
        config = replace(config, alpha=args.alpha)
    if args.distance is not None:
        config = replace(config, distance_variant=DistanceVariant(args.distance))
    if args.agg is not None:
        config = replace(config, aggregation=Aggregation(args.agg))
    if args.quantile_cap is not None:
        config = replace(config, quantile_cap=args.quantile_cap)
    config.validate()
    return replace(model, config=config)


def _parse_contamination(raw: str, test_labels: np.ndarray) -> float:
    if raw == "auto":
        return float(test_labels.mean())
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"contamination must be a number or 'auto', got {raw!r}") from None
    if not 0.0 < value < 1.0:
        raise ConfigError(f"contamination must be in (0, 1), got {value}")
    return value


def _load_labeled(args: argparse.Namespace) -> tuple[Table, np.ndarray]:
    schema = _resolve_schema(args)
    table, labels = load_labeled_table(args.data, args.label_column, schema)
    if labels.min() == labels.max():
        raise DegenerateLabelsError(
            f"{args.data}: labels contain a single class; evaluation needs both"
        )
    return table, labels


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if not 0.0 < args.train_fraction < 1.0:
        raise ConfigError(f"train-fraction must be in (0, 1), got {args.train_fraction}")
    alphas = [config.alpha]
    if args.sweep_alpha:
        alphas = [float(a) for a in args.sweep_alpha.split(",") if a.strip()]
        for a in alphas:
            if not 0.0 < a < 0.5:
                raise ConfigError(f"sweep-alpha entries must be in (0, 0.5), got {a}")

    table, labels = _load_labeled(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    split = split_for_eval(table, labels, args.train_fraction, args.seed)
    write_split(split, out, args.seed, args.train_fraction)
    contamination = _parse_contamination(args.contamination, split.test_labels)

    model = fit(split.train, config, threads=args.threads)
    save_model(model, out / "model")
    fit_timings = model.timings
    assert fit_timings is not None
    model_digest = _model_digest(out / "model")

    reports = []
    rows = []
    m = split.test.n_rows
    for alpha in alphas:
        started = time.perf_counter()
        _, row_scores = detect(model, split.test, threads=args.threads, alpha=alpha)
        score_total = time.perf_counter() - started
        report = build_report(
            row_scores,
            split.test_labels,
            contamination,
            StageTimings(
                fit_total=fit_timings.total,
                fit_per_feature=fit_timings.mean_per_feature,
                prune=fit_timings.prune_total,
                score_total=score_total,
                score_per_sample=score_total / m,
            ),
        )
        reports.append(
            {
                "format": FORMAT_VERSION,
                "alpha": alpha,
                "seed": args.seed,
                "distance_variant": config.distance_variant.value,
                "aggregation": config.aggregation.value,
                "model_digest": model_digest,
                **report.metrics_dict(),
            }
        )
        rows.append({"alpha": alpha, **report.to_csv_row()})
        print(
            f"alpha={alpha}: AUC-ROC {report.auc_roc:.4f}, AUC-PR {report.auc_pr:.4f}, "
            f"F1 {report.f1:.4f}, Acc {report.accuracy:.4f}, LogLoss {report.log_loss:.4f}"
        )

    payload: object = reports[0] if len(reports) == 1 else reports
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_rows_csv(out / "report.csv", rows)

    inputs = {"data": Path(args.data)}
    if args.schema:
        inputs["schema"] = Path(args.schema)
    _write_manifest(
        out,
        "eval",
        {**config.to_dict(), "train_fraction": args.train_fraction, "alphas": alphas},
        args.seed,
        inputs,
        [out / "report.json", out / "report.csv", out / "split.json"],
        {
            "fit_total": fit_timings.total,
            "fit_per_feature": fit_timings.mean_per_feature,
            "prune": fit_timings.prune_total,
        },
    )
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ConfigError(f"fractions must be in (0, 1], got {f}")

    table, labels = _load_labeled(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    split = split_for_eval(table, labels, args.train_fraction, args.seed)
    n_train = split.train.n_rows
    perm = derive_rng(args.seed, 0).permutation(n_train)
    contamination = float(split.test_labels.mean())

    rows = []
    for frac in fractions:
        k = max(2, int(frac * n_train))
        train_part = split.train.subset(np.sort(perm[:k]))
        model = fit(train_part, config, threads=args.threads)
        timings = model.timings
        assert timings is not None
        started = time.perf_counter()
        _, row_scores = detect(model, split.test, threads=args.threads)
        score_total = time.perf_counter() - started
        report = build_report(row_scores, split.test_labels, contamination)
        rows.append(
            {
                "fraction": frac,
                "n_train": k,
                "fit_total": timings.total,
                "fit_per_feature": timings.mean_per_feature,
                "prune": timings.prune_total,
                "score_total": score_total,
                "score_per_sample": score_total / split.test.n_rows,
                "auc_roc": report.auc_roc,
                "auc_pr": report.auc_pr,
            }
        )
        print(
            f"fraction {frac}: n={k}, fit {timings.total:.3f}s, "
            f"score {score_total:.3f}s, AUC-ROC {report.auc_roc:.4f}"
        )

    _write_rows_csv(out / "bench.csv", rows)
    _write_manifest(
        out,
        "bench",
        {**config.to_dict(), "fractions": fractions, "train_fraction": args.train_fraction},
        args.seed,
        {"data": Path(args.data)},
        [out / "bench.csv"],
        {"runs": float(len(fractions))},
    )
    return 0


def cmd_export_heatmap(args: argparse.Namespace) -> int:
    features, matrix = read_cell_matrix_csv(args.cell_scores)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(heatmap_bundle(features, matrix), fh, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        out.parent,
        "export-heatmap",
        {},
        0,
        {"cell_scores": Path(args.cell_scores)},
        [out],
        {},
        filename=f"{out.stem}.manifest.json",
    )
    print(f"wrote heatmap bundle for {matrix.shape[0]} rows x {len(features)} features")
    return 0


def _write_rows_csv(path: Path, rows: list[dict]) -> None:
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


if __name__ == "__main__":
    sys.exit(main())
