"""The detection pipeline: leave-one-feature-out training, reconstruction,
uncertainty, and scoring.

One forest is trained per feature, with the remaining features as
predictors (classifier for categorical targets, regressor for numerical
ones).  At inference each forest reconstructs its feature for every test
row; residuals become cell scores and tree disagreement becomes the
uncertainty that weights row-level aggregation.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import FeatureKind, QuantileProfile, Schema, Table
from .errors import ConfigError, LoadError, SchemaMismatchError
from .forest import (
    FORMAT_VERSION,
    Forest,
    ForestConfig,
    fit_forest,
    forest_from_obj,
    forest_to_obj,
    predict_tree_batch,
    prune_forest,
)
from .scoring import (
    DEFAULT_SCORE_CAP,
    Aggregation,
    DistanceVariant,
    aggregate_rows,
    build_cell_scores,
    confidence_weights,
)
from .seeding import derive_seed
from .tree import TableView, TargetColumn, TreeConfig


@dataclass(frozen=True)
class RfodConfig:
    """Hyperparameters of one detection run.

    alpha sets the quantile range used to scale numerical residuals (small
    values track the distribution tails closely); beta is the fraction of
    top-quality trees each forest keeps after pruning.
    """

    alpha: float = 0.01
    beta: float = 0.5
    forest: ForestConfig = ForestConfig()
    seed: int = 0
    distance_variant: DistanceVariant = DistanceVariant.AGD
    aggregation: Aggregation = Aggregation.UWA
    quantile_cap: float = DEFAULT_SCORE_CAP

    def validate(self) -> None:
        if not 0.0 < self.alpha < 0.5:
            raise ConfigError(f"alpha must be in (0, 0.5), got {self.alpha}")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.quantile_cap <= 0:
            raise ConfigError(f"quantile-cap must be positive, got {self.quantile_cap}")
        self.forest.validate()

    def to_dict(self) -> dict:
        tree = self.forest.tree
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "seed": self.seed,
            "distance_variant": self.distance_variant.value,
            "aggregation": self.aggregation.value,
            "quantile_cap": self.quantile_cap,
            "forest": {
                "t": self.forest.t,
                "bootstrap_fraction": self.forest.bootstrap_fraction,
                "tree": {
                    "mtry": tree.mtry,
                    "max_depth": tree.max_depth,
                    "min_samples_leaf": tree.min_samples_leaf,
                    "min_samples_split": tree.min_samples_split,
                    "max_categorical_partitions": tree.max_categorical_partitions,
                },
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RfodConfig":
        tree = obj["forest"]["tree"]
        return cls(
            alpha=float(obj["alpha"]),
            beta=float(obj["beta"]),
            seed=int(obj["seed"]),
            distance_variant=DistanceVariant(obj["distance_variant"]),
            aggregation=Aggregation(obj["aggregation"]),
            quantile_cap=float(obj["quantile_cap"]),
            forest=ForestConfig(
                t=int(obj["forest"]["t"]),
                bootstrap_fraction=float(obj["forest"]["bootstrap_fraction"]),
                tree=TreeConfig(
                    mtry=tree["mtry"],
                    max_depth=tree["max_depth"],
                    min_samples_leaf=tree["min_samples_leaf"],
                    min_samples_split=tree["min_samples_split"],
                    max_categorical_partitions=int(tree["max_categorical_partitions"]),
                ),
            ),
        )


@dataclass(frozen=True)
class FitTimings:
    per_feature: tuple[float, ...]
    prune_total: float
    total: float

    @property
    def mean_per_feature(self) -> float:
        return sum(self.per_feature) / len(self.per_feature)


@dataclass(frozen=True, eq=False)
class RfodModel:
    """One pruned forest per feature plus the training quantile profiles."""

    schema: Schema
    forests: tuple[Forest, ...]
    quantile_profiles: QuantileProfile
    config: RfodConfig
    timings: FitTimings | None = None

    def class_dict(self, j: int) -> tuple[str, ...]:
        classes = self.forests[j].classes
        if classes is None:
            raise ValueError(f"feature {j} is numerical")
        return classes


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    """Reconstructed test matrix with per-cell uncertainty.

    x_hat holds reals for numerical features and training-dictionary codes
    for categorical ones; probabilities maps each categorical feature index
    to its m x n_classes matrix of averaged class probabilities.
    """

    x_hat: np.ndarray
    uncertainty: np.ndarray
    probabilities: dict[int, np.ndarray]
    class_dicts: dict[int, tuple[str, ...]]


def _target_for(train: Table, j: int) -> TargetColumn:
    kind = train.kind(j)
    if kind is FeatureKind.CATEGORICAL:
        return TargetColumn(
            values=train.values(j), kind=kind, class_names=train.dictionary(j)
        )
    return TargetColumn(values=train.values(j), kind=kind)


def fit(train: Table, config: RfodConfig, threads: int = 1) -> RfodModel:
    """Train one forest per feature on the remaining features, then prune.

    Forest j is seeded by (config.seed, j) and trees within it by the
    forest seed and their index, so results do not depend on `threads`.
    """
    config.validate()
    if train.n_features < 2:
        raise ValueError(f"need at least 2 features, got {train.n_features}")
    if train.n_rows < 2:
        raise ValueError(f"need at least 2 training rows, got {train.n_rows}")
    profiles = QuantileProfile.from_table(train)
    forests = []
    per_feature = []
    prune_total = 0.0
    started = time.perf_counter()
    for j in range(train.n_features):
        view = TableView.from_table(train, exclude=(j,))
        t0 = time.perf_counter()
        forest = fit_forest(
            view, _target_for(train, j), config.forest, derive_seed(config.seed, j), threads
        )
        t1 = time.perf_counter()
        forests.append(prune_forest(forest, config.beta))
        t2 = time.perf_counter()
        per_feature.append(t1 - t0)
        prune_total += t2 - t1
    timings = FitTimings(
        per_feature=tuple(per_feature),
        prune_total=prune_total,
        total=time.perf_counter() - started,
    )
    return RfodModel(
        schema=train.schema,
        forests=tuple(forests),
        quantile_profiles=profiles,
        config=config,
        timings=timings,
    )


def reprune(model: RfodModel, beta: float) -> RfodModel:
    """Re-apply pruning with a different retaining ratio (no refit needed)."""
    return replace(
        model,
        forests=tuple(prune_forest(f, beta) for f in model.forests),
        config=replace(model.config, beta=beta),
    )


def _check_schema(model: RfodModel, test: Table) -> None:
    if test.schema.columns != model.schema.columns:
        raise SchemaMismatchError(
            "test schema does not match the model: expected "
            f"{[(n, k.value) for n, k in model.schema.columns]}, got "
            f"{[(n, k.value) for n, k in test.schema.columns]}"
        )


def _translated_columns(model: RfodModel, test: Table) -> dict[int, np.ndarray]:
    """Test columns with categorical codes remapped to the training
    dictionaries; categories never seen in training become -1."""
    columns: dict[int, np.ndarray] = {}
    for j in range(test.n_features):
        if test.kind(j) is FeatureKind.NUMERICAL:
            columns[j] = test.values(j)
        else:
            train_code_of = {name: c for c, name in enumerate(model.class_dict(j))}
            mapping = np.array(
                [train_code_of.get(name, -1) for name in test.dictionary(j)],
                dtype=np.int64,
            )
            columns[j] = mapping[test.values(j)] if test.n_rows else test.values(j)
    return columns


def _forest_matrix(
    forest: Forest, columns: dict[int, np.ndarray], row_ids: np.ndarray, threads: int
) -> np.ndarray:
    trees = [forest.records[i].tree for i in forest.active]

    def run(tree):
        return predict_tree_batch(tree, columns, row_ids, n_classes=forest.n_classes)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, trees))
    else:
        parts = [run(tree) for tree in trees]
    return np.stack(parts)


def reconstruct(model: RfodModel, test: Table, threads: int = 1) -> ReconstructionResult:
    """Predict every cell of the test table from the other features.

    Numerical cells get the active-tree mean and the population standard
    deviation of per-tree predictions as uncertainty.  Categorical cells get
    the argmax of the averaged probability vector and an uncertainty of
    sqrt(p * (1 - p)), p being the fraction of trees agreeing with the vote.
    """
    _check_schema(model, test)
    m, d = test.n_rows, test.n_features
    columns = _translated_columns(model, test)
    row_ids = np.arange(m)
    x_hat = np.zeros((m, d))
    uncertainty = np.zeros((m, d))
    probabilities: dict[int, np.ndarray] = {}
    class_dicts: dict[int, tuple[str, ...]] = {}
    for j in range(d):
        mat = _forest_matrix(model.forests[j], columns, row_ids, threads)
        if test.kind(j) is FeatureKind.NUMERICAL:
            x_hat[:, j] = mat.mean(axis=0)
            uncertainty[:, j] = mat.std(axis=0)
        else:
            proba = mat.mean(axis=0)
            votes = proba.argmax(axis=1)
            agree = np.mean(mat.argmax(axis=2) == votes, axis=0)
            x_hat[:, j] = votes
            uncertainty[:, j] = np.sqrt(agree * (1.0 - agree))
            probabilities[j] = proba
            class_dicts[j] = model.class_dict(j)
    return ReconstructionResult(
        x_hat=x_hat,
        uncertainty=uncertainty,
        probabilities=probabilities,
        class_dicts=class_dicts,
    )


def detect(
    model: RfodModel,
    test: Table,
    threads: int = 1,
    alpha: float | None = None,
    distance_variant: DistanceVariant | None = None,
    aggregation: Aggregation | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Full inference: returns (cell score matrix, row score vector).

    The keyword overrides swap out scoring-stage settings without
    retraining; they default to the model's own config.
    """
    cfg = model.config
    alpha = cfg.alpha if alpha is None else alpha
    variant = cfg.distance_variant if distance_variant is None else distance_variant
    agg = cfg.aggregation if aggregation is None else aggregation
    recon = reconstruct(model, test, threads=threads)
    cell_scores = build_cell_scores(
        test, recon, model.quantile_profiles, alpha, variant, cap=cfg.quantile_cap
    )
    weights = confidence_weights(recon.uncertainty)
    row_scores = aggregate_rows(cell_scores, weights, agg)
    return cell_scores, row_scores


# -- persistence -----------------------------------------------------------


def save_model(model: RfodModel, out_dir: str | Path) -> None:
    """Write the model as a directory: manifest + one forest file per
    feature + the quantile profiles."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "schema": model.schema.to_json_obj(),
    }
    _dump_json(manifest, out / "manifest.json")
    for j, forest in enumerate(model.forests):
        _dump_json(forest_to_obj(forest), out / f"forest_{j}.json")
    _dump_json(
        {"format": FORMAT_VERSION, "values": model.quantile_profiles.to_json_obj()},
        out / "quantiles.json",
    )


def load_model(model_dir: str | Path) -> RfodModel:
    path = Path(model_dir)
    manifest = _read_json(path / "manifest.json")
    if manifest.get("format") != FORMAT_VERSION:
        raise LoadError(
            f"unsupported model format {manifest.get('format')!r} in {path}, "
            f"expected {FORMAT_VERSION!r}"
        )
    schema = Schema.from_json_obj(manifest["schema"])
    config = RfodConfig.from_dict(manifest["config"])
    forests = tuple(
        forest_from_obj(_read_json(path / f"forest_{j}.json"))
        for j in range(schema.n_features)
    )
    quantiles_obj = _read_json(path / "quantiles.json")
    if quantiles_obj.get("format") != FORMAT_VERSION:
        raise LoadError(f"unsupported quantile file format in {path}")
    return RfodModel(
        schema=schema,
        forests=forests,
        quantile_profiles=QuantileProfile.from_json_obj(quantiles_obj["values"]),
        config=config,
    )


def _dump_json(obj: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path} is not valid JSON: {exc}") from exc


def write_reconstruction_csvs(
    recon: ReconstructionResult, test: Table, out_dir: str | Path
) -> None:
    """Export a reconstruction as x_hat.csv, uncertainty.csv, and
    cat_probabilities.csv (long form, categorical values as strings)."""
    out = Path(out_dir)
    names = test.schema.names
    with open(out / "x_hat.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "column", "value"])
        for i in range(test.n_rows):
            for j, name in enumerate(names):
                if test.kind(j) is FeatureKind.NUMERICAL:
                    writer.writerow([i, name, repr(float(recon.x_hat[i, j]))])
                else:
                    writer.writerow([i, name, recon.class_dicts[j][int(recon.x_hat[i, j])]])
    with open(out / "uncertainty.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "column", "value"])
        for i in range(test.n_rows):
            for j, name in enumerate(names):
                writer.writerow([i, name, repr(float(recon.uncertainty[i, j]))])
    with open(out / "cat_probabilities.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "column", "category", "probability"])
        for j in sorted(recon.probabilities):
            proba = recon.probabilities[j]
            for i in range(test.n_rows):
                for c, cat in enumerate(recon.class_dicts[j]):
                    writer.writerow([i, names[j], cat, repr(float(proba[i, c]))])
