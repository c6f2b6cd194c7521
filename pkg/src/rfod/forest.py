"""Bootstrap tree ensembles with out-of-bag quality scores and pruning.

Each tree records its bootstrap multiset and the complementary out-of-bag
rows; the OOB rows act as a free validation set that yields a per-tree
quality score (R-squared for regression targets, AUC-ROC for categorical
ones).  Pruning keeps the top-scored fraction of trees; the full tree list
is retained so a different retaining ratio can be re-applied later.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, LoadError
from .evaluation import auc_roc
from .seeding import derive_rng
from .tree import (
    TableView,
    TargetColumn,
    TreeConfig,
    TreeNode,
    fit_tree,
    predict_tree,
    predict_tree_batch,
    tree_from_obj,
    tree_to_obj,
)

FORMAT_VERSION = "rfod-v1"

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class ForestConfig:
    """Ensemble size and per-tree growth settings."""

    t: int = 100
    tree: TreeConfig = TreeConfig()
    bootstrap_fraction: float = 1.0

    def validate(self) -> None:
        if self.t < 1:
            raise ConfigError(f"forest needs at least 1 tree, got t={self.t}")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ConfigError(
                f"bootstrap_fraction must be in (0, 1], got {self.bootstrap_fraction}"
            )


@dataclass(frozen=True, eq=False)
class TreeRecord:
    tree: TreeNode
    bootstrap_ids: np.ndarray | None
    oob_ids: np.ndarray | None
    oob_quality: float  # -inf when the tree has no OOB rows


@dataclass(frozen=True, eq=False)
class Forest:
    """A fitted ensemble plus the currently active (retained) tree indices.

    `active` holds original tree indices sorted by descending OOB quality
    (ties by ascending index); pruning shortens it without destroying trees.
    """

    mode: str
    classes: tuple[str, ...] | None
    records: tuple[TreeRecord, ...]
    active: tuple[int, ...]
    beta: float
    t_total: int

    @property
    def n_classes(self) -> int | None:
        return len(self.classes) if self.classes is not None else None


def _quality_ranking(qualities: Sequence[float]) -> tuple[int, ...]:
    return tuple(sorted(range(len(qualities)), key=lambda i: (-qualities[i], i)))


def fit_forest(
    predictors: TableView,
    target: TargetColumn,
    config: ForestConfig,
    seed: int,
    threads: int = 1,
) -> Forest:
    """Fit `t` trees on independent bootstraps and score each on its OOB rows.

    Tree i draws its bootstrap and all growth randomness from a generator
    seeded by (seed, i), so the result is independent of how the per-tree
    work is scheduled across threads.
    """
    config.validate()
    n = target.values.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 training rows, got {n}")
    mode = CLASSIFICATION if target.is_classification else REGRESSION
    draws = max(1, round(config.bootstrap_fraction * n))

    def build(i: int) -> TreeRecord:
        rng = derive_rng(seed, i)
        bootstrap = rng.choice(n, size=draws, replace=True)
        oob = np.setdiff1d(np.arange(n), bootstrap)
        tree = fit_tree(predictors, target, bootstrap, config.tree, rng)
        record = TreeRecord(tree=tree, bootstrap_ids=bootstrap, oob_ids=oob, oob_quality=0.0)
        quality = _oob_quality(record, predictors, target)
        return dataclasses.replace(record, oob_quality=quality)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = tuple(pool.map(build, range(config.t)))
    else:
        records = tuple(build(i) for i in range(config.t))

    return Forest(
        mode=mode,
        classes=target.class_names,
        records=records,
        active=_quality_ranking([r.oob_quality for r in records]),
        beta=1.0,
        t_total=config.t,
    )


def oob_score(
    forest: Forest, tree_index: int, predictors: TableView, target: TargetColumn
) -> float:
    """Out-of-bag quality of one tree: R-squared or macro one-vs-rest AUC.

    Degenerate cases get neutral scores instead of errors: trees without OOB
    rows score -inf (rank last); a constant regression OOB target scores 1
    when reproduced exactly and 0 otherwise; a single-class OOB target in
    classification scores 0.5.
    """
    return _oob_quality(forest.records[tree_index], predictors, target)


def _oob_quality(record: TreeRecord, predictors: TableView, target: TargetColumn) -> float:
    oob = record.oob_ids
    if oob is None or oob.size == 0:
        return float("-inf")
    columns = {f: col for f, col in zip(predictors.feature_indices, predictors.columns)}
    truth = target.values[oob]
    if target.is_classification:
        probs = predict_tree_batch(record.tree, columns, oob, n_classes=target.n_classes)
        return _macro_ovr_auc(probs, truth)
    preds = predict_tree_batch(record.tree, columns, oob)
    sse = float(np.sum((truth - preds) ** 2))
    sst = float(np.sum((truth - truth.mean()) ** 2))
    if sst == 0.0:
        # tolerance absorbs float noise from leaf means of identical values
        return 1.0 if sse <= 1e-12 * (1.0 + float(np.sum(truth * truth))) else 0.0
    return 1.0 - sse / sst


def _macro_ovr_auc(probs: np.ndarray, truth: np.ndarray) -> float:
    aucs = []
    for c in range(probs.shape[1]):
        positives = truth == c
        if positives.any() and not positives.all():
            aucs.append(auc_roc(probs[:, c], positives.astype(np.int64)))
    if not aucs:
        return 0.5
    return float(np.mean(aucs))


def prune_forest(forest: Forest, beta: float) -> Forest:
    """Retain the max(1, floor(beta * t)) best trees by OOB quality.

    The clamp to one tree keeps the forest able to predict even when
    floor(beta * t) would be zero.  Re-applying with beta = 1 restores the
    full ensemble.
    """
    if not 0.0 < beta <= 1.0:
        raise ConfigError(f"beta must be in (0, 1], got {beta}")
    k = max(1, int(math.floor(beta * forest.t_total)))
    ranking = _quality_ranking([r.oob_quality for r in forest.records])
    return dataclasses.replace(forest, active=ranking[:k], beta=beta)


def predict_per_tree(forest: Forest, row: Sequence[float | int]) -> list:
    """Per-active-tree predictions for one row, in active (ranked) order."""
    return [predict_tree(forest.records[i].tree, row) for i in forest.active]


def predict_matrix(forest: Forest, columns: dict[int, np.ndarray], row_ids: np.ndarray):
    """Stacked per-active-tree predictions for many rows.

    Returns shape (n_active, n_rows) for regression or
    (n_active, n_rows, n_classes) for classification.  Each tree's pass is
    independent, so callers may compute trees on separate threads and stack.
    """
    return np.stack(
        [
            predict_tree_batch(
                forest.records[i].tree, columns, row_ids, n_classes=forest.n_classes
            )
            for i in forest.active
        ]
    )


@dataclass(frozen=True)
class AggregateResult:
    point: float | int
    proba: np.ndarray | None
    uncertainty: float


def aggregate(per_tree: Sequence, mode: str) -> AggregateResult:
    """Combine per-tree predictions into a point, probabilities, and spread.

    Regression: mean prediction with the population standard deviation as
    uncertainty (zero for a single tree).  Classification: element-wise mean
    of the probability vectors; the point is the argmax (ties to the lowest
    class id) and uncertainty is sqrt(p*(1-p)) where p is the fraction of
    trees whose own argmax agrees with the ensemble vote.
    """
    if len(per_tree) == 0:
        raise ValueError("aggregate needs at least one tree prediction")
    if mode == REGRESSION:
        arr = np.asarray(per_tree, dtype=np.float64)
        return AggregateResult(
            point=float(arr.mean()), proba=None, uncertainty=float(arr.std())
        )
    mat = np.stack([np.asarray(p, dtype=np.float64) for p in per_tree])
    proba = mat.mean(axis=0)
    point = int(np.argmax(proba))
    agree = float(np.mean(mat.argmax(axis=1) == point))
    return AggregateResult(
        point=point, proba=proba, uncertainty=math.sqrt(agree * (1.0 - agree))
    )


# -- persistence ----------------------------------------------------------


def forest_to_obj(forest: Forest) -> dict:
    """JSON-ready envelope; -inf OOB scores are encoded as null."""
    return {
        "format": FORMAT_VERSION,
        "mode": forest.mode,
        "classes": list(forest.classes) if forest.classes is not None else None,
        "t_total": forest.t_total,
        "beta": forest.beta,
        "trees": [
            {
                "nodes": tree_to_obj(r.tree),
                "oob_quality": None if math.isinf(r.oob_quality) else r.oob_quality,
            }
            for r in forest.records
        ],
    }


def forest_from_obj(obj: dict) -> Forest:
    if obj.get("format") != FORMAT_VERSION:
        raise LoadError(
            f"unsupported forest format {obj.get('format')!r}, expected {FORMAT_VERSION!r}"
        )
    records = tuple(
        TreeRecord(
            tree=tree_from_obj(entry["nodes"]),
            bootstrap_ids=None,
            oob_ids=None,
            oob_quality=float("-inf")
            if entry["oob_quality"] is None
            else float(entry["oob_quality"]),
        )
        for entry in obj["trees"]
    )
    forest = Forest(
        mode=str(obj["mode"]),
        classes=tuple(obj["classes"]) if obj["classes"] is not None else None,
        records=records,
        active=_quality_ranking([r.oob_quality for r in records]),
        beta=1.0,
        t_total=int(obj["t_total"]),
    )
    return prune_forest(forest, float(obj["beta"]))
