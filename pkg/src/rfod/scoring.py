"""Cell-level anomaly distances and row-level aggregation.

Numerical cells are scored as |observed - reconstructed| over a spread of
the training column; the spread is a quantile range whose width depends on
the variant (full range, interquartile range, or a configurable alpha
range).  Categorical cells are scored by how much probability the model
gave the observed category.  Row scores average the cells, optionally
weighted by prediction confidence.
"""

from __future__ import annotations

import csv
import math
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .data import FeatureKind, QuantileProfile, Table

if TYPE_CHECKING:  # pragma: no cover
    from .engine import ReconstructionResult

RANGE_FLOOR = 1e-12
DEFAULT_SCORE_CAP = 1e6


class DistanceVariant(str, Enum):
    AGD = "agd"  # alpha-quantile scaling + probability-based categorical score
    GD = "gd"  # min-max scaling + hard categorical match
    GD_IQR = "gd-iqr"  # interquartile scaling + hard categorical match


class Aggregation(str, Enum):
    UWA = "uwa"  # confidence-weighted mean
    UNWEIGHTED_MEAN = "mean"


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must be in (0, 0.5), got {alpha}")


def numerical_range(
    profile: QuantileProfile, feature: int, alpha: float, variant: DistanceVariant
) -> float:
    """The training-column spread used as the distance denominator."""
    if variant is DistanceVariant.AGD:
        _check_alpha(alpha)
        return profile.quantile(feature, 1.0 - alpha) - profile.quantile(feature, alpha)
    if variant is DistanceVariant.GD:
        return profile.quantile(feature, 1.0) - profile.quantile(feature, 0.0)
    return profile.quantile(feature, 0.75) - profile.quantile(feature, 0.25)


def distance_numerical(
    x: float,
    x_hat: float,
    profile: QuantileProfile,
    feature: int,
    alpha: float,
    variant: DistanceVariant = DistanceVariant.AGD,
    cap: float = DEFAULT_SCORE_CAP,
) -> float:
    """Scaled absolute residual of one numerical cell.

    Near-constant training columns would make the denominator vanish, so a
    spread below 1e-12 falls back to that floor with the score capped.
    """
    if not (math.isfinite(x) and math.isfinite(x_hat)):
        raise ValueError(f"non-finite inputs x={x}, x_hat={x_hat}")
    spread = numerical_range(profile, feature, alpha, variant)
    diff = abs(x - x_hat)
    if spread < RANGE_FLOOR:
        return min(diff / RANGE_FLOOR, cap)
    return diff / spread


def distance_categorical(p_true: float) -> float:
    """Confidence-aware categorical score: one minus the probability the
    model assigned to the observed category."""
    if not 0.0 <= p_true <= 1.0:
        raise ValueError(f"p_true must be in [0, 1], got {p_true}")
    return 1.0 - p_true


def categorical_hard_mismatch(observed_code: int | None, predicted_code: int) -> float:
    """Binary-match categorical score used by the gd / gd-iqr variants."""
    return 0.0 if observed_code == predicted_code else 1.0


def build_cell_scores(
    test: Table,
    recon: "ReconstructionResult",
    profiles: QuantileProfile,
    alpha: float,
    variant: DistanceVariant = DistanceVariant.AGD,
    cap: float = DEFAULT_SCORE_CAP,
) -> np.ndarray:
    """Per-cell anomaly scores: m x d matrix of nonnegative reals.

    Categorical cells observed with a category absent from the training
    dictionary score 1 (a never-seen value has zero predicted probability).
    """
    m, d = recon.x_hat.shape
    if test.n_rows != m or test.n_features != d:
        raise ValueError(
            f"test table is {test.n_rows}x{test.n_features}, reconstruction is {m}x{d}"
        )
    scores = np.zeros((m, d))
    for j in range(d):
        if test.kind(j) is FeatureKind.NUMERICAL:
            x = test.values(j)
            x_hat = recon.x_hat[:, j]
            for i in range(m):
                scores[i, j] = distance_numerical(
                    float(x[i]), float(x_hat[i]), profiles, j, alpha, variant, cap
                )
        else:
            train_code_of = {name: c for c, name in enumerate(recon.class_dicts[j])}
            test_dict = test.dictionary(j)
            codes = test.values(j)
            if variant is DistanceVariant.AGD:
                probs = recon.probabilities[j]
                for i in range(m):
                    train_code = train_code_of.get(test_dict[int(codes[i])])
                    p_true = 0.0 if train_code is None else float(probs[i, train_code])
                    scores[i, j] = distance_categorical(p_true)
            else:
                predicted = recon.x_hat[:, j].astype(np.int64)
                for i in range(m):
                    train_code = train_code_of.get(test_dict[int(codes[i])])
                    scores[i, j] = categorical_hard_mismatch(train_code, int(predicted[i]))
    return scores


def confidence_weights(uncertainty: np.ndarray) -> np.ndarray:
    """Confidence weight matrix: 1 minus the row-normalized uncertainty.

    Rows with zero total uncertainty fall back to the uniform profile 1/d,
    so every weight row sums to d - 1 either way.
    """
    u = np.asarray(uncertainty, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"uncertainty must be 2-D, got shape {u.shape}")
    if (u < 0).any():
        raise ValueError("uncertainty must be nonnegative")
    m, d = u.shape
    normalized = np.empty_like(u)
    sums = u.sum(axis=1)
    has_mass = sums > 0
    normalized[has_mass] = u[has_mass] / sums[has_mass, None]
    normalized[~has_mass] = 1.0 / d
    return 1.0 - normalized


def aggregate_rows(
    cell_scores: np.ndarray,
    weights: np.ndarray,
    mode: Aggregation = Aggregation.UWA,
) -> np.ndarray:
    """Collapse the cell matrix to one score per row.

    UWA multiplies cells by their confidence weights before averaging; the
    unweighted mode is the plain mean over features.
    """
    s = np.asarray(cell_scores, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if s.shape != w.shape or s.ndim != 2:
        raise ValueError(f"shape mismatch: scores {s.shape}, weights {w.shape}")
    d = s.shape[1]
    if mode is Aggregation.UWA:
        return (w * s).sum(axis=1) / d
    return s.sum(axis=1) / d


# -- exports ---------------------------------------------------------------


def heatmap_bundle(
    feature_names: list[str] | tuple[str, ...], scores: np.ndarray
) -> dict:
    """The JSON heatmap payload consumed by external plotting tools."""
    return {
        "features": list(feature_names),
        "rows": list(range(scores.shape[0])),
        "scores": [[float(v) for v in row] for row in scores],
    }


def write_cell_matrix_csv(
    path: str | Path, feature_names: list[str] | tuple[str, ...], matrix: np.ndarray
) -> None:
    """Long-form (row id, column id, value) CSV for an m x d matrix."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "column", "value"])
        for i in range(matrix.shape[0]):
            for j, name in enumerate(feature_names):
                writer.writerow([i, name, repr(float(matrix[i, j]))])


def write_row_scores_csv(path: str | Path, row_scores: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "score"])
        for i, value in enumerate(row_scores):
            writer.writerow([i, repr(float(value))])


def read_cell_matrix_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a long-form cell matrix back to (feature names, m x d array)."""
    rows: dict[int, dict[str, float]] = {}
    features: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["row", "column", "value"]:
            raise ValueError(f"{path}: expected header row,column,value")
        for rec in reader:
            i = int(rec["row"])
            name = rec["column"]
            if name not in features:
                features.append(name)
            rows.setdefault(i, {})[name] = float(rec["value"])
    matrix = np.zeros((len(rows), len(features)))
    for i in sorted(rows):
        for j, name in enumerate(features):
            matrix[i, j] = rows[i][name]
    return features, matrix
