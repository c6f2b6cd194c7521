"""Synthetic contextual-anomaly benchmark shared by the test suite.

Normal rows follow x2 = f(x1) + noise with a categorical band keyed to x1.
Anomalies resample every cell independently from the column marginals, so
each value alone looks plausible but the joint combination is wrong.  A
marginal-only detector therefore has (near) nothing to work with, while a
conditional model separates the classes.
"""

from __future__ import annotations

import numpy as np

from rfod.data import FeatureKind, Schema, Table

BENCH_SCHEMA = Schema(
    (
        ("x1", FeatureKind.NUMERICAL),
        ("x2", FeatureKind.NUMERICAL),
        ("band", FeatureKind.CATEGORICAL),
    )
)
BAND_NAMES = ("low", "mid", "high")


def make_benchmark(
    n_normal: int = 2000, n_anomaly: int = 100, seed: int = 101
) -> tuple[Table, np.ndarray]:
    """Build (table, labels); labels are 0 for normal rows, 1 for anomalies."""
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(0.0, 10.0, n_normal)
    x2 = 3.0 * np.sin(x1) + 0.5 * x1 + rng.normal(0.0, 0.4, n_normal)
    band = np.digitize(x1, [10.0 / 3.0, 20.0 / 3.0]).astype(np.int64)
    flips = rng.random(n_normal) < 0.05
    band[flips] = rng.integers(0, 3, int(flips.sum()))

    # anomalies: every cell drawn independently from its column's marginal
    a_x1 = x1[rng.integers(0, n_normal, n_anomaly)]
    a_x2 = x2[rng.integers(0, n_normal, n_anomaly)]
    a_band = band[rng.integers(0, n_normal, n_anomaly)]

    columns = (
        np.concatenate([x1, a_x1]),
        np.concatenate([x2, a_x2]),
        np.concatenate([band, a_band]),
    )
    table = Table(
        BENCH_SCHEMA,
        columns,
        (None, None, BAND_NAMES),
        n_normal + n_anomaly,
    )
    labels = np.concatenate(
        [np.zeros(n_normal, dtype=np.int64), np.ones(n_anomaly, dtype=np.int64)]
    )
    return table, labels


def zscore_baseline(train: Table, test: Table) -> np.ndarray:
    """Marginal-only oracle: mean absolute z-score over numerical columns."""
    scores = np.zeros(test.n_rows)
    n_num = 0
    for j in range(train.n_features):
        if train.kind(j) is not FeatureKind.NUMERICAL:
            continue
        col = train.values(j)
        mu, sigma = col.mean(), col.std()
        if sigma == 0:
            continue
        scores += np.abs(test.values(j) - mu) / sigma
        n_num += 1
    return scores / max(n_num, 1)
