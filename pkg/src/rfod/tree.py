"""CART-style decision trees over mixed numerical/categorical predictors.

Regression trees split on variance reduction, classification trees on Gini;
classification leaves keep full class-count histograms.  Trees reference
predictors by their position in the owning table's schema, so a fitted tree
can be applied to any row of that schema.

Determinism contract: given the same inputs, config, and generator state,
`fit_tree` always builds the same tree.  Candidate splits are enumerated in
a canonical order (ascending feature index, ascending threshold, smallest
left set) and ties are broken by taking the first best.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import FeatureKind, Table
from .errors import ConfigError

# Splits must beat this impurity decrease; guards against float-noise splits.
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class SplitRule:
    """One split test: numerical threshold or categorical left/right sets.

    Numerical rows go left iff value <= threshold (threshold strictly between
    two observed values).  Categorical rows go left iff their code is in
    left_set; codes unseen at this node during training fall in neither set
    and are routed to the larger child at prediction time.
    """

    feature: int
    threshold: float | None = None
    left_set: frozenset[int] | None = None
    right_set: frozenset[int] | None = None

    @property
    def is_numerical(self) -> bool:
        return self.threshold is not None


@dataclass(frozen=True, eq=False)
class Leaf:
    n_samples: int
    mean: float | None = None  # regression
    counts: np.ndarray | None = None  # classification histogram over the class dict


@dataclass(frozen=True, eq=False)
class Split:
    rule: SplitRule
    left: "TreeNode"
    right: "TreeNode"
    n_samples: int


TreeNode = Leaf | Split


@dataclass(frozen=True)
class TreeConfig:
    """Tree growth controls; None fields resolve to mode-dependent defaults.

    Defaults follow common random-forest practice: mtry = ceil(sqrt(p)) for
    classification and ceil(p/3) for regression over p predictors; leaves of
    at least 1 (classification) or 5 (regression) samples; unlimited depth.
    """

    mtry: int | None = None
    max_depth: int | None = None
    min_samples_leaf: int | None = None
    min_samples_split: int | None = None
    max_categorical_partitions: int = 32

    def resolve(self, n_predictors: int, classification: bool) -> "_Resolved":
        if n_predictors < 1:
            raise ConfigError("need at least one predictor feature")
        mtry = self.mtry
        if mtry is None:
            mtry = math.ceil(math.sqrt(n_predictors)) if classification else math.ceil(
                n_predictors / 3
            )
            mtry = max(1, mtry)
        if not 1 <= mtry <= n_predictors:
            raise ConfigError(
                f"mtry must be in [1, {n_predictors}] for {n_predictors} predictors, got {mtry}"
            )
        msl = self.min_samples_leaf
        if msl is None:
            msl = 1 if classification else 5
        if msl < 1:
            raise ConfigError(f"min_samples_leaf must be >= 1, got {msl}")
        mss = self.min_samples_split
        if mss is None:
            mss = 2 * msl
        if mss < 2 * msl:
            raise ConfigError(
                f"min_samples_split ({mss}) must be >= 2 * min_samples_leaf ({msl})"
            )
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.max_categorical_partitions < 1:
            raise ConfigError("max_categorical_partitions must be >= 1")
        return _Resolved(mtry, self.max_depth, msl, mss, self.max_categorical_partitions)


@dataclass(frozen=True)
class _Resolved:
    mtry: int
    max_depth: int | None
    min_samples_leaf: int
    min_samples_split: int
    max_categorical_partitions: int


@dataclass(frozen=True)
class TableView:
    """Predictor columns of a table, tagged with their schema positions."""

    feature_indices: tuple[int, ...]
    kinds: tuple[FeatureKind, ...]
    columns: tuple[np.ndarray, ...]

    @classmethod
    def from_table(cls, table: Table, exclude: Sequence[int] = ()) -> "TableView":
        skip = set(exclude)
        idx = tuple(j for j in range(table.n_features) if j not in skip)
        return cls(
            feature_indices=idx,
            kinds=tuple(table.kind(j) for j in idx),
            columns=tuple(table.values(j) for j in idx),
        )

    @property
    def n_predictors(self) -> int:
        return len(self.feature_indices)


@dataclass(frozen=True)
class TargetColumn:
    """Target values with their kind; class_names is the full dictionary."""

    values: np.ndarray
    kind: FeatureKind
    class_names: tuple[str, ...] | None = None

    @property
    def is_classification(self) -> bool:
        return self.kind is FeatureKind.CATEGORICAL

    @property
    def n_classes(self) -> int | None:
        return len(self.class_names) if self.class_names is not None else None


@dataclass(frozen=True)
class _Candidate:
    gain: float
    rule: SplitRule
    left_mask: np.ndarray


def fit_tree(
    predictors: TableView,
    target: TargetColumn,
    sample_ids: np.ndarray,
    config: TreeConfig,
    rng: np.random.Generator,
) -> TreeNode:
    """Grow one tree by greedy recursive partitioning of sample_ids.

    sample_ids is a multiset of row indices (bootstrap repeats allowed).
    At each node, `mtry` predictors are sampled without replacement and the
    split with the largest strictly positive impurity decrease wins.
    """
    ids = np.asarray(sample_ids, dtype=np.intp)
    if ids.size == 0:
        raise ValueError("fit_tree needs at least one sample")
    classification = target.is_classification
    if classification and not target.n_classes:
        raise ValueError("classification target needs n_classes")
    resolved = config.resolve(predictors.n_predictors, classification)
    builder = _TreeBuilder(predictors, target, resolved, rng)
    return builder.grow(ids, depth=0)


class _TreeBuilder:
    def __init__(
        self,
        view: TableView,
        target: TargetColumn,
        cfg: _Resolved,
        rng: np.random.Generator,
    ):
        self.view = view
        self.target = target
        self.cfg = cfg
        self.rng = rng
        self.classification = target.is_classification
        self.n_classes = target.n_classes or 0

    def grow(self, ids: np.ndarray, depth: int) -> TreeNode:
        y = self.target.values[ids]
        n = ids.size
        pure = bool(np.all(y == y[0]))
        at_depth = self.cfg.max_depth is not None and depth >= self.cfg.max_depth
        if pure or at_depth or n < self.cfg.min_samples_split:
            return self._leaf(y)
        best = self._best_split(ids, y)
        if best is None:
            return self._leaf(y)
        left = self.grow(ids[best.left_mask], depth + 1)
        right = self.grow(ids[~best.left_mask], depth + 1)
        return Split(rule=best.rule, left=left, right=right, n_samples=int(n))

    def _leaf(self, y: np.ndarray) -> Leaf:
        if self.classification:
            counts = np.bincount(y, minlength=self.n_classes)
            return Leaf(n_samples=int(y.size), counts=counts)
        return Leaf(n_samples=int(y.size), mean=float(y.mean()))

    def _node_impurity(self, y: np.ndarray) -> float:
        if self.classification:
            p = np.bincount(y, minlength=self.n_classes) / y.size
            return float(1.0 - np.sum(p * p))
        return float(np.var(y))

    def _best_split(self, ids: np.ndarray, y: np.ndarray) -> _Candidate | None:
        p = self.view.n_predictors
        sampled = np.sort(self.rng.choice(p, size=min(self.cfg.mtry, p), replace=False))
        parent = self._node_impurity(y)
        best: _Candidate | None = None
        for pos in sampled:
            x = self.view.columns[pos][ids]
            if self.view.kinds[pos] is FeatureKind.NUMERICAL:
                cand = self._split_numerical(int(pos), x, y, parent)
            else:
                cand = self._split_categorical(int(pos), x, y, parent)
            if cand is not None and (best is None or cand.gain > best.gain):
                best = cand
        return best

    # -- numerical splits ------------------------------------------------

    def _split_numerical(
        self, pos: int, x: np.ndarray, y: np.ndarray, parent: float
    ) -> _Candidate | None:
        n = x.size
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cuts = np.flatnonzero(xs[1:] > xs[:-1])  # cut between i and i+1
        if cuts.size == 0:
            return None
        nl = cuts + 1
        nr = n - nl
        ok = (nl >= self.cfg.min_samples_leaf) & (nr >= self.cfg.min_samples_leaf)
        thresholds = (xs[cuts] + xs[cuts + 1]) / 2.0
        # midpoint must stay strictly between adjacent observed values
        ok &= (thresholds > xs[cuts]) & (thresholds < xs[cuts + 1])
        if not ok.any():
            return None
        cuts, nl, nr, thresholds = cuts[ok], nl[ok], nr[ok], thresholds[ok]
        gains = self._prefix_gains(y[order], cuts, nl, nr, parent)
        k = int(np.argmax(gains))  # first max -> lowest threshold
        if gains[k] <= MIN_GAIN:
            return None
        rule = SplitRule(
            feature=self.view.feature_indices[pos], threshold=float(thresholds[k])
        )
        return _Candidate(gain=float(gains[k]), rule=rule, left_mask=x <= thresholds[k])

    def _prefix_gains(
        self,
        y_sorted: np.ndarray,
        cuts: np.ndarray,
        nl: np.ndarray,
        nr: np.ndarray,
        parent: float,
    ) -> np.ndarray:
        """Impurity decrease for each cut of a pre-sorted target."""
        n = y_sorted.size
        if self.classification:
            onehot = np.zeros((n, self.n_classes))
            onehot[np.arange(n), y_sorted] = 1.0
            cum = onehot.cumsum(axis=0)
            left = cum[cuts]
            right = cum[-1] - left
            gini_l = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
            gini_r = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
            return parent - (nl * gini_l + nr * gini_r) / n
        yc = y_sorted - y_sorted.mean()  # centering stabilises the sums
        c1 = np.cumsum(yc)
        c2 = np.cumsum(yc * yc)
        sse_l = np.maximum(c2[cuts] - c1[cuts] ** 2 / nl, 0.0)
        sse_r = np.maximum((c2[-1] - c2[cuts]) - (c1[-1] - c1[cuts]) ** 2 / nr, 0.0)
        return (c2[-1] - sse_l - sse_r) / n  # parent SSE/n == variance

    # -- categorical splits ----------------------------------------------

    def _split_categorical(
        self, pos: int, v: np.ndarray, y: np.ndarray, parent: float
    ) -> _Candidate | None:
        cats, inv = np.unique(v, return_inverse=True)
        if cats.size < 2:
            return None
        if self.classification and self.n_classes >= 3:
            return self._split_categorical_random(pos, v, y, cats, inv, parent)
        return self._split_categorical_ordered(pos, v, y, cats, inv, parent)

    def _split_categorical_ordered(
        self,
        pos: int,
        v: np.ndarray,
        y: np.ndarray,
        cats: np.ndarray,
        inv: np.ndarray,
        parent: float,
    ) -> _Candidate | None:
        # Order categories by mean target (regression) or positive-class rate
        # (binary); prefix cuts in that order contain the optimal subset.
        stat_y = (y == 1).astype(np.float64) if self.classification else y
        sums = np.bincount(inv, weights=stat_y, minlength=cats.size)
        sizes = np.bincount(inv, minlength=cats.size)
        means = sums / sizes
        order = np.lexsort((cats, means))
        rank = np.empty(cats.size, dtype=np.intp)
        rank[order] = np.arange(cats.size)
        r = rank[inv]
        row_order = np.argsort(r, kind="stable")
        rs = r[row_order]
        n = v.size
        cuts = np.flatnonzero(rs[1:] > rs[:-1])
        if cuts.size == 0:
            return None
        nl = cuts + 1
        nr = n - nl
        ok = (nl >= self.cfg.min_samples_leaf) & (nr >= self.cfg.min_samples_leaf)
        if not ok.any():
            return None
        cuts, nl, nr = cuts[ok], nl[ok], nr[ok]
        gains = self._prefix_gains(y[row_order], cuts, nl, nr, parent)
        top = float(np.max(gains))
        if top <= MIN_GAIN:
            return None
        ordered_cats = cats[order]
        # among equal-gain cuts keep the lexicographically smallest left set
        best_left: tuple[int, ...] | None = None
        best_rank = -1
        for k in np.flatnonzero(gains == top):
            cut_rank = int(rs[cuts[k]])
            left = tuple(sorted(int(c) for c in ordered_cats[: cut_rank + 1]))
            if best_left is None or left < best_left:
                best_left, best_rank = left, cut_rank
        rule = SplitRule(
            feature=self.view.feature_indices[pos],
            left_set=frozenset(best_left or ()),
            right_set=frozenset(int(c) for c in ordered_cats[best_rank + 1 :]),
        )
        return _Candidate(gain=top, rule=rule, left_mask=r <= best_rank)

    def _split_categorical_random(
        self,
        pos: int,
        v: np.ndarray,
        y: np.ndarray,
        cats: np.ndarray,
        inv: np.ndarray,
        parent: float,
    ) -> _Candidate | None:
        # Exact subset search is exponential in the multiclass case; sample a
        # fixed budget of random binary partitions instead.
        n = v.size
        draws = self.rng.integers(
            0, 2, size=(self.cfg.max_categorical_partitions, cats.size)
        )
        best_gain = MIN_GAIN
        best_left: tuple[int, ...] | None = None
        best_mask: np.ndarray | None = None
        for d in range(draws.shape[0]):
            side = draws[d]
            if side.all() or not side.any():
                continue
            mask = side[inv] == 1
            nl = int(mask.sum())
            nr = n - nl
            if nl < self.cfg.min_samples_leaf or nr < self.cfg.min_samples_leaf:
                continue
            cl = np.bincount(y[mask], minlength=self.n_classes)
            cr = np.bincount(y[~mask], minlength=self.n_classes)
            gini_l = 1.0 - float(np.sum((cl / nl) ** 2))
            gini_r = 1.0 - float(np.sum((cr / nr) ** 2))
            gain = parent - (nl * gini_l + nr * gini_r) / n
            left = tuple(sorted(int(c) for c in cats[side == 1]))
            if gain > best_gain or (
                gain == best_gain and best_left is not None and left < best_left
            ):
                best_gain, best_left, best_mask = gain, left, mask
        if best_left is None or best_mask is None:
            return None
        rule = SplitRule(
            feature=self.view.feature_indices[pos],
            left_set=frozenset(best_left),
            right_set=frozenset(int(c) for c in cats) - frozenset(best_left),
        )
        return _Candidate(gain=best_gain, rule=rule, left_mask=best_mask)


# -- prediction ----------------------------------------------------------


def predict_tree(tree: TreeNode, row: Sequence[float | int]) -> float | np.ndarray:
    """Route one row to its leaf.

    Returns the leaf mean for regression trees, the normalized class
    probability vector for classification trees.  Category codes unseen at a
    split during training go to the child with more training samples.
    """
    node = tree
    while isinstance(node, Split):
        rule = node.rule
        if rule.threshold is not None:
            node = node.left if row[rule.feature] <= rule.threshold else node.right
        else:
            code = int(row[rule.feature])
            if code in rule.left_set:  # type: ignore[operator]
                node = node.left
            elif code in rule.right_set:  # type: ignore[operator]
                node = node.right
            else:
                node = node.left if _size(node.left) >= _size(node.right) else node.right
    if node.counts is not None:
        return node.counts / node.counts.sum()
    return float(node.mean)  # type: ignore[arg-type]


def _size(node: TreeNode) -> int:
    return node.n_samples


def predict_tree_batch(
    tree: TreeNode,
    columns: Mapping[int, np.ndarray],
    row_ids: np.ndarray,
    n_classes: int | None = None,
) -> np.ndarray:
    """Vectorized prediction for many rows at once.

    `columns` maps schema positions to full-length arrays.  Returns a float
    vector (regression) or an (n, n_classes) probability matrix; identical
    cell-for-cell to repeated predict_tree calls.
    """
    n = row_ids.size
    if n_classes:
        out = np.empty((n, n_classes))
    else:
        out = np.empty(n)
    _fill_batch(tree, columns, row_ids, np.arange(n), out)
    return out


def _fill_batch(
    node: TreeNode,
    columns: Mapping[int, np.ndarray],
    row_ids: np.ndarray,
    positions: np.ndarray,
    out: np.ndarray,
) -> None:
    if isinstance(node, Leaf):
        if node.counts is not None:
            out[positions] = node.counts / node.counts.sum()
        else:
            out[positions] = node.mean
        return
    rule = node.rule
    vals = columns[rule.feature][row_ids]
    if rule.threshold is not None:
        go_left = vals <= rule.threshold
    else:
        left_arr = np.fromiter(sorted(rule.left_set or ()), dtype=np.int64)
        right_arr = np.fromiter(sorted(rule.right_set or ()), dtype=np.int64)
        in_left = np.isin(vals, left_arr)
        in_right = np.isin(vals, right_arr)
        unseen = ~(in_left | in_right)
        go_left = in_left
        if unseen.any():
            go_left = go_left | (unseen & (_size(node.left) >= _size(node.right)))
    _fill_batch(node.left, columns, row_ids[go_left], positions[go_left], out)
    _fill_batch(node.right, columns, row_ids[~go_left], positions[~go_left], out)


# -- serialization -------------------------------------------------------


def tree_to_obj(tree: TreeNode) -> list[dict]:
    """Flatten a tree to a node list (children referenced by index)."""
    nodes: list[dict] = []

    def visit(node: TreeNode) -> int:
        idx = len(nodes)
        nodes.append({})
        if isinstance(node, Leaf):
            entry: dict = {"type": "leaf", "n": node.n_samples}
            if node.counts is not None:
                entry["counts"] = [int(c) for c in node.counts]
            else:
                entry["mean"] = node.mean
        else:
            entry = {"type": "split", "n": node.n_samples, "feature": node.rule.feature}
            if node.rule.threshold is not None:
                entry["threshold"] = node.rule.threshold
            else:
                entry["left_set"] = sorted(node.rule.left_set or ())
                entry["right_set"] = sorted(node.rule.right_set or ())
            entry["left"] = visit(node.left)
            entry["right"] = visit(node.right)
        nodes[idx] = entry
        return idx

    visit(tree)
    return nodes


def tree_from_obj(nodes: list[dict]) -> TreeNode:
    def build(idx: int) -> TreeNode:
        entry = nodes[idx]
        if entry["type"] == "leaf":
            if "counts" in entry:
                return Leaf(
                    n_samples=int(entry["n"]),
                    counts=np.asarray(entry["counts"], dtype=np.int64),
                )
            return Leaf(n_samples=int(entry["n"]), mean=float(entry["mean"]))
        if "threshold" in entry:
            rule = SplitRule(feature=int(entry["feature"]), threshold=float(entry["threshold"]))
        else:
            rule = SplitRule(
                feature=int(entry["feature"]),
                left_set=frozenset(int(c) for c in entry["left_set"]),
                right_set=frozenset(int(c) for c in entry["right_set"]),
            )
        return Split(
            rule=rule,
            left=build(int(entry["left"])),
            right=build(int(entry["right"])),
            n_samples=int(entry["n"]),
        )

    return build(0)


def split_rules(tree: TreeNode) -> list[SplitRule]:
    """All split rules in the tree (preorder); handy for structural checks."""
    rules: list[SplitRule] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Split):
            rules.append(node.rule)
            stack.append(node.right)
            stack.append(node.left)
    return rules
