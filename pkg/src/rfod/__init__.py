"""Random-forest outlier detection for mixed-type tabular data.

Anomaly detection is framed as feature-wise conditional reconstruction:
one random forest per feature predicts that feature from the others, cell
residuals are scaled into anomaly scores, and uncertainty-weighted
averaging turns them into row scores.
"""

from .data import (
    FeatureKind,
    QuantileProfile,
    Schema,
    SplitResult,
    Table,
    infer_schema,
    load_labeled_table,
    load_table,
    quantile,
    read_schema_json,
    split_for_eval,
    write_schema_json,
    write_table,
)
from .engine import (
    ReconstructionResult,
    RfodConfig,
    RfodModel,
    detect,
    fit,
    load_model,
    reconstruct,
    reprune,
    save_model,
)
from .errors import (
    ConfigError,
    DegenerateLabelsError,
    LoadError,
    RfodError,
    SchemaMismatchError,
)
from .evaluation import (
    EvalReport,
    StageTimings,
    auc_pr,
    auc_roc,
    build_report,
    log_loss,
    threshold_metrics,
)
from .forest import (
    Forest,
    ForestConfig,
    aggregate,
    fit_forest,
    oob_score,
    predict_per_tree,
    prune_forest,
)
from .scoring import (
    Aggregation,
    DistanceVariant,
    aggregate_rows,
    build_cell_scores,
    confidence_weights,
    distance_categorical,
    distance_numerical,
)
from .tree import TableView, TargetColumn, TreeConfig, fit_tree, predict_tree

__version__ = "0.1.0"

__all__ = [
    "Aggregation",
    "ConfigError",
    "DegenerateLabelsError",
    "DistanceVariant",
    "EvalReport",
    "FeatureKind",
    "Forest",
    "ForestConfig",
    "LoadError",
    "QuantileProfile",
    "ReconstructionResult",
    "RfodConfig",
    "RfodError",
    "RfodModel",
    "Schema",
    "SchemaMismatchError",
    "SplitResult",
    "StageTimings",
    "Table",
    "TableView",
    "TargetColumn",
    "TreeConfig",
    "aggregate",
    "aggregate_rows",
    "auc_pr",
    "auc_roc",
    "build_cell_scores",
    "build_report",
    "confidence_weights",
    "detect",
    "distance_categorical",
    "distance_numerical",
    "fit",
    "fit_forest",
    "fit_tree",
    "infer_schema",
    "load_labeled_table",
    "load_model",
    "load_table",
    "log_loss",
    "oob_score",
    "predict_per_tree",
    "predict_tree",
    "prune_forest",
    "quantile",
    "read_schema_json",
    "reconstruct",
    "reprune",
    "save_model",
    "split_for_eval",
    "threshold_metrics",
    "write_schema_json",
    "write_table",
]
