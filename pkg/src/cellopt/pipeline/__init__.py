"""Dataset generation and the end-to-end design workflow."""

from .dataset import (
    BACKENDS, CompositeDiodeBackend, Dataset, DatasetError, DriftDiffusionBackend,
    FEATURE_COLUMNS, LABELS, SurrogateBackend, TARGET_COLUMNS, TARGET_KEYS,
    config_digest, evaluate_row, generate_dataset, make_backend,
)
from .grid import Axis, GridSpec
from .workflows import (
    ClassifierRun, Labeling, StudyConfig, StudyError, end_to_end_study, feature_ablation,
    fit_metric_trees, fit_target, label_dataset, oversample, reconstruct_from_predictions,
    train_classifier,
)
