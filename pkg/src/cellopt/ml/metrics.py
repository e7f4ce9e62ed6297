"""Binary classification scores and exploratory statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClassificationReport:
    """Scores with the positive class treated as "true".

    ``confusion`` is ``[[TN, FP], [FN, TP]]``: rows are the truth, columns the
    prediction, negative class first. Undefined ratios are reported as 0.
    """

    precision: float
    recall: float
    f1: float
    accuracy: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "accuracy": self.accuracy, "confusion": self.confusion.tolist()}


def _ratio(a, b):
    return float(a / b) if b else 0.0


def classification_metrics(predictions, truth, positive=1) -> ClassificationReport:
    """Precision, recall, F1, accuracy and the 2x2 confusion matrix.

    Raises
    ------
    ValueError
        On empty input or length mismatch.
    """
    pred = np.asarray(predictions)
    true = np.asarray(truth)
    if pred.size == 0 or pred.shape != true.shape:
        raise ValueError("need non-empty predictions and truth of equal length")
    pp, tp_ = pred == positive, true == positive
    tp = int(np.sum(pp & tp_))
    fp = int(np.sum(pp & ~tp_))
    fn = int(np.sum(~pp & tp_))
    tn = int(np.sum(~pp & ~tp_))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return ClassificationReport(precision, recall, f1, (tp + tn) / pred.size,
                                np.array([[tn, fp], [fn, tp]]))


@dataclass
class ExploratoryStats:
    """Correlation matrix, principal-component variance ratios and box summaries.

    ``undefined`` names the constant columns whose correlations are NaN.
    """

    columns: list
    correlation: np.ndarray
    undefined: list
    pca_ratio: np.ndarray
    boxplot: dict

    def to_dict(self) -> dict:
        corr = [[None if np.isnan(v) else float(v) for v in row] for row in self.correlation]
        return {"columns": self.columns, "correlation": corr, "undefined": self.undefined,
                "pca_variance_ratio": self.pca_ratio.tolist(), "boxplot": self.boxplot}


def box_summary(v) -> dict:
    v = np.asarray(v, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo) & (v <= hi)]
    return {"min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": float(v.max()), "whisker_low": float(inside.min()),
            "whisker_high": float(inside.max()), "outliers": int(np.sum((v < lo) | (v > hi)))}


def exploratory_stats(features, targets, feature_names, target_names) -> ExploratoryStats:
    """Pearson correlations, PCA of standardized features and target quartiles.

    Parameters
    ----------
    features : array_like
        ``(n, p)``.
    targets : array_like
        ``(n, q)``.
    feature_names, target_names : sequence of str
    """
    F = np.asarray(features, dtype=float)
    T = np.asarray(targets, dtype=float)
    if len(F) == 0:
        raise ValueError("empty dataset")
    A = np.column_stack([F, T])
    names = list(feature_names) + list(target_names)
    sd = A.std(axis=0)
    const = sd == 0
    C = (A - A.mean(axis=0)) / np.where(const, 1.0, sd)
    corr = C.T @ C / len(A)
    corr[const, :] = np.nan
    corr[:, const] = np.nan
    np.fill_diagonal(corr, np.where(const, np.nan, 1.0))
    Fs = C[:, :F.shape[1]]
    eig = np.linalg.eigvalsh(np.cov(Fs, rowvar=False, bias=True).reshape(F.shape[1], -1))
    eig = np.clip(eig[::-1], 0.0, None)
    ratio = eig / eig.sum() if eig.sum() > 0 else eig
    box = {name: box_summary(T[:, i]) for i, name in enumerate(target_names)}
    return ExploratoryStats(names, corr, [n for n, c in zip(names, const) if c], ratio, box)
