"""Synthetic minority oversampling."""

from __future__ import annotations

import numpy as np


class InsufficientDataError(ValueError):
    """Too few minority rows to interpolate between."""


def nearest_neighbors(points, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of each row (Euclidean)."""
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote_oversample(X, labels, seed: int = 42, k: int = 5, extra=None) -> tuple:
    """Balance two classes by interpolating new minority rows.

    Each new row picks a minority row uniformly at random, one of its ``k``
    nearest minority neighbours, and a uniform fraction along the segment
    between them. Distances are measured on min-max scaled features; as the
    scaling is affine the new rows lie on the same segments in raw units.

    Parameters
    ----------
    X : array_like
        ``(n, d)`` features.
    labels : array_like of int
        Class of each row (0 or 1).
    seed : int
    k : int
        Neighbour count (capped at minority size minus one).
    extra : array_like, optional
        Row-aligned values (e.g. targets) interpolated with the same fractions.

    Returns
    -------
    X_out, labels_out, synthetic[, extra_out]
        Originals first, unchanged, followed by the synthetic rows; a balanced
        input is returned as is.

    Raises
    ------
    InsufficientDataError
        If either class is absent or the minority has fewer than two rows.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels, dtype=int)
    counts = np.bincount(y, minlength=2)
    if counts.min() < 2 or len(counts) != 2:
        raise InsufficientDataError(f"class counts {counts.tolist()}: need two classes with >= 2 rows")
    minority = int(np.argmin(counts))
    n_new = int(counts.max() - counts.min())
    E = None if extra is None else np.asarray(extra, dtype=float).reshape(len(X), -1)
    synthetic = np.zeros(len(X), dtype=bool)
    if n_new == 0:
        return (X, y, synthetic) if E is None else (X, y, synthetic, E)
    idx = np.nonzero(y == minority)[0]
    lo, span = X.min(axis=0), np.ptp(X, axis=0)
    Z = (X[idx] - lo) / np.where(span > 0, span, 1.0)
    nn = nearest_neighbors(Z, min(k, len(idx) - 1))
    rng = np.random.default_rng(seed)
    base = rng.integers(len(idx), size=n_new)
    mate = nn[base, rng.integers(nn.shape[1], size=n_new)]
    gap = rng.random(n_new)[:, None]
    new_X = X[idx[base]] + gap * (X[idx[mate]] - X[idx[base]])
    out = (np.vstack([X, new_X]), np.concatenate([y, np.full(n_new, minority)]),
           np.concatenate([synthetic, np.ones(n_new, dtype=bool)]))
    if E is None:
        return out
    new_E = E[idx[base]] + gap * (E[idx[mate]] - E[idx[base]])
    return (*out, np.vstack([E, new_E]))
