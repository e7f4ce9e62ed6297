"""Exact greedy regression trees (squared-error criterion)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

_LEAF = -1


@dataclass(frozen=True)
class CartModel:
    """Flat array form of a binary regression tree.

    Node ``i`` splits on ``feature[i] <= threshold[i]`` into ``left[i]`` and
    ``right[i]``; leaves have ``feature == -1`` and predict ``value[i]``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    min_samples_split: int = 2
    min_samples_leaf: int = 1

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == _LEAF))

    def predict(self, X):
        """Leaf mean for each row; a float for a single 1-D feature vector."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] != _LEAF
        while active.any():
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] != _LEAF
        out = self.value[node]
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        def node(i):
            if self.feature[i] == _LEAF:
                return {"value": float(self.value[i]), "n_samples": int(self.n_samples[i])}
            return {"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                    "n_samples": int(self.n_samples[i]),
                    "left": node(self.left[i]), "right": node(self.right[i])}
        return {"kind": "cart", "criterion": "squared_error",
                "min_samples_split": self.min_samples_split,
                "min_samples_leaf": self.min_samples_leaf, "tree": node(0)}

    @classmethod
    def from_dict(cls, d: dict) -> "CartModel":
        cols = {k: [] for k in ("feature", "threshold", "left", "right", "value", "n_samples")}
        stack = [(d["tree"], None, None)]
        while stack:
            nd, parent, side = stack.pop()
            i = len(cols["feature"])
            if parent is not None:
                cols[side][parent] = i
            leaf = "value" in nd
            cols["feature"].append(_LEAF if leaf else nd["feature"])
            cols["threshold"].append(np.nan if leaf else nd["threshold"])
            cols["left"].append(_LEAF)
            cols["right"].append(_LEAF)
            cols["value"].append(nd.get("value", np.nan))
            cols["n_samples"].append(nd["n_samples"])
            if not leaf:
                stack.append((nd["right"], i, "right"))
                stack.append((nd["left"], i, "left"))
        return cls(*(np.array(cols[k], dtype=float if k in ("threshold", "value") else int)
                     for k in cols), d["min_samples_split"], d["min_samples_leaf"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "CartModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def best_split(X, y, min_samples_leaf: int = 1):
    """Lowest squared-error split of one node.

    Returns ``(feature, threshold, sse)`` or None when no admissible split
    reduces the error. Ties go to the lower feature index, then the lower
    threshold.
    """
    n = len(y)
    total_sse = float(np.sum((y - y.mean()) ** 2))
    best = None
    best_sse = total_sse
    tol = 1e-12 * max(total_sse, 1e-300)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order] - y.mean()
        cs, cq = np.cumsum(ys), np.cumsum(ys * ys)
        nl = np.arange(1, n)
        sl, ql = cs[:-1], cq[:-1]
        sr, qr = cs[-1] - sl, cq[-1] - ql
        sse = (ql - sl ** 2 / nl) + (qr - sr ** 2 / (n - nl))
        ok = (xs[1:] > xs[:-1]) & (nl >= min_samples_leaf) & (n - nl >= min_samples_leaf)
        if not ok.any():
            continue
        cand = np.where(ok, sse, np.inf)
        j = int(np.argmin(cand))
        if cand[j] < best_sse - tol:
            best_sse = float(cand[j])
            best = (f, 0.5 * (xs[j] + xs[j + 1]), best_sse)
    return best


def cart_fit(X, y, min_samples_split: int = 2, min_samples_leaf: int = 1,
             max_depth: int | None = None) -> CartModel:
    """Grow a regression tree to purity.

    Parameters
    ----------
    X : array_like
        ``(n, d)`` features.
    y : array_like
        ``(n,)`` target.
    min_samples_split, min_samples_leaf : int
    max_depth : int, optional
        Unlimited by default.

    Returns
    -------
    CartModel
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0 or len(X) != len(y):
        raise ValueError("need a non-empty X and y of equal length")
    feature, threshold, left, right, value, count = [], [], [], [], [], []
    # (row indices, parent node, side, depth); explicit stack avoids recursion limits
    stack = [(np.arange(len(y)), -1, None, 0)]
    while stack:
        rows, parent, side, depth = stack.pop()
        i = len(feature)
        if parent >= 0:
            (left if side == 0 else right)[parent] = i
        yr = y[rows]
        feature.append(_LEAF)
        threshold.append(np.nan)
        left.append(_LEAF)
        right.append(_LEAF)
        pure = np.ptp(yr) == 0
        # a pure leaf returns its target exactly, free of summation roundoff
        value.append(float(yr[0]) if pure else float(yr.mean()))
        count.append(len(rows))
        if (len(rows) < min_samples_split or pure
                or (max_depth is not None and depth >= max_depth)):
            continue
        split = best_split(X[rows], yr, min_samples_leaf)
        if split is None:
            continue
        f, t, _ = split
        feature[i], threshold[i] = f, t
        mask = X[rows, f] <= t
        stack.append((rows[~mask], i, 1, depth + 1))
        stack.append((rows[mask], i, 0, depth + 1))
    return CartModel(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                     np.array(value), np.array(count), min_samples_split, min_samples_leaf)


def cart_predict(model: CartModel, X):
    return model.predict(X)
