"""Fully connected ReLU network trained with mini-batch Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class DivergenceError(FloatingPointError):
    """Training loss became non-finite at ``epoch``."""

    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


@dataclass(frozen=True)
class MlpConfig:
    """Architecture and optimizer settings."""

    hidden: tuple = (64, 32, 16)
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    test_fraction: float = 0.2

    def to_dict(self) -> dict:
        return {"hidden": list(self.hidden), "epochs": self.epochs,
                "batch_size": self.batch_size, "learning_rate": self.learning_rate,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "test_fraction": self.test_fraction}

    @classmethod
    def from_dict(cls, d) -> "MlpConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class MlpModel:
    """Weights, biases and the input scaling of a trained network.

    ``task`` is ``"classify"`` (softmax output) or ``"regress"`` (identity
    output). Inputs are mapped as ``(x - x_lo) / x_span`` before the first
    layer.
    """

    weights: list
    biases: list
    task: str
    x_lo: np.ndarray
    x_span: np.ndarray
    config: MlpConfig = field(default_factory=MlpConfig)
    seed: int = 42
    loss_history: list = field(default_factory=list)
    init: str = "he-uniform"

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def _scale(self, X):
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.x_lo) / self.x_span

    def forward(self, X) -> np.ndarray:
        """Network output: class probabilities or regression values."""
        return _forward(self.weights, self.biases, self._scale(X), self.task)[-1]

    def predict(self, X):
        out = self.forward(X)
        if self.task == "classify":
            return np.argmax(out, axis=1)
        return out[:, 0] if out.shape[1] == 1 else out

    def to_dict(self) -> dict:
        return {"kind": "mlp", "task": self.task, "layer_sizes": self.layer_sizes,
                "activations": ["relu"] * len(self.config.hidden)
                + ["softmax" if self.task == "classify" else "identity"],
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "x_lo": self.x_lo.tolist(), "x_span": self.x_span.tolist(),
                "config": self.config.to_dict(), "seed": self.seed, "init": self.init,
                "loss_history": list(self.loss_history)}

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        return cls([np.array(w) for w in d["weights"]], [np.array(b) for b in d["biases"]],
                   d["task"], np.array(d["x_lo"]), np.array(d["x_span"]),
                   MlpConfig.from_dict(d["config"]), d["seed"], d["loss_history"], d["init"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MlpModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(W, b, X, task):
    acts = [X]
    for i, (w, bi) in enumerate(zip(W, b)):
        z = acts[-1] @ w + bi
        if i < len(W) - 1:
            acts.append(np.maximum(z, 0.0))
        else:
            acts.append(softmax(z) if task == "classify" else z)
    return acts


def _loss(out, target, task):
    if task == "classify":
        return float(-np.mean(np.log(np.clip(out[np.arange(len(target)), target], 1e-300, None))))
    return float(np.mean((out - target) ** 2))


def _backward(W, acts, target, task):
    out = acts[-1]
    m = len(out)
    if task == "classify":
        delta = out.copy()
        delta[np.arange(m), target] -= 1.0
        delta /= m
    else:
        delta = 2.0 * (out - target) / out.size
    gW, gb = [None] * len(W), [None] * len(W)
    for i in range(len(W) - 1, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ W[i].T) * (acts[i] > 0)
    return gW, gb


def init_params(sizes, rng):
    """He-uniform weights ``U(-sqrt(6/fan_in), sqrt(6/fan_in))`` and zero biases."""
    W = [rng.uniform(-1, 1, (a, b)) * np.sqrt(6.0 / a) for a, b in zip(sizes[:-1], sizes[1:])]
    return W, [np.zeros(b) for b in sizes[1:]]


def mlp_train(X, y, task: str = "classify", config: MlpConfig | None = None,
              seed: int = 42, n_classes: int | None = None,
              scale_from=None) -> MlpModel:
    """Train a network on all given rows.

    Parameters
    ----------
    X : array_like
        ``(n, d)`` raw features; min-max scaling is fitted here (on
        ``scale_from`` if given) and stored with the model.
    y : array_like
        Integer classes for ``classify``; values ``(n,)`` or ``(n, k)`` for
        ``regress``.
    task : {"classify", "regress"}
    config : MlpConfig, optional
    seed : int
        Seeds the initialization and the batch shuffling.

    Raises
    ------
    DivergenceError
        If an epoch ends with a non-finite loss.
    """
    if task not in ("classify", "regress"):
        raise ValueError(f"unknown task {task!r}")
    cfg = MlpConfig() if config is None else config
    X = np.asarray(X, dtype=float)
    ref = X if scale_from is None else np.asarray(scale_from, dtype=float)
    lo, span = ref.min(axis=0), np.ptp(ref, axis=0)
    span = np.where(span > 0, span, 1.0)
    Z = (X - lo) / span
    if task == "classify":
        T = np.asarray(y, dtype=int)
        n_out = int(n_classes or T.max() + 1)
    else:
        T = np.asarray(y, dtype=float).reshape(len(X), -1)
        n_out = T.shape[1]
    rng = np.random.default_rng(seed)
    W, b = init_params([X.shape[1], *cfg.hidden, n_out], rng)
    mW = [np.zeros_like(w) for w in W] + [np.zeros_like(v) for v in b]
    vW = [np.zeros_like(a) for a in mW]
    params = W + b
    step = 0
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            acts = _forward(W, b, Z[idx], task)
            total += _loss(acts[-1], T[idx], task) * len(idx)
            gW, gb = _backward(W, acts, T[idx], task)
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for p, g, m, v in zip(params, gW + gb, mW, vW):
                m *= cfg.beta1
                m += (1 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1 - cfg.beta2) * g * g
                p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        loss = total / len(X)
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became {loss} in epoch {epoch}", epoch)
        history.append(loss)
    return MlpModel(W, b, task, lo, span, cfg, seed, history)


def train_test_split(n: int, test_fraction: float = 0.2, seed: int = 42,
                     synthetic=None, stratify=None) -> tuple:
    """Shuffle real rows into train/test; synthetic rows always go to train.

    With ``stratify`` the test share is drawn per class.
    """
    rng = np.random.default_rng(seed)
    synthetic = np.zeros(n, dtype=bool) if synthetic is None else np.asarray(synthetic, bool)
    real = np.nonzero(~synthetic)[0]
    groups = [real] if stratify is None else [
        real[np.asarray(stratify)[real] == c] for c in np.unique(np.asarray(stratify)[real])]
    test = []
    for g in groups:
        g = rng.permutation(g)
        test.extend(g[:int(round(test_fraction * len(g)))])
    test = np.sort(np.array(test, dtype=int))
    train = np.setdiff1d(np.arange(n), test)
    return train, test
