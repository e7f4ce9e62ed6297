"""Labeling, classifier training, curve reconstruction, ablation and the full study."""

from __future__ import annotations

import hashlib
import itertools
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import diode, surrogate
from ..features import FEATURE_NAMES, PAPER_BOUNDS, Bounds, FeatureVector
from ..ml import (
    ClusterModel, MlpConfig, MlpModel, classification_metrics, kmeans_fit, label_clusters,
    mlp_train, smote_oversample, train_test_split,
)
from ..ml.cart import CartModel, cart_fit
from ..optimizer import ObjectiveWeights, optimize_cell
from .dataset import Dataset, DriftDiffusionBackend, TARGET_KEYS, evaluate_row, generate_dataset
from .grid import GridSpec

# densities enter raw (min-max only), the convention the reference polynomials use
LOG_FLAGS = (False,) * len(FEATURE_NAMES)


class StudyError(RuntimeError):
    """A study stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


def _sha(obj) -> str:
    if isinstance(obj, (bytes, str)):
        data = obj.encode() if isinstance(obj, str) else obj
    else:
        data = json.dumps(obj, sort_keys=True, default=repr).encode()
    return hashlib.sha256(data).hexdigest()


# -- labels and classifier -------------------------------------------------------

@dataclass
class Labeling:
    """Clusters of the scaled (eta, delta) plane and the resulting labels."""

    dataset: Dataset
    model: ClusterModel
    target_lo: np.ndarray
    target_span: np.ndarray

    def scale(self, eta_delta) -> np.ndarray:
        return (np.atleast_2d(eta_delta) - self.target_lo) / self.target_span


def label_dataset(ds: Dataset, k: int = 10, seed: int = 42) -> Labeling:
    """Cluster min-max scaled (eta, delta) and label rows Superior/Inferior."""
    ds = ds.valid()
    P = np.column_stack([ds.target("eta"), ds.target("delta")])
    lo, span = P.min(axis=0), np.ptp(P, axis=0)
    span = np.where(span > 0, span, 1.0)
    Z = (P - lo) / span
    model = kmeans_fit(Z, k, seed)
    return Labeling(ds.with_labels(label_clusters(Z, model)), model, lo, span)


def oversample(labeled: Dataset, seed: int = 42, k: int = 5) -> Dataset:
    """SMOTE on the features; targets interpolated alongside."""
    X, y, syn, Y = smote_oversample(labeled.X, labeled.labels, seed, k, extra=labeled.Y)
    return Dataset(X, Y, y, syn, dict(labeled.metadata))


@dataclass
class ClassifierRun:
    model: MlpModel
    report: object
    train_report: object
    train_size: int
    test_size: int
    train_counts: list
    test_has_synthetic: bool


def train_classifier(labeled: Dataset, seed: int = 42, config: MlpConfig | None = None,
                     test_fraction: float = 0.2) -> ClassifierRun:
    """Stratified 80:20 split of the real rows, SMOTE on the training part only.

    Balancing after the split keeps synthetic rows (and anything interpolated
    from test rows) out of the test set.
    """
    cfg = MlpConfig() if config is None else config
    real = labeled.subset(~labeled.synthetic) if labeled.synthetic is not None else labeled
    train, test = train_test_split(len(real), test_fraction, seed, stratify=real.labels)
    balanced = oversample(real.subset(train), seed)
    model = mlp_train(balanced.X, balanced.labels, "classify", cfg, seed, n_classes=2)
    rep = classification_metrics(model.predict(real.X[test]), real.labels[test])
    train_rep = classification_metrics(model.predict(balanced.X), balanced.labels)
    return ClassifierRun(model, rep, train_rep, len(balanced), len(test),
                         np.bincount(balanced.labels, minlength=2).tolist(), False)


# -- fits and reconstruction ---------------------------------------------------

def fit_target(ds: Dataset, key: str, degree: int = 4, seed: int = 42, columns=None,
               **kw) -> surrogate.FitResult:
    """PR fit of one dataset target (percent units) on the common split."""
    ds = ds.valid()
    cols = list(range(4)) if columns is None else list(columns)
    X = ds.X[:, cols]
    flags = tuple(LOG_FLAGS[c] for c in cols)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if len(cols) == 4:
            return surrogate.fit(X, ds.target(key), degree, log_flags=flags, seed=seed,
                                 units="percent" if key in ("eta", "delta", "ff") else "native",
                                 target=key, **kw)
        return _fit_subset(X, ds.target(key), degree, flags, seed)


def _fit_subset(X, y, degree, flags, seed):
    train, test = surrogate.split_indices(len(y), 0.2, seed)
    E = surrogate.monomial_exponents(degree, X.shape[1])
    sc = surrogate.Scaler.fit(X[train], "minmax", flags)
    A = surrogate._monomials(sc.transform(X), E)
    coef = np.linalg.lstsq(A[train], y[train], rcond=None)[0]
    pred = A @ coef
    tr = surrogate.r2_rmse(y[train], pred[train])
    te = surrogate.r2_rmse(y[test], pred[test])
    return {"train_r2": tr[0], "train_rmse": tr[1], "test_r2": te[0], "test_rmse": te[1]}


def fit_metric_trees(ds: Dataset, keys=("jsc", "voc", "ff", "eta")) -> dict:
    """One CART model per target, trained on every valid row."""
    ds = ds.valid()
    return {k: cart_fit(ds.X, ds.target(k)) for k in keys}


def reconstruct_from_predictions(models: dict, f: FeatureVector, r_s: float = 1.0,
                                 r_sh: float = 1000.0, steps: int = 200) -> tuple:
    """Predict (J_SC, V_OC, FF), solve for the diode and trace its curves.

    Returns
    -------
    (ReconstructionResult, Curve)

    Raises
    ------
    diode.ReconstructionError
        If the diode parameters cannot be recovered.
    """
    x = f.as_array()
    jsc, voc, ff = (float(models[k].predict(x)) for k in ("jsc", "voc", "ff"))
    metrics = diode.CellMetrics.from_jsc_voc_ff(jsc, voc, ff)
    rec = diode.reconstruct_parameters(metrics, r_s=r_s, r_sh=r_sh)
    return rec, diode.characteristic_curves(rec.params, metrics.v_oc, steps)


def feature_ablation(ds: Dataset, target: str = "delta", degree: int = 4,
                     seed: int = 42) -> list:
    """PR fits on each pair of features plus the full model, common split."""
    rows = []
    for pair in itertools.combinations(range(4), 2):
        r = fit_target(ds, target, degree, seed, columns=pair)
        rows.append({"features": [FEATURE_NAMES[i] for i in pair], **r})
    full = fit_target(ds, target, degree, seed)
    rows.append({"features": list(FEATURE_NAMES), "train_r2": full.train_r2,
                 "train_rmse": full.train_rmse, "test_r2": full.test_r2,
                 "test_rmse": full.test_rmse})
    return rows


# -- the full study ------------------------------------------------------------

@dataclass
class StudyConfig:
    """Settings of :func:`end_to_end_study`.

    ``dataset`` is a CSV path; without it the grid is simulated with
    ``backend``. ``reference_surrogates`` swaps the fitted PR-4 models for the
    published reference polynomials in the optimization stage.
    """

    dataset: str | None = None
    backend: str = "drift_diffusion"
    grid: dict | None = None
    seed: int = 42
    threads: int = 1
    degree: int = 4
    w_eta: float = 0.5
    w_delta: float = 0.5
    bounds: list = field(default_factory=lambda: [list(PAPER_BOUNDS.lower),
                                                  list(PAPER_BOUNDS.upper)])
    starts: int = 32
    clusters: int = 10
    reference_surrogates: bool = False
    validate: bool = True
    mlp: dict = field(default_factory=lambda: MlpConfig().to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown study keys {sorted(unknown)}")
        return cls(**d)


def end_to_end_study(config: StudyConfig, dataset: Dataset | None = None, log=None) -> dict:
    """Dataset, fits, optimization, validation and classification in one report.

    Every stage records a hash of its inputs and outputs. Failures are
    re-raised as :class:`StudyError` naming the stage.
    """
    log = log or (lambda msg: None)
    report = {"config": asdict(config), "config_hash": _sha(asdict(config)), "stages": {}}
    stages = report["stages"]

    def stage(name, fn):
        log(f"[{name}]")
        try:
            return fn()
        except StudyError:
            raise
        except Exception as exc:
            raise StudyError(name, f"{type(exc).__name__}: {exc}") from exc

    def load():
        if dataset is not None:
            return dataset
        if config.dataset:
            return Dataset.from_csv(config.dataset)
        grid = GridSpec.from_dict(config.grid) if config.grid else GridSpec.default()
        return generate_dataset(grid, config.backend, config.threads, config.seed)

    ds = stage("dataset", load).valid()
    stages["dataset"] = {"rows": len(ds), "hash": ds.digest(),
                         "backend": ds.metadata.get("backend")}

    def fits():
        out = {}
        for key in ("eta", "delta"):
            r = fit_target(ds, key, config.degree, config.seed)
            out[key] = r
        return out

    fitted = stage("fit", fits)
    stages["fit"] = {"input": ds.digest(), **{
        k: {"train_r2": r.train_r2, "test_r2": r.test_r2, "test_rmse": r.test_rmse,
            "hash": _sha(r.surrogate.to_dict())} for k, r in fitted.items()}}

    if config.reference_surrogates:
        eta_s, delta_s = surrogate.load_appendix_coefficients()
        source = "reference"
    else:
        eta_s, delta_s = fitted["eta"].surrogate, fitted["delta"].surrogate
        source = "fitted"
    bounds = Bounds(tuple(config.bounds[0]), tuple(config.bounds[1]))
    opt = stage("optimize", lambda: optimize_cell(
        eta_s, delta_s, ObjectiveWeights(config.w_eta, config.w_delta), bounds,
        config.starts, config.seed))
    stages["optimize"] = {"surrogates": source,
                          "input": _sha([eta_s.to_dict(), delta_s.to_dict()]),
                          **opt.to_dict()}

    if config.validate:
        def validate():
            row = evaluate_row(DriftDiffusionBackend(), opt.x_star)
            return dict(zip(TARGET_KEYS, map(float, row)))
        sim = stage("validate", validate)
        stages["validate"] = {
            "label": "simulator validation", "input": _sha(opt.x_star.to_dict()),
            "eta_pct": sim["eta"], "delta_pct": sim["delta"], "jsc": sim["jsc"],
            "voc": sim["voc"], "ff": sim["ff"],
            "eta_relative_error": abs(opt.eta_pct - sim["eta"]) / sim["eta"],
        }

    def classify():
        lab = label_dataset(ds, config.clusters, config.seed)
        bal = oversample(lab.dataset, config.seed)
        run = train_classifier(lab.dataset, config.seed, MlpConfig.from_dict(config.mlp))
        cls = int(run.model.predict(opt.x_star.as_array())[0])
        return lab, bal, run, cls

    lab, bal, run, cls = stage("classify", classify)
    counts = np.bincount(lab.dataset.labels, minlength=2)
    stages["classify"] = {
        "input": ds.digest(),
        "superior_rows": int(counts[1]), "inferior_rows": int(counts[0]),
        "balanced_counts": np.bincount(bal.labels, minlength=2).tolist(),
        "test": run.report.to_dict(), "train": run.train_report.to_dict(),
        "model_hash": _sha(run.model.to_dict()),
        "optimum_class": ("Inferior", "Superior")[cls],
    }
    report["report_hash"] = _sha(report["stages"])
    return report
