"""Simulation backends, grid datasets and their CSV form."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants

from .. import diode
from ..degradation import LABEL_HORIZON, DegradationModel, defect_density_at, relative_loss
from ..diode import CellMetrics, DiodeParams
from ..drift_diffusion import DeviceStack, MeshSpec, build_device, default_device, simulate_jv
from ..drift_diffusion.device import bandgap
from ..drift_diffusion.optics import photon_flux_above_gap
from ..features import FeatureVector
from .grid import GridSpec

FEATURE_COLUMNS = ("x_pct", "n_abs_cm3", "t_abs_um", "n_etl_cm3")
TARGET_COLUMNS = ("jsc_mA_cm2", "voc_V", "ff_pct", "eta_pct", "delta50_pct")
TARGET_KEYS = ("jsc", "voc", "ff", "eta", "delta")
LABELS = ("Inferior", "Superior")
PROVENANCE = ("simulated", "synthetic-oversample")
MAX_FAILURE_FRACTION = 0.01


class DatasetError(RuntimeError):
    """Too many rows failed, or a dataset file is malformed."""


class DriftDiffusionBackend:
    """Illuminated bias sweep of :func:`build_device` for each feature vector."""

    name = "drift_diffusion"

    def __init__(self, base: DeviceStack | None = None, mesh: MeshSpec | None = None,
                 v_step: float = 0.02, cb_fraction: float = 0.5):
        self.base = default_device() if base is None else base
        self.mesh = MeshSpec() if mesh is None else mesh
        self.v_step = v_step
        self.cb_fraction = cb_fraction

    def metrics(self, f: FeatureVector) -> CellMetrics:
        dev = build_device(f, self.base, self.cb_fraction)
        return simulate_jv(dev, self.mesh, self.v_step).metrics

    def config(self) -> dict:
        base = self.base.to_dict()
        base.pop("metadata", None)
        return {"name": self.name, "device": base, "v_step": self.v_step,
                "mesh": [self.mesh.nodes_per_layer, self.mesh.grading],
                "cb_fraction": self.cb_fraction}


class CompositeDiodeBackend:
    """Closed-form single-diode stand-in for the device simulator.

    The photocurrent is the above-gap photon current absorbed in a slab of the
    given thickness, the saturation current follows the band gap with an
    ideality that grows with the defect density, and the series resistance
    falls with ETL doping. It is cheap and reproduces the qualitative trends
    of the drift-diffusion model, which makes it useful for tests and quick
    studies.
    """

    name = "diode-composite"

    def __init__(self, alpha: float = 9.7649e4, collection: float = 0.94,
                 j00: float = 4e9, r_s0: float = 4.0, r_sh: float = 1000.0):
        self.alpha = alpha
        self.collection = collection
        self.j00 = j00
        self.r_s0 = r_s0
        self.r_sh = r_sh

    def params(self, f: FeatureVector) -> DiodeParams:
        e_g = bandgap(f.x_pct)
        flux = photon_flux_above_gap(e_g)
        j_ph = constants.e * flux * 1e3 * self.collection * -math.expm1(-self.alpha * f.t_abs * 1e-4)
        n = 1.5 + 0.1 * math.log10(f.n_abs / 1e14)
        j_0 = self.j00 * math.exp(-e_g / (n * diode.V_T_300K)) * math.sqrt(f.n_abs / 1e14)
        r_s = 1.0 + self.r_s0 * 1e17 / f.n_etl
        return DiodeParams(j_ph, j_0, n, r_s, self.r_sh)

    def metrics(self, f: FeatureVector) -> CellMetrics:
        return diode.extract_metrics(self.params(f))

    def config(self) -> dict:
        return {"name": self.name, "alpha": self.alpha, "collection": self.collection,
                "j00": self.j00, "r_s0": self.r_s0, "r_sh": self.r_sh}


class SurrogateBackend:
    """Targets predicted by fitted surrogates.

    ``models`` maps ``jsc``, ``voc``, ``ff`` and ``eta`` to objects with a
    ``predict`` method (percent or native units, as in the dataset columns).
    An optional ``delta`` entry is used directly for the degradation label;
    otherwise the label comes from two ``eta`` evaluations like the other
    backends.
    """

    name = "surrogate"

    def __init__(self, models: dict):
        missing = {"jsc", "voc", "ff", "eta"} - set(models)
        if missing:
            raise ValueError(f"surrogate backend lacks models for {sorted(missing)}")
        self.models = models

    def metrics(self, f: FeatureVector) -> CellMetrics:
        x = f.as_array()
        jsc, voc, ff = (float(self.models[k].predict(x)) for k in ("jsc", "voc", "ff"))
        eta = float(self.models["eta"].predict(x))
        return CellMetrics(jsc, voc, ff, eta, eta)

    def delta(self, f: FeatureVector):
        m = self.models.get("delta")
        return None if m is None else float(m.predict(f.as_array()))

    def config(self) -> dict:
        cfg = {"name": self.name}
        for k, m in sorted(self.models.items()):
            to_dict = getattr(m, "to_dict", None)
            cfg[k] = to_dict() if to_dict else repr(m)
        return cfg


BACKENDS = {"drift_diffusion": DriftDiffusionBackend, "diode-composite": CompositeDiodeBackend,
            "surrogate": SurrogateBackend}


def make_backend(name: str, **kwargs):
    try:
        return BACKENDS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None


def evaluate_row(backend, f: FeatureVector, tau: float = 0.9,
                 horizon: float = LABEL_HORIZON) -> np.ndarray:
    """``(jsc, voc, ff, eta, delta)`` for one feature vector."""
    m0 = backend.metrics(f)
    delta = getattr(backend, "delta", lambda _: None)(f)
    if delta is None:
        n_h = defect_density_at(DegradationModel(f.n_abs, tau), horizon)
        eta_h = backend.metrics(replace(f, n_abs=n_h)).eta
        delta = relative_loss(m0.eta, eta_h)
    return np.array([m0.j_sc, m0.v_oc, m0.ff, m0.eta, delta])


@dataclass
class Dataset:
    """Feature rows ``X`` (n, 4) with targets ``Y`` (n, 5) in percent units.

    ``labels`` holds 0 (Inferior) / 1 (Superior) once assigned and
    ``synthetic`` marks oversampled rows. Rows whose simulation failed carry
    NaN targets and are listed in ``metadata["failed"]``.
    """

    X: np.ndarray
    Y: np.ndarray
    labels: np.ndarray | None = None
    synthetic: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, 4)
        self.Y = np.asarray(self.Y, dtype=float).reshape(-1, len(TARGET_KEYS))
        if len(self.X) != len(self.Y):
            raise ValueError("X and Y must have the same number of rows")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
        if self.synthetic is None and self.labels is not None:
            self.synthetic = np.zeros(len(self.X), dtype=bool)
        if self.synthetic is not None:
            self.synthetic = np.asarray(self.synthetic, dtype=bool)

    def __len__(self):
        return len(self.X)

    def target(self, key: str) -> np.ndarray:
        return self.Y[:, TARGET_KEYS.index(key)]

    def valid(self) -> "Dataset":
        """Rows with finite targets only."""
        ok = np.all(np.isfinite(self.Y), axis=1)
        return self.subset(ok)

    def subset(self, index) -> "Dataset":
        sel = lambda a: None if a is None else a[index]
        return Dataset(self.X[index], self.Y[index], sel(self.labels), sel(self.synthetic),
                       dict(self.metadata))

    def with_labels(self, labels, synthetic=None) -> "Dataset":
        return Dataset(self.X, self.Y, labels, synthetic, dict(self.metadata))

    def to_csv(self, path) -> None:
        """Write the dataset; floats use ``repr`` so reloading is exact."""
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def csv_text(self) -> str:
        header = list(FEATURE_COLUMNS + TARGET_COLUMNS)
        if self.labels is not None:
            header += ["label", "provenance"]
        lines = [",".join(header)]
        for i in range(len(self)):
            row = [repr(float(v)) for v in self.X[i]] + [repr(float(v)) for v in self.Y[i]]
            if self.labels is not None:
                row += [LABELS[self.labels[i]], PROVENANCE[int(self.synthetic[i])]]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.csv_text().encode()).hexdigest()

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise DatasetError(f"{path}: empty file")
        header, body = rows[0], rows[1:]
        base = list(FEATURE_COLUMNS + TARGET_COLUMNS)
        if header[:len(base)] != base:
            raise DatasetError(f"{path}: unexpected header {header}")
        num = np.array([[float(v) for v in r[:len(base)]] for r in body], dtype=float)
        num = num.reshape(-1, len(base))
        labels = synthetic = None
        if "label" in header:
            li, pi = header.index("label"), header.index("provenance")
            labels = np.array([LABELS.index(r[li]) for r in body], dtype=int)
            synthetic = np.array([PROVENANCE.index(r[pi]) == 1 for r in body], dtype=bool)
        meta = {}
        try:
            with open(str(path) + ".meta.json") as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            pass
        return cls(num[:, :4], num[:, 4:], labels, synthetic, meta)

    def save(self, path) -> None:
        """CSV plus a ``.meta.json`` sidecar with the metadata."""
        self.to_csv(path)
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")


def config_digest(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=repr).encode()).hexdigest()


def generate_dataset(grid: GridSpec, backend, threads: int = 1, seed: int = 0,
                     tau: float = 0.9, horizon: float = LABEL_HORIZON,
                     max_failure_fraction: float = MAX_FAILURE_FRACTION,
                     progress=None) -> Dataset:
    """Evaluate ``backend`` at every grid point.

    Parameters
    ----------
    grid : GridSpec
    backend : object or str
        Anything with ``metrics(FeatureVector) -> CellMetrics`` and
        ``config() -> dict``; a name from ``BACKENDS`` builds the default one.
    threads : int
        Worker threads; rows keep grid order regardless.
    seed : int
        Recorded in the metadata (the simulators themselves are deterministic).
    tau, horizon : float
        Degradation time constant and label horizon [h].
    progress : callable, optional
        Called with the number of finished rows.

    Raises
    ------
    DatasetError
        If more than ``max_failure_fraction`` of the rows fail.
    """
    if isinstance(backend, str):
        backend = make_backend(backend)
    pts = grid.points()

    def work(i):
        try:
            return evaluate_row(backend, FeatureVector.from_array(pts[i]), tau, horizon)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            return exc

    Y = np.full((len(pts), len(TARGET_KEYS)), np.nan)
    failed = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for i, out in enumerate(pool.map(work, range(len(pts)))):
            if isinstance(out, Exception):
                failed.append({"row": i, "error": f"{type(out).__name__}: {out}"})
            else:
                Y[i] = out
            if progress is not None:
                progress(i + 1)
    if len(failed) > max_failure_fraction * len(pts):
        raise DatasetError(f"{len(failed)} of {len(pts)} rows failed; first: {failed[0]}")
    meta = {
        "backend": backend.name,
        "backend_hash": config_digest(backend.config()),
        "grid": grid.to_dict(),
        "grid_hash": grid.digest(),
        "seed": seed,
        "tau_h": tau,
        "horizon_h": horizon,
        "units": {"jsc": "mA/cm2", "voc": "V", "ff": "percent", "eta": "percent",
                  "delta": "percent"},
        "failed": failed,
    }
    return Dataset(pts, Y, metadata=meta)
