"""Multivariate polynomial surrogates over the four fabrication features.

A surrogate evaluates ``offset + scale * sum_k c_k prod_i z_i ** e_ki`` where
``z`` are scaled features. Scaling is min-max, standard-score or identity,
optionally after a log10 pre-transform of selected features. Gradients are
returned in raw feature units.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from .features import FEATURE_NAMES, LOG_FEATURES, PAPER_BOUNDS, PAPER_OPTIMUM, TABLE1_RANGES

N_FEATURES = len(FEATURE_NAMES)
_LN10 = math.log(10.0)


class NotFittedError(RuntimeError):
    """A scaler was used before its parameters were set."""


class CalibrationError(RuntimeError):
    """No normalization convention reproduces the reference efficiency."""

    def __init__(self, message, table):
        super().__init__(message)
        self.table = table


# -- scaling -----------------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    """Per-feature affine scaling with optional log10 pre-transform.

    For ``kind="minmax"`` the parameters are ``(min, max)`` and
    ``z = (u - min) / (max - min)``; for ``"standard"`` they are
    ``(mean, std)`` and ``z = (u - mean) / std``; ``"identity"`` ignores them.
    ``u`` is the raw feature or its log10 where ``log_flags`` is set.
    """

    kind: str = "minmax"
    a: tuple = (0.0,) * N_FEATURES
    b: tuple = (1.0,) * N_FEATURES
    log_flags: tuple = (False,) * N_FEATURES
    fitted: bool = True

    def __post_init__(self):
        if self.kind not in ("minmax", "standard", "identity"):
            raise ValueError(f"unknown scaler kind {self.kind!r}")
        a = tuple(float(v) for v in self.a)
        b = tuple(float(v) for v in self.b)
        flags = tuple(bool(v) for v in self.log_flags)
        if not len(a) == len(b) == len(flags):
            raise ValueError("scaler parameter lengths differ")
        if self.kind == "minmax" and any(hi <= lo for lo, hi in zip(a, b)):
            raise ValueError("min-max scaler needs max > min for every feature")
        if self.kind == "standard" and any(s <= 0 for s in b):
            raise ValueError("standard scaler needs std > 0 for every feature")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "log_flags", flags)

    @classmethod
    def unfitted(cls, kind="minmax", log_flags=(False,) * N_FEATURES) -> "Scaler":
        return cls(kind, log_flags=log_flags, fitted=False)

    @classmethod
    def fit(cls, X, kind="minmax", log_flags=(False,) * N_FEATURES) -> "Scaler":
        """Scaler whose parameters come from the columns of ``X``."""
        X = np.asarray(X, dtype=float)
        u = _pre(X, np.asarray(log_flags, dtype=bool))
        if kind == "minmax":
            return cls(kind, u.min(axis=0), u.max(axis=0), log_flags)
        if kind == "standard":
            return cls(kind, u.mean(axis=0), u.std(axis=0), log_flags)
        return cls(kind, np.zeros(X.shape[1]), np.ones(X.shape[1]), log_flags)

    @classmethod
    def from_ranges(cls, lower, upper, log_flags=(False,) * N_FEATURES) -> "Scaler":
        """Min-max scaler over given raw ranges."""
        flags = np.asarray(log_flags, dtype=bool)
        lo = _pre(np.asarray(lower, dtype=float)[None, :], flags)[0]
        hi = _pre(np.asarray(upper, dtype=float)[None, :], flags)[0]
        return cls("minmax", lo, hi, flags)

    def _check(self):
        if not self.fitted:
            raise NotFittedError("scaler has not been fitted")

    def _affine(self):
        a, b = np.array(self.a), np.array(self.b)
        if self.kind == "minmax":
            return a, b - a
        if self.kind == "standard":
            return a, b
        return np.zeros_like(a), np.ones_like(b)

    def transform(self, X) -> np.ndarray:
        self._check()
        shift, width = self._affine()
        return (_pre(np.asarray(X, dtype=float), np.array(self.log_flags)) - shift) / width

    def inverse_transform(self, Z) -> np.ndarray:
        self._check()
        shift, width = self._affine()
        u = np.asarray(Z, dtype=float) * width + shift
        flags = np.array(self.log_flags)
        return np.where(flags, 10.0 ** np.where(flags, u, 0.0), u)

    def jacobian_diag(self, X) -> np.ndarray:
        """dz_i/dx_i at the raw points ``X``."""
        self._check()
        X = np.asarray(X, dtype=float)
        _, width = self._affine()
        flags = np.array(self.log_flags)
        du = np.where(flags, 1.0 / (np.where(flags, X, 1.0) * _LN10), 1.0)
        return du / width

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": [list(self.a), list(self.b)],
                "log_flags": list(self.log_flags)}

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        a, b = d["params"]
        return cls(d["kind"], a, b, d["log_flags"])


def _pre(X, flags):
    if not np.any(flags):
        return X
    safe = np.where(flags, X, 1.0)
    if np.any(safe <= 0):
        raise ValueError("log-scaled features must be positive")
    return np.where(flags, np.log10(safe), X)


# -- monomials ---------------------------------------------------------------

def monomial_exponents(degree: int, n_vars: int = N_FEATURES) -> np.ndarray:
    """Exponent rows of all monomials up to ``degree`` in graded lex order.

    Within one total degree, monomials follow ``combinations_with_replacement``
    of the variable indices, so for two variables and degree 2 the order is
    1, a, b, a^2, ab, b^2.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    rows = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(n_vars), d):
            e = [0] * n_vars
            for i in combo:
                e[i] += 1
            rows.append(e)
    return np.array(rows, dtype=int).reshape(-1, n_vars)


def _monomials(Z, E):
    return np.prod(Z[:, None, :] ** E[None, :, :], axis=2)


def expand_features(X, degree: int, scaler: Scaler) -> np.ndarray:
    """Monomial design matrix of scaled features, constant column first.

    ``X`` may be a single feature vector or an ``(n, 4)`` array; the result
    has ``C(4 + degree, degree)`` columns.
    """
    single = np.ndim(X) == 1 or hasattr(X, "as_array")
    X = _as_2d(X)
    out = _monomials(scaler.transform(X), monomial_exponents(degree, X.shape[1]))
    return out[0] if single else out


def _as_2d(X) -> np.ndarray:
    if hasattr(X, "as_array"):
        X = X.as_array()
    return np.atleast_2d(np.asarray(X, dtype=float))


# -- surrogate ---------------------------------------------------------------

@dataclass(frozen=True)
class PolySurrogate:
    """Fitted polynomial with scaler and affine output transform.

    ``units`` documents what :meth:`predict` returns: ``"fraction"``,
    ``"percent"`` or ``"native"`` (physical units such as mA/cm^2 or V);
    ``metadata`` is free-form provenance.
    """

    degree: int
    terms: np.ndarray
    coeffs: np.ndarray
    scaler: Scaler
    offset: float = 0.0
    scale: float = 1.0
    units: str = "percent"
    target: str = ""
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        terms = np.asarray(self.terms, dtype=int).reshape(-1, N_FEATURES)
        coeffs = np.asarray(self.coeffs, dtype=float).ravel()
        if terms.shape[0] != coeffs.size:
            raise ValueError("one coefficient per term required")
        if np.any(terms < 0) or np.any(terms.sum(axis=1) > self.degree):
            raise ValueError("term exponents must be >= 0 with total degree <= degree")
        if self.units not in ("fraction", "percent", "native"):
            raise ValueError("units must be 'fraction', 'percent' or 'native'")
        terms.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def to_fraction(self) -> float:
        """Factor converting predictions to fractions (1 for native units)."""
        return 0.01 if self.units == "percent" else 1.0

    def polynomial(self, X) -> np.ndarray:
        """Polynomial part before the output transform."""
        Z = self.scaler.transform(_as_2d(X))
        return _monomials(Z, self.terms) @ self.coeffs

    def predict(self, X):
        """Prediction for one feature vector (float) or an ``(n, 4)`` array."""
        single = np.ndim(X) == 1 or hasattr(X, "as_array")
        y = self.offset + self.scale * self.polynomial(X)
        return float(y[0]) if single else y

    def gradient(self, X) -> np.ndarray:
        """Partial derivatives in raw feature units, shape ``(4,)`` or ``(n, 4)``."""
        single = np.ndim(X) == 1 or hasattr(X, "as_array")
        X = _as_2d(X)
        Z = self.scaler.transform(X)
        E = self.terms
        grad = np.empty_like(Z)
        for i in range(Z.shape[1]):
            Ei = E.copy()
            Ei[:, i] = np.maximum(Ei[:, i] - 1, 0)
            dmono = _monomials(Z, Ei) * E[:, i]
            grad[:, i] = dmono @ self.coeffs
        grad *= self.scale * self.scaler.jacobian_diag(X)
        return grad[0] if single else grad

    def value_and_gradient(self, X):
        return self.predict(X), self.gradient(X)

    def to_dict(self) -> dict:
        return {
            "degree": int(self.degree),
            "scaler": self.scaler.to_dict(),
            "terms": self.terms.tolist(),
            "coeffs": [float(c) for c in self.coeffs],
            "output": {"offset": float(self.offset), "scale": float(self.scale)},
            "units": self.units,
            "target": self.target,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d) -> "PolySurrogate":
        return cls(
            degree=int(d["degree"]), terms=d["terms"], coeffs=d["coeffs"],
            scaler=Scaler.from_dict(d["scaler"]), offset=d["output"]["offset"],
            scale=d["output"]["scale"], units=d.get("units", "percent"),
            target=d.get("target", ""), metadata=d.get("metadata", {}),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PolySurrogate":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def constant_surrogate(value: float, units="percent") -> PolySurrogate:
    return PolySurrogate(0, [[0] * N_FEATURES], [0.0], Scaler("identity"),
                         offset=value, units=units)


# -- fitting -----------------------------------------------------------------

def split_indices(n: int, test_fraction: float = 0.2, seed: int = 42) -> tuple:
    """Uniform random train/test split of ``range(n)``."""
    if n < 2:
        raise ValueError("need at least two rows to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = min(max(int(round(test_fraction * n)), 1), n - 1)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def r2_rmse(y_true, y_pred) -> tuple:
    """Coefficient of determination and root-mean-square error.

    Raises
    ------
    ValueError
        If ``y_true`` is constant (R^2 undefined) or empty.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.size == 0:
        raise ValueError("empty split")
    resid = y_true - y_pred
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    if sst == 0:
        raise ValueError("R^2 undefined for a constant target")
    return 1.0 - float(resid @ resid) / sst, float(np.sqrt(np.mean(resid ** 2)))


@dataclass(frozen=True)
class FitResult:
    surrogate: PolySurrogate
    train: np.ndarray
    test: np.ndarray
    train_r2: float
    train_rmse: float
    test_r2: float
    test_rmse: float
    rank_deficient: bool


def fit_polynomial(X, y, degree: int, scaler_kind: str = "minmax",
                   log_flags=(False,) * N_FEATURES, *, train=None,
                   units="percent", target="") -> PolySurrogate:
    """Least-squares polynomial on all rows of ``X`` (or the ``train`` subset).

    The scaler is fitted on the training rows. The design is solved by
    SVD-based least squares; a rank-deficient design triggers a warning and
    yields the minimum-norm solution.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if train is not None:
        X, y = X[train], y[train]
    E = monomial_exponents(degree, X.shape[1])
    if X.shape[0] < E.shape[0]:
        raise ValueError(f"{X.shape[0]} rows cannot determine {E.shape[0]} coefficients")
    scaler = Scaler.fit(X, scaler_kind, log_flags)
    A = _monomials(scaler.transform(X), E)
    coeffs, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    meta = {"rank": int(rank), "terms": int(E.shape[0])}
    if rank < E.shape[0]:
        warnings.warn(f"rank-deficient design ({rank} < {E.shape[0]}); "
                      "using the minimum-norm solution", RuntimeWarning, stacklevel=2)
    return PolySurrogate(degree, E, coeffs, scaler, units=units, target=target, metadata=meta)


def fit(X, y, degree: int = 4, scaler_kind: str = "minmax",
        log_flags=(False,) * N_FEATURES, test_fraction: float = 0.2, seed: int = 42,
        units="percent", target="") -> FitResult:
    """Fit on an 80:20 split and score both parts.

    Parameters
    ----------
    X : array_like, shape (n, 4)
        Raw features.
    y : array_like, shape (n,)
        Target values.
    degree : int
        Polynomial degree.
    scaler_kind : {"minmax", "standard", "identity"}
    log_flags : sequence of bool
        Features to log10 before scaling.
    test_fraction, seed
        Held-out share and split seed.

    Returns
    -------
    FitResult
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    train, test = split_indices(len(y), test_fraction, seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = fit_polynomial(X, y, degree, scaler_kind, log_flags, train=train,
                           units=units, target=target)
    deficient = any("rank-deficient" in str(w.message) for w in caught)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    tr = r2_rmse(y[train], s.predict(X[train]))
    te = r2_rmse(y[test], s.predict(X[test]))
    return FitResult(s, train, test, tr[0], tr[1], te[0], te[1], deficient)


def degree_sweep(X, y, degrees: Sequence[int] = range(1, 16), **kwargs) -> list:
    """Test-split (degree, R^2, RMSE) for each degree on a common split."""
    rows = []
    for d in degrees:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            r = fit(X, y, degree=d, **kwargs)
        rows.append({"degree": int(d), "r2": r.test_r2, "rmse": r.test_rmse,
                     "train_r2": r.train_r2, "train_rmse": r.train_rmse,
                     "rank_deficient": r.rank_deficient})
    return rows


# -- reference PR-4 models -----------------------------------------------------

_VARS = {"x": 0, "N_{ABS}": 1, "T_{ABS}": 2, "N_{ETL}": 3}
_TERM = re.compile(
    r"([+-]?)\s*(\d+(?:\.\d+)?)(?:\s*\\times\s*10\^\{(-?\d+)\})?"
    r"((?:\s*(?:x|N_\{ABS\}|T_\{ABS\}|N_\{ETL\})(?:\^\d)?|\s*\\cdot\s*1)*)")
_FACTOR = re.compile(r"(x|N_\{ABS\}|T_\{ABS\}|N_\{ETL\})(?:\^(\d))?")
_HEAD = re.compile(r"=\s*([\d.]+)\s*\+\s*([\d.]+)\s*\\times\s*\\Big\(")


def parse_polynomial_tex(text: str) -> tuple:
    """Parse ``name = offset + scale \\times \\Big( ... \\Big)`` LaTeX.

    Terms appear as ``[sign] mantissa [\\times 10^{e}] [factors]``; a term
    written without an operator before it is read as added. Explicit
    ``\\cdot 1`` terms are kept as separate constant terms.

    Returns
    -------
    offset, scale : float
    terms : numpy.ndarray, shape (k, 4)
    coeffs : numpy.ndarray, shape (k,)
    """
    head = _HEAD.search(text)
    if head is None:
        raise ValueError("could not find the affine output transform")
    body = text[head.end():text.rindex(r"\Big)")]
    terms, coeffs = [], []
    for m in _TERM.finditer(body):
        if not m.group(2):
            continue
        c = float(m.group(2) + (f"e{m.group(3)}" if m.group(3) else ""))
        coeffs.append(-c if m.group(1) == "-" else c)
        e = [0] * N_FEATURES
        for f in _FACTOR.finditer(m.group(4)):
            e[_VARS[f.group(1)]] += int(f.group(2) or 1)
        terms.append(e)
    return float(head.group(1)), float(head.group(2)), np.array(terms), np.array(coeffs)


def _reference_text(name: str) -> str:
    return resources.files("cellopt.data").joinpath(f"pr4_{name}.tex").read_text()


# Candidate normalization conventions for the reference models: which box
# the min-max scaler spans and whether the two densities are log10-scaled.
def convention_scaler(convention: str) -> Scaler:
    """Min-max scaler for ``"<ranges>-<raw|log10>"``, ranges ``table1``/``bounds``."""
    ranges, _, dens = convention.partition("-")
    if dens not in ("raw", "log10"):
        raise ValueError(f"unknown convention {convention!r}")
    flags = [i in LOG_FEATURES and dens == "log10" for i in range(N_FEATURES)]
    if ranges == "table1":
        lo = [TABLE1_RANGES[k][0] for k in FEATURE_NAMES]
        hi = [TABLE1_RANGES[k][1] for k in FEATURE_NAMES]
    elif ranges == "bounds":
        lo, hi = PAPER_BOUNDS.lower, PAPER_BOUNDS.upper
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return Scaler.from_ranges(lo, hi, flags)


CONVENTIONS = ("table1-raw", "table1-log10", "bounds-raw", "bounds-log10")
REFERENCE_ETA = 0.1702  # efficiency of the reference optimum, as a fraction
CALIBRATION_TOLERANCE = 0.005


def reference_model(name: str, convention: str = "table1-raw") -> PolySurrogate:
    """One reference PR-4 model, ``name`` in ``{"eta", "delta"}``.

    The efficiency model returns a fraction. The degradation model returns
    percent: its output transform spans 0.034 to 1.55, a range only
    meaningful as a percentage loss.
    """
    offset, scale, terms, coeffs = parse_polynomial_tex(_reference_text(name))
    units = "fraction" if name == "eta" else "percent"
    return PolySurrogate(4, terms, coeffs, convention_scaler(convention), offset, scale,
                         units=units, target=name,
                         metadata={"source": "reference PR-4", "convention": convention})


def calibrate_normalization(reference_point=PAPER_OPTIMUM, target=REFERENCE_ETA,
                            tolerance=CALIBRATION_TOLERANCE) -> tuple:
    """Pick the scaler convention that best reproduces the reference efficiency.

    Returns
    -------
    best : str
        Selected convention.
    table : list of dict
        ``convention, eta, error`` for every candidate.

    Raises
    ------
    CalibrationError
        If no candidate lands within ``tolerance`` of ``target``; the error
        carries the table.
    """
    table = []
    for conv in CONVENTIONS:
        eta = reference_model("eta", conv).predict(reference_point)
        table.append({"convention": conv, "eta": eta, "error": abs(eta - target)})
    best = min(table, key=lambda r: r["error"])
    if best["error"] > tolerance:
        lines = "\n".join(f"  {r['convention']:<14} eta={r['eta']:.6f} |err|={r['error']:.6f}"
                          for r in table)
        raise CalibrationError(
            f"no normalization convention reproduces eta={target} within {tolerance}:\n{lines}",
            table)
    return best["convention"], table


def load_appendix_coefficients(convention: str | None = None) -> tuple:
    """Reference (eta, delta) surrogates, calibrating the scaler if not given."""
    if convention is None:
        convention, _ = calibrate_normalization()
    return reference_model("eta", convention), reference_model("delta", convention)
