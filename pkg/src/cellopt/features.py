"""Fabrication feature vector, parameter grids and optimization bounds."""

from __future__ import annotations

from dataclasses import dataclass, astuple

import numpy as np

FEATURE_NAMES = ("x_pct", "n_abs", "t_abs", "n_etl")
# axes sampled on a log10 scale in the simulation grid
LOG_FEATURES = (1, 3)


@dataclass(frozen=True)
class FeatureVector:
    """Four fabrication parameters indexing every simulation and fit.

    Attributes
    ----------
    x_pct : float
        Sb molar fraction of the absorber [%].
    n_abs : float
        Absorber defect density [cm^-3].
    t_abs : float
        Absorber thickness [um].
    n_etl : float
        ETL donor doping [cm^-3].
    """

    x_pct: float
    n_abs: float
    t_abs: float
    n_etl: float

    def __post_init__(self):
        for name, value in zip(FEATURE_NAMES, astuple(self)):
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        v = np.asarray(values, dtype=float).ravel()
        if v.shape != (4,):
            raise ValueError("expected 4 feature values")
        return cls(*(float(a) for a in v))

    def to_dict(self) -> dict:
        return dict(zip(FEATURE_NAMES, astuple(self)))


@dataclass(frozen=True)
class Bounds:
    """Per-variable box ``lower <= x <= upper`` in raw feature units."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D and the same length")
        if np.any(~(lo < hi)):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", tuple(float(a) for a in lo))
        object.__setattr__(self, "upper", tuple(float(a) for a in hi))

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def __len__(self):
        return len(self.lower)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    @classmethod
    def from_pairs(cls, pairs) -> "Bounds":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))


# Ranges of the simulated dataset: (min, max, steps, scale); thickness in um.
TABLE1_RANGES = {
    "x_pct": (60.0, 75.0, 11, "linear"),
    "n_abs": (1e14, 9e14, 5, "log10"),
    "t_abs": (0.25, 0.50, 6, "linear"),
    "n_etl": (6e16, 18e16, 5, "log10"),
}

# Optimization box, deliberately wider than the dataset ranges.
PAPER_BOUNDS = Bounds(
    lower=(55.0, 3e14, 0.2, 2e16),
    upper=(78.0, 1e15, 0.55, 1.9e17),
)

# Optimum reported for the PR-4 surrogate with equal weights.
PAPER_OPTIMUM = FeatureVector(77.5, 3e14, 0.5375, 1.75e17)
