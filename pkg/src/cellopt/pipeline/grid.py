"""Rectangular parameter grids over the four fabrication features."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass

import numpy as np

from ..features import FEATURE_NAMES, TABLE1_RANGES


@dataclass(frozen=True)
class Axis:
    """One grid axis: ``steps`` values from ``lo`` to ``hi``."""

    lo: float
    hi: float
    steps: int
    scale: str = "linear"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.steps > 1 and not self.lo < self.hi:
            raise ValueError("need lo < hi")
        if self.scale not in ("linear", "log10"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.scale == "log10" and self.lo <= 0:
            raise ValueError("log10 axis needs lo > 0")

    def values(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([float(self.lo)])
        if self.scale == "log10":
            v = np.logspace(np.log10(self.lo), np.log10(self.hi), self.steps)
        else:
            v = np.linspace(self.lo, self.hi, self.steps)
        # exact endpoints; logspace is off by an ulp
        v[0], v[-1] = self.lo, self.hi
        return v


@dataclass(frozen=True)
class GridSpec:
    """Axes in feature order; rows enumerate them row-major (last axis fastest)."""

    axes: tuple

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if len(self.axes) != len(FEATURE_NAMES):
            raise ValueError(f"need {len(FEATURE_NAMES)} axes")

    @classmethod
    def default(cls) -> "GridSpec":
        return cls(tuple(Axis(*TABLE1_RANGES[name]) for name in FEATURE_NAMES))

    @classmethod
    def single(cls, point) -> "GridSpec":
        return cls(tuple(Axis(float(v), float(v), 1) for v in point))

    @property
    def shape(self) -> tuple:
        return tuple(a.steps for a in self.axes)

    def __len__(self):
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        """``(len(self), 4)`` array of grid points."""
        vals = [a.values() for a in self.axes]
        return np.array(list(itertools.product(*vals)), dtype=float).reshape(-1, len(vals))

    def to_dict(self) -> dict:
        return {name: {"lo": a.lo, "hi": a.hi, "steps": a.steps, "scale": a.scale}
                for name, a in zip(FEATURE_NAMES, self.axes)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(tuple(Axis(**d[name]) for name in FEATURE_NAMES))

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()
