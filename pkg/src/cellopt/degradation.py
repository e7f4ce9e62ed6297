"""Defect-growth degradation law and stability metrics.

The absorber defect density grows as ``N(t) = n0 * sqrt(1 + t / tau)``; an
efficiency backend maps each density to an efficiency, which yields a
timeline from which the relative loss after a horizon and the time to reach
a given fraction of the initial efficiency follow.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

# horizon used for the dataset degradation labels [h]
LABEL_HORIZON = 50.0


class PreconditionError(ValueError):
    """Input violates the documented precondition."""


@dataclass(frozen=True)
class DegradationModel:
    """Defect growth ``N(t) = n0 (1 + t/tau)^(1/2)``.

    Attributes
    ----------
    n0 : float
        Initial absorber defect density [cm^-3].
    tau : float
        Characteristic degradation time [h].
    """

    n0: float = 1e14
    tau: float = 0.9

    def __post_init__(self):
        if not (self.n0 > 0 and self.tau > 0):
            raise ValueError("n0 and tau must be > 0")


def defect_density_at(model: DegradationModel, t):
    """Defect density [cm^-3] after ``t`` hours (scalar or array)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise PreconditionError("t must be >= 0")
    out = model.n0 * np.sqrt(1.0 + t / model.tau)
    return float(out) if out.ndim == 0 else out


def default_time_grid(hours: float = 1000.0, points: int = 60) -> np.ndarray:
    """``0`` followed by log-spaced times up to ``hours``."""
    return np.concatenate([[0.0], np.geomspace(1e-2, hours, points - 1)])


@dataclass(frozen=True)
class EfficiencyTimeline:
    """Efficiency samples ``eta`` [%] at times ``t`` [h]."""

    t: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        if t.ndim != 1 or t.shape != eta.shape or t.size < 1:
            raise ValueError("t and eta must be 1-D arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("t must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "eta", eta)

    @property
    def eta0(self) -> float:
        return float(self.eta[0])

    def at(self, t):
        """Linearly interpolated efficiency."""
        return np.interp(t, self.t, self.eta)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_h", "eta_pct"])
            for a, b in zip(self.t, self.eta):
                w.writerow([repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path) -> "EfficiencyTimeline":
        data = np.genfromtxt(path, delimiter=",", names=True)
        return cls(np.atleast_1d(data["t_h"]), np.atleast_1d(data["eta_pct"]))


class EvaluatorError(RuntimeError):
    """The efficiency backend failed at time ``t``."""

    def __init__(self, message, t):
        super().__init__(message)
        self.t = t


def efficiency_timeline(model: DegradationModel, evaluator: Callable[[float], float],
                        t_grid=None) -> EfficiencyTimeline:
    """Efficiency versus time under defect growth.

    Parameters
    ----------
    model : DegradationModel
    evaluator : callable
        Maps a defect density [cm^-3] to an efficiency [%].
    t_grid : array_like, optional
        Times [h]; defaults to :func:`default_time_grid`.

    Raises
    ------
    EvaluatorError
        Wrapping any exception from ``evaluator`` with the offending time.
    """
    t = default_time_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    eta = np.empty_like(t)
    for i, ti in enumerate(t):
        try:
            eta[i] = evaluator(defect_density_at(model, ti))
        except Exception as exc:
            raise EvaluatorError(f"evaluator failed at t = {ti:g} h: {exc}", ti) from exc
    return EfficiencyTimeline(t, eta)


def delta_after(timeline: EfficiencyTimeline, horizon: float) -> float:
    """Relative efficiency loss [%] after ``horizon`` hours."""
    if not timeline.t[0] <= horizon <= timeline.t[-1]:
        raise PreconditionError(
            f"horizon {horizon} h outside timeline span [{timeline.t[0]}, {timeline.t[-1]}]")
    eta_h = float(timeline.at(horizon))
    return relative_loss(timeline.eta0, eta_h)


def relative_loss(eta0: float, eta_later: float) -> float:
    """``(eta0 - eta_later) / eta0`` in percent."""
    return (eta0 - eta_later) / eta0 * 100.0


def time_to_fraction(timeline: EfficiencyTimeline, p: float):
    """First time [h] at which efficiency falls to ``p`` % of its initial value.

    Returns None if the timeline never gets there.

    Raises
    ------
    PreconditionError
        If ``p > 100`` or the timeline increases anywhere.
    """
    if p > 100:
        raise PreconditionError("p must be <= 100")
    if np.any(np.diff(timeline.eta) > 0):
        raise PreconditionError("timeline must be non-increasing")
    target = p / 100.0 * timeline.eta0
    below = np.nonzero(timeline.eta <= target)[0]
    if below.size == 0:
        return None
    k = int(below[0])
    if k == 0:
        return float(timeline.t[0])
    t0, t1 = timeline.t[k - 1], timeline.t[k]
    e0, e1 = timeline.eta[k - 1], timeline.eta[k]
    # the interpolant is linear on [t0, t1], so the crossing is exact
    return float(t0 + (e0 - target) / (e0 - e1) * (t1 - t0))


def delta_label(evaluator: Callable[[float], float], n0: float, tau: float = 0.9,
                horizon: float = LABEL_HORIZON) -> tuple:
    """Two-point degradation label.

    Evaluates the backend at ``n0`` and at the density reached after
    ``horizon`` hours. Returns ``(eta0, eta_horizon, delta_pct)``.
    """
    model = DegradationModel(n0, tau)
    eta0 = float(evaluator(n0))
    eta_h = float(evaluator(defect_density_at(model, horizon)))
    return eta0, eta_h, relative_loss(eta0, eta_h)
