"""Projected L-BFGS for box constraints and the weighted cell objective.

The minimizer keeps every iterate feasible by projecting onto the box after
each trial step. Search directions come from the limited-memory two-loop
recursion restricted to the variables that are not held at an active bound,
and step lengths from Armijo backtracking along the projected path.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .features import Bounds, FeatureVector, PAPER_BOUNDS
from .surrogate import PolySurrogate

TABLE8_WEIGHTS = tuple((w, round(1.0 - w, 2)) for w in
                       (0.25, 0.30, 0.35, 0.40, 0.45, 0.55, 0.60, 0.65, 0.70, 0.75))


class ObjectiveError(FloatingPointError):
    """The objective returned a non-finite value; ``x`` is the offending point."""

    def __init__(self, message, x):
        super().__init__(message)
        self.x = np.array(x, dtype=float)


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    pg_norm: float
    message: str
    n_eval: int
    x0_clamped: bool = False
    trace: list = field(default_factory=list, repr=False)


def projected_gradient(x, g, lo, hi) -> np.ndarray:
    """Step to the projected steepest-descent point, ``x - P(x - g)``."""
    return x - np.clip(x - g, lo, hi)


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    s, y, _ = pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        q += (a - rho * (y @ q)) * s
    return q


def minimize(fun: Callable, lower, upper, x0, memory: int = 10, tol: float = 1e-8,
             ftol: float = 1e-12, max_iter: int = 1000, armijo: float = 1e-4,
             max_backtracks: int = 60, trace_len: int = 10) -> MinimizeResult:
    """Minimize a smooth function over a box.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (f, grad)``.
    lower, upper : array_like
        Box bounds.
    x0 : array_like
        Start; clamped into the box if outside (flagged in the result).
    memory : int
        Number of curvature pairs kept; pairs need ``s.y > 1e-10``.
    tol : float
        Max-norm of the projected gradient at convergence.
    ftol : float
        Relative decrease of ``f`` below which the run also counts as
        converged.

    Returns
    -------
    MinimizeResult
        ``converged`` is False when ``max_iter`` ran out or the line search
        failed; the best iterate is returned either way.

    Raises
    ------
    ObjectiveError
        If ``fun`` returns a non-finite value or gradient.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    x_in = np.asarray(x0, dtype=float)
    x = np.clip(x_in, lo, hi)
    clamped = bool(np.any(x != x_in))
    n_eval = 0

    def evaluate(p):
        nonlocal n_eval
        n_eval += 1
        f, g = fun(p)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise ObjectiveError(f"non-finite objective at {p!r}", p)
        return f, g

    f, g = evaluate(x)
    pairs = deque(maxlen=memory)
    trace = deque([x.copy()], maxlen=trace_len)
    message = "maximum iterations reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pg = projected_gradient(x, g, lo, hi)
        if np.max(np.abs(pg)) <= tol:
            converged, message = True, "projected gradient below tolerance"
            it -= 1
            break
        # variables pinned at a bound by an outward gradient stay fixed
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        gf = np.where(free, g, 0.0)
        if pairs:
            d = -_two_loop(gf, list(pairs))
            d[~free] = 0.0
        else:
            d = -gf / max(np.max(np.abs(gf)), 1e-300) * 0.1 * np.max(hi - lo)
        if d @ gf >= 0:
            pairs.clear()
            d = -gf / max(np.max(np.abs(gf)), 1e-300) * 0.1 * np.max(hi - lo)

        t = 1.0
        for _ in range(max_backtracks):
            x_new = np.clip(x + t * d, lo, hi)
            step = x_new - x
            f_new, g_new = evaluate(x_new)
            if f_new <= f + armijo * (g @ step) and np.any(step != 0):
                break
            t *= 0.5
        else:
            message = "line search failed"
            converged = bool(np.max(np.abs(pg)) <= np.sqrt(tol))
            break

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-10:
            pairs.append((s, y, 1.0 / sy))
        f_old = f
        x, f, g = x_new, f_new, g_new
        trace.append(x.copy())
        if abs(f_old - f) <= ftol * max(abs(f_old), abs(f)):
            converged, message = True, "relative reduction of f below ftol"
            break

    pg_norm = float(np.max(np.abs(projected_gradient(x, g, lo, hi))))
    return MinimizeResult(x, f, g, it, converged, pg_norm, message, n_eval, clamped,
                          list(trace))


@dataclass(frozen=True)
class ObjectiveWeights:
    """Non-negative weights, normalized to sum to one."""

    w_eta: float = 0.5
    w_delta: float = 0.5

    def __post_init__(self):
        if self.w_eta < 0 or self.w_delta < 0 or self.w_eta + self.w_delta <= 0:
            raise ValueError("weights must be >= 0 and not both zero")
        total = self.w_eta + self.w_delta
        object.__setattr__(self, "w_eta", self.w_eta / total)
        object.__setattr__(self, "w_delta", self.w_delta / total)


@dataclass
class OptimResult:
    """Optimum of the weighted objective.

    ``eta_pct`` and ``delta_pct`` are in percent; ``f_star`` is the objective
    ``-(w_eta * eta - w_delta * delta)`` with both targets as fractions.
    """

    x_star: FeatureVector
    f_star: float
    eta_pct: float
    delta_pct: float
    iterations: int
    converged: bool
    pg_norm: float
    weights: ObjectiveWeights
    starts: int = 1
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.to_dict(),
            "eta_pct": self.eta_pct,
            "delta_pct": self.delta_pct,
            "f_star": self.f_star,
            "converged": self.converged,
            "iterations": self.iterations,
            "pg_norm": self.pg_norm,
            "weights": {"w_eta": self.weights.w_eta, "w_delta": self.weights.w_delta},
            "starts": self.starts,
        }


def stratified_starts(n: int, dim: int, seed: int = 42) -> np.ndarray:
    """Latin-hypercube sample of ``n`` points in the unit cube."""
    rng = np.random.default_rng(seed)
    cols = [(rng.permutation(n) + rng.random(n)) / n for _ in range(dim)]
    return np.column_stack(cols)


def cell_objective(eta_s: PolySurrogate, delta_s: PolySurrogate, w: ObjectiveWeights,
                   bounds: Bounds):
    """Objective and gradient in unit-cube coordinates of ``bounds``."""
    lo, width = bounds.lo, bounds.width
    ke, kd = eta_s.to_fraction, delta_s.to_fraction

    def fun(z):
        x = lo + z * width
        val = 0.0
        grad = np.zeros_like(x)
        if w.w_eta:
            e, ge = eta_s.value_and_gradient(x)
            val -= w.w_eta * ke * e
            grad -= w.w_eta * ke * ge
        if w.w_delta:
            d, gd = delta_s.value_and_gradient(x)
            val += w.w_delta * kd * d
            grad += w.w_delta * kd * gd
        return val, grad * width

    return fun


def optimize_cell(eta_s: PolySurrogate, delta_s: PolySurrogate,
                  w: ObjectiveWeights | None = None, bounds: Bounds = PAPER_BOUNDS,
                  starts: int = 32, seed: int = 42, **opts) -> OptimResult:
    """Maximize ``w_eta * eta - w_delta * delta`` over the box.

    Runs :func:`minimize` in unit-cube coordinates from the box center and
    ``starts`` stratified random points; the lowest objective wins, ties going
    to the earliest start.

    Parameters
    ----------
    eta_s, delta_s : PolySurrogate
        Efficiency and degradation models; their ``units`` are honoured.
    w : ObjectiveWeights, optional
        Defaults to equal weights.
    bounds : Bounds
        Raw-unit box.
    starts : int
        Number of stratified starts besides the center.
    seed : int
        Seed of the stratified sample.
    """
    w = ObjectiveWeights() if w is None else w
    fun = cell_objective(eta_s, delta_s, w, bounds)
    z0s = np.vstack([np.full(len(bounds), 0.5), stratified_starts(starts, len(bounds), seed)])
    best = None
    for z0 in z0s:
        r = minimize(fun, np.zeros(len(bounds)), np.ones(len(bounds)), z0, **opts)
        if best is None or r.fun < best.fun:
            best = r
    x = bounds.clip(bounds.lo + best.x * bounds.width)
    eta = eta_s.predict(x) * eta_s.to_fraction * 100.0
    delta = delta_s.predict(x) * delta_s.to_fraction * 100.0
    trace = [bounds.lo + z * bounds.width for z in best.trace]
    return OptimResult(FeatureVector.from_array(x), best.fun, eta, delta, best.iterations,
                       best.converged, best.pg_norm, w, len(z0s), trace)


def weight_sweep(eta_s: PolySurrogate, delta_s: PolySurrogate, pairs=TABLE8_WEIGHTS,
                 bounds: Bounds = PAPER_BOUNDS, starts: int = 32, seed: int = 42) -> list:
    """One :func:`optimize_cell` per weight pair, sharing the seed."""
    rows = []
    for we, wd in pairs:
        r = optimize_cell(eta_s, delta_s, ObjectiveWeights(we, wd), bounds, starts, seed)
        rows.append({"w_eta": r.weights.w_eta, "w_delta": r.weights.w_delta,
                     "eta_pct": r.eta_pct, "delta_pct": r.delta_pct,
                     "x_star": r.x_star.to_dict(), "converged": r.converged})
    return rows


def parse_bounds(text: str) -> Bounds:
    """Parse ``x=55:78,nabs=3e14:1e15,tabs=0.2:0.55,netl=2e16:1.9e17``."""
    keys = {"x": 0, "nabs": 1, "tabs": 2, "netl": 3}
    lo = list(PAPER_BOUNDS.lower)
    hi = list(PAPER_BOUNDS.upper)
    for item in filter(None, (p.strip() for p in text.split(","))):
        name, _, rng = item.partition("=")
        if name not in keys or ":" not in rng:
            raise ValueError(f"bad bounds entry {item!r}")
        a, b = rng.split(":")
        lo[keys[name]], hi[keys[name]] = float(a), float(b)
    return Bounds(tuple(lo), tuple(hi))
