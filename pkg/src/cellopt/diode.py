"""Single-diode equivalent circuit: forward model and parameter reconstruction.

Units throughout are mA/cm^2 for current density, V for voltage, mW/cm^2 for
power density and Ohm cm^2 for the lumped resistances. An infinite shunt
resistance is written as ``r_sh=np.inf`` and handled through the shunt
conductance, which is then zero.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

V_T_300K = 0.02585
_EXP_CLAMP = 700.0
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class SolverFailure(RuntimeError):
    """Scalar current solve did not converge; ``residual`` is the last value."""

    def __init__(self, message, residual=np.nan):
        super().__init__(message)
        self.residual = residual


class NoOpenCircuitError(ValueError):
    """The J-V curve never crosses zero current for V >= 0."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """The reconstruction Jacobian is singular."""


class ReconstructionError(RuntimeError):
    """Newton reconstruction did not converge; ``trace`` holds the iterates."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


@dataclass(frozen=True)
class DiodeParams:
    """Single-diode parameters.

    Attributes
    ----------
    j_ph : float
        Photocurrent density [mA/cm^2].
    j_0 : float
        Reverse saturation current density [mA/cm^2].
    n : float
        Ideality factor.
    r_s : float
        Series resistance [Ohm cm^2].
    r_sh : float
        Shunt resistance [Ohm cm^2]; ``np.inf`` for no shunt.
    v_t : float
        Thermal voltage [V].
    """

    j_ph: float
    j_0: float
    n: float
    r_s: float = 1.0
    r_sh: float = 1000.0
    v_t: float = V_T_300K

    def __post_init__(self):
        if not (np.isfinite(self.j_ph) and self.j_ph >= 0):
            raise ValueError("j_ph must be finite and >= 0")
        if not (np.isfinite(self.j_0) and self.j_0 > 0):
            raise ValueError("j_0 must be > 0")
        if not self.n >= 0.5:
            raise ValueError("n must be >= 0.5")
        if not (np.isfinite(self.r_s) and self.r_s >= 0):
            raise ValueError("r_s must be >= 0")
        if not self.r_sh > 0:
            raise ValueError("r_sh must be > 0")
        if not self.v_t > 0:
            raise ValueError("v_t must be > 0")

    @property
    def rs_v(self) -> float:
        """Series resistance in V per (mA/cm^2)."""
        return self.r_s * 1e-3

    @property
    def g_sh(self) -> float:
        """Shunt conductance in (mA/cm^2) per V."""
        return 1e3 / self.r_sh

    @property
    def nvt(self) -> float:
        return self.n * self.v_t


@dataclass(frozen=True)
class CellMetrics:
    """Scalar performance of a J-V curve.

    ``ff`` and ``eta`` are in percent; ``eta`` assumes ``power`` mW/cm^2 input.
    """

    j_sc: float
    v_oc: float
    ff: float
    p_m: float
    eta: float

    def __post_init__(self):
        if not (self.j_sc > 0 and self.v_oc > 0):
            raise ValueError("j_sc and v_oc must be positive")
        if not 0 < self.ff < 100:
            raise ValueError(f"fill factor {self.ff!r} outside (0, 100)")

    @classmethod
    def from_jsc_voc_pm(cls, j_sc, v_oc, p_m, power=100.0) -> "CellMetrics":
        ff = 100.0 * p_m / (j_sc * v_oc)
        return cls(float(j_sc), float(v_oc), float(ff), float(p_m), float(100.0 * p_m / power))

    @classmethod
    def from_jsc_voc_ff(cls, j_sc, v_oc, ff, power=100.0) -> "CellMetrics":
        p_m = ff / 100.0 * j_sc * v_oc
        return cls(float(j_sc), float(v_oc), float(ff), float(p_m), float(100.0 * p_m / power))


class Curve(NamedTuple):
    v: np.ndarray
    j: np.ndarray
    p: np.ndarray
    mpp_index: int


class Knowns(NamedTuple):
    """Measured quantities and fixed circuit elements for reconstruction."""

    j_sc: float
    v_oc: float
    p_m: float
    r_s: float = 1.0
    r_sh: float = 1000.0
    v_t: float = V_T_300K


@dataclass(frozen=True)
class ReconstructionResult:
    params: DiodeParams
    v_m: float
    iterations: int
    residual_norm: float

    def to_dict(self) -> dict:
        return {
            "j_ph": self.params.j_ph, "j_0": self.params.j_0, "n": self.params.n,
            "v_m": self.v_m, "iterations": self.iterations,
            "residual_norm": self.residual_norm,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _exp(x):
    return np.exp(np.minimum(x, _EXP_CLAMP))


def _residual(params: DiodeParams, v, j):
    vd = v + j * params.rs_v
    return params.j_ph - params.j_0 * np.expm1(np.minimum(vd / params.nvt, _EXP_CLAMP)) \
        - vd * params.g_sh - j


def solve_current(params: DiodeParams, v, tol=1e-12, max_iter=200):
    """Current density at voltage ``v`` from the implicit single-diode equation.

    Safeguarded Newton iteration: Newton steps that leave the current bracket
    are replaced by bisection. Works elementwise on arrays.

    Parameters
    ----------
    params : DiodeParams
    v : float or array_like
        Terminal voltage [V].
    tol : float
        Absolute residual target [mA/cm^2].

    Returns
    -------
    float or numpy.ndarray
        Current density [mA/cm^2], positive in the power quadrant.

    Raises
    ------
    SolverFailure
        If some element does not reach ``tol`` within ``max_iter``.
    """
    if np.ndim(v) == 0:
        return _solve_scalar(params, float(v), tol, max_iter)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    rs, g, nvt, j0 = params.rs_v, params.g_sh, params.nvt, params.j_0

    # f is strictly decreasing in j, so lo/hi bracket the root once signs differ
    lo = np.full_like(v, -2.0 * params.j_ph - 1.0)
    hi = 2.0 * params.j_ph + j0 * _exp(v / nvt) + 1.0
    for _ in range(200):
        bad_lo = _residual(params, v, lo) < 0
        bad_hi = _residual(params, v, hi) > 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, 2.0 * lo - 1.0, lo)
        hi = np.where(bad_hi, 2.0 * hi + 1.0, hi)

    j = np.clip(np.full_like(v, params.j_ph), lo, hi)
    f = _residual(params, v, j)
    for _ in range(max_iter):
        if np.all(np.abs(f) <= tol):
            break
        lo = np.where(f > 0, j, lo)
        hi = np.where(f < 0, j, hi)
        e = j0 * _exp((v + j * rs) / nvt)
        df = -e * rs / nvt - rs * g - 1.0
        step = j - f / df
        outside = ~((step > lo) & (step < hi))
        j_new = np.where(outside, 0.5 * (lo + hi), step)
        j = np.where(np.abs(f) <= tol, j, j_new)
        f = _residual(params, v, j)
        if np.all((np.abs(f) <= tol) | (hi - lo <= 4 * np.finfo(float).eps * np.abs(j))):
            break
    worst = float(np.max(np.abs(f)))
    # a residual that is only rounding noise around an exact bracket is accepted
    if worst > tol and not np.all((np.abs(f) <= tol) | (hi - lo <= 1e-13 * (1 + np.abs(j)))):
        raise SolverFailure(f"current solve stalled, residual {worst:.3e}", worst)
    return j


def _solve_scalar(params: DiodeParams, v: float, tol: float, max_iter: int) -> float:
    # same safeguarded Newton as the array path, without numpy call overhead
    rs, g, nvt, j0, jph = params.rs_v, params.g_sh, params.nvt, params.j_0, params.j_ph

    def f(j):
        vd = v + j * rs
        return jph - j0 * math.expm1(min(vd / nvt, _EXP_CLAMP)) - vd * g - j

    lo = -2.0 * jph - 1.0
    hi = 2.0 * jph + j0 * math.exp(min(v / nvt, _EXP_CLAMP)) + 1.0
    for _ in range(200):
        if f(lo) >= 0:
            break
        lo = 2.0 * lo - 1.0
    for _ in range(200):
        if f(hi) <= 0:
            break
        hi = 2.0 * hi + 1.0
    j = min(max(jph, lo), hi)
    fj = f(j)
    for _ in range(max_iter):
        if abs(fj) <= tol:
            return j
        if fj > 0:
            lo = j
        else:
            hi = j
        e = j0 * math.exp(min((v + j * rs) / nvt, _EXP_CLAMP))
        step = j + fj / (e * rs / nvt + rs * g + 1.0)
        j = step if lo < step < hi else 0.5 * (lo + hi)
        fj = f(j)
        if hi - lo <= 1e-13 * (1.0 + abs(j)):
            return j
    if abs(fj) <= tol:
        return j
    raise SolverFailure(f"current solve stalled, residual {abs(fj):.3e}", abs(fj))


def djdv(params: DiodeParams, v, j):
    """Slope dJ/dV of the implicit curve at the point (v, j)."""
    e = params.j_0 * _exp((v + j * params.rs_v) / params.nvt) / params.nvt
    g, rs = params.g_sh, params.rs_v
    return -(e + g) / (1.0 + e * rs + rs * g)


def characteristic_curves(params: DiodeParams, v_max: float, steps: int = 200) -> Curve:
    """Sample J-V and P-V on ``steps`` evenly spaced voltages in [0, v_max]."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if not v_max > 0:
        raise ValueError("v_max must be > 0")
    v = np.linspace(0.0, v_max, int(steps))
    j = solve_current(params, v)
    p = j * v
    return Curve(v, j, p, int(np.argmax(p)))


def _golden_max(fun, a, b, tol=1e-12, max_iter=200):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def max_power_point(params: DiodeParams, v_oc: float, coarse: int = 200) -> tuple:
    """(v_m, j_m, p_m) from a coarse scan refined by golden-section search."""
    curve = characteristic_curves(params, v_oc, coarse)
    i = curve.mpp_index
    a = curve.v[max(i - 1, 0)]
    b = curve.v[min(i + 1, coarse - 1)]

    def power(v):
        return v * solve_current(params, v)

    v_m = _golden_max(power, a, b)

    def dpdv(v):
        j = solve_current(params, v)
        return j + v * djdv(params, v, j)

    # the golden search stalls at ~sqrt(eps); the stationarity root is sharper
    fa, fb = dpdv(a), dpdv(b)
    if fa > 0 > fb:
        v_m = brentq(dpdv, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    j_m = solve_current(params, v_m)
    return float(v_m), float(j_m), float(v_m * j_m)


def open_circuit_voltage(params: DiodeParams) -> float:
    """Root of J(V) = 0 on V >= 0."""
    if params.j_ph <= 0:
        raise NoOpenCircuitError("no photocurrent, so no open-circuit point")
    # at the ideal-diode V_oc every loss term makes J <= 0; the nudge keeps
    # rounding at an exact ideal root from hiding the sign change
    v_hi = params.nvt * np.log1p(params.j_ph / params.j_0) * (1 + 1e-9) + 1e-12
    if solve_current(params, 0.0) <= 0:
        raise NoOpenCircuitError("J(0) <= 0")
    if solve_current(params, v_hi) > 0:
        raise NoOpenCircuitError("no sign change of J on [0, V_ideal]")
    return float(brentq(lambda v: solve_current(params, v), 0.0, v_hi,
                        xtol=1e-14, rtol=4 * np.finfo(float).eps))


def extract_metrics(params: DiodeParams, power: float = 100.0) -> CellMetrics:
    """J_SC, V_OC, FF, P_m and efficiency of the diode.

    Raises
    ------
    NoOpenCircuitError
        If the curve never reaches zero current at forward bias.
    """
    j_sc = solve_current(params, 0.0)
    v_oc = open_circuit_voltage(params)
    _, _, p_m = max_power_point(params, v_oc)
    return CellMetrics.from_jsc_voc_pm(j_sc, v_oc, p_m, power)


def _unpack(u):
    j_ph, j_0, n, v_m = (float(a) for a in u)
    return j_ph, j_0, n, v_m


def residual_vector(u, knowns: Knowns, voc_form: str = "consistent") -> np.ndarray:
    """Residuals of the four reconstruction conditions.

    Parameters
    ----------
    u : array_like
        Unknowns ``(j_ph, j_0, n, v_m)``.
    knowns : Knowns
        ``(j_sc, v_oc, p_m, r_s, r_sh, v_t)``.
    voc_form : {"consistent", "printed"}
        ``"consistent"`` evaluates the open-circuit condition as a current
        balance, valid for any shunt including none. ``"printed"`` writes it
        as ``v_oc - r_sh * (j_ph - j_0 (exp(v_oc / n v_t) - 1))``, which needs
        a finite shunt and has the same root.

    Returns
    -------
    numpy.ndarray
        ``(short-circuit, open-circuit, dP/dV = 0, maximum power)`` residuals.
    """
    j_ph, j_0, n, v_m = _unpack(u)
    j_sc, v_oc, p_m, r_s, r_sh, v_t = knowns
    rs = r_s * 1e-3
    g = 1e3 / r_sh
    nvt = n * v_t

    f_jsc = j_ph - j_0 * (_exp(j_sc * rs / nvt) - 1.0) - j_sc * rs * g
    if voc_form == "consistent":
        r_voc = -(j_ph - j_0 * (_exp(v_oc / nvt) - 1.0) - v_oc * g)
    elif voc_form == "printed":
        if not np.isfinite(r_sh):
            raise ValueError("printed open-circuit form needs a finite r_sh")
        r_voc = v_oc - (j_ph - j_0 * (_exp(v_oc / nvt) - 1.0)) * r_sh * 1e-3
    else:
        raise ValueError(f"unknown voc_form {voc_form!r}")

    vd = v_m + p_m * rs / v_m
    e = _exp(vd / nvt)
    j_m = j_ph - j_0 * (e - 1.0) - vd * g
    slope = (j_0 * e / nvt + g) / (1.0 + j_0 * rs * e / nvt + rs * g)
    f_dp = j_m - v_m * slope
    f_pm = j_m * v_m
    return np.array([j_sc - f_jsc, r_voc, -f_dp, p_m - f_pm])


def _fd_jacobian(fun, u, rel_step=1e-6, central=True):
    u = np.asarray(u, dtype=float)
    f0 = None if central else fun(u)
    jac = None
    for k in range(u.size):
        h = rel_step * max(abs(u[k]), 1e-300)
        up = u.copy()
        up[k] += h
        if central:
            um = u.copy()
            um[k] -= h
            col = (fun(up) - fun(um)) / (2 * h)
        else:
            col = (fun(up) - f0) / h
        if jac is None:
            jac = np.empty((col.size, u.size))
        jac[:, k] = col
    return jac


def residual_jacobian(u, knowns: Knowns, voc_form="consistent", central=True):
    """Finite-difference Jacobian of :func:`residual_vector`."""
    return _fd_jacobian(lambda w: residual_vector(w, knowns, voc_form), u, central=central)


def reconstruct_parameters(metrics, r_s: float = 1.0, r_sh: float = 1000.0,
                           v_t: float = V_T_300K, tol: float = 1e-9,
                           max_iter: int = 50, voc_form: str = "consistent",
                           initial=None) -> ReconstructionResult:
    """Recover ``(j_ph, j_0, n, v_m)`` from J_SC, V_OC and FF.

    The short- and open-circuit conditions are linear in ``(j_ph, j_0)`` for a
    given ``n`` and are solved exactly at every iterate; damped Newton-Raphson
    with a central finite-difference Jacobian then drives the maximum-power
    conditions to zero in ``(n, v_m)``. A step is halved (up to 30 times)
    while it leaves ``n >= 0.5, j_0 > 0, 0 < v_m < v_oc`` or fails to decrease
    the max-norm of all four residuals. Only ``n`` and ``v_m`` of the initial
    point are used; if the line search stalls, the iteration restarts from a
    lower ``v_m`` within the same ``max_iter`` budget.

    Parameters
    ----------
    metrics : CellMetrics or tuple
        ``CellMetrics`` or ``(j_sc, v_oc, ff)`` with ``ff`` in percent.
    r_s, r_sh, v_t : float
        Fixed circuit elements [Ohm cm^2] and thermal voltage [V].
    tol : float
        Convergence threshold on the residual max-norm.
    initial : array_like, optional
        Starting point; defaults to ``(j_sc, 1e-10, 1, 0.9 v_oc)``.

    Returns
    -------
    ReconstructionResult

    Raises
    ------
    RankDeficiencyError
        Singular Jacobian.
    ReconstructionError
        No convergence within ``max_iter``.
    """
    if isinstance(metrics, CellMetrics):
        j_sc, v_oc, ff = metrics.j_sc, metrics.v_oc, metrics.ff
    else:
        j_sc, v_oc, ff = (float(a) for a in metrics)
    if not (j_sc > 0 and v_oc > 0 and 0 < ff < 100):
        raise ValueError("need j_sc > 0, v_oc > 0 and 0 < ff < 100")
    p_m = ff / 100.0 * j_sc * v_oc
    knowns = Knowns(j_sc, v_oc, p_m, r_s, r_sh, v_t)

    def fun(z):
        return residual_vector(_expand(z, knowns), knowns, voc_form)

    def admissible(z):
        return np.isfinite(z).all() and z[0] >= 0.5 and 0 < z[1] < v_oc \
            and _eliminate(z[0], knowns)[1] > 0

    u0 = [j_sc, 1e-10, 1.0, 0.9 * v_oc] if initial is None else initial
    starts = [np.array([u0[2], u0[3]], dtype=float)]
    # fallback starts for strongly resistive cells whose V_m sits far below 0.9 V_oc
    starts += [np.array([u0[2], f * v_oc]) for f in (0.75, 0.6, 0.45)]
    if not admissible(starts[0]):
        raise ValueError("initial (n, v_m) outside the admissible region")

    used = 0
    trace = []
    norm = np.inf
    for z in starts:
        r = fun(z)
        norm = float(np.max(np.abs(r)))
        trace.append(_expand(z, knowns))
        while used < max_iter and norm > tol:
            jac = _fd_jacobian(lambda q: fun(q)[2:], z)
            if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) > 1e14:
                raise RankDeficiencyError("reconstruction Jacobian is singular")
            dz = np.linalg.solve(jac, -r[2:])
            used += 1
            t = 1.0
            for _ in range(31):
                cand = z + t * dz
                if admissible(cand):
                    r_c = fun(cand)
                    n_c = float(np.max(np.abs(r_c)))
                    if n_c < norm:
                        break
                t *= 0.5
            else:
                break  # stalled: try the next start
            z, r, norm = cand, r_c, n_c
            trace.append(_expand(z, knowns))
        if norm <= tol:
            return _result(_expand(z, knowns), knowns, used, norm)
        if used >= max_iter:
            break
    raise ReconstructionError(
        f"no convergence in {max_iter} iterations (residual {norm:.3e})", trace)


def _eliminate(n, knowns: Knowns) -> tuple:
    """(j_ph, j_0) satisfying the short- and open-circuit conditions exactly.

    Both conditions are linear in (j_ph, j_0) once n is fixed.
    """
    j_sc, v_oc, _, r_s, r_sh, v_t = knowns
    rs, g = r_s * 1e-3, 1e3 / r_sh
    nvt = n * v_t
    a = np.expm1(min(j_sc * rs / nvt, _EXP_CLAMP))
    b = np.expm1(min(v_oc / nvt, _EXP_CLAMP))
    j_0 = (j_sc * (1.0 + rs * g) - v_oc * g) / (b - a)
    return v_oc * g + j_0 * b, j_0


def _expand(z, knowns: Knowns) -> np.ndarray:
    j_ph, j_0 = _eliminate(z[0], knowns)
    return np.array([j_ph, j_0, z[0], z[1]])


def _result(u, knowns: Knowns, iterations, norm) -> ReconstructionResult:
    params = DiodeParams(u[0], u[1], u[2], knowns.r_s, knowns.r_sh, knowns.v_t)
    return ReconstructionResult(params, float(u[3]), int(iterations), float(norm))


def curve_rmse(a: DiodeParams, b: DiodeParams, v_max: float, steps: int = 200) -> tuple:
    """RMSE of the J-V and P-V curves of two diodes on a shared voltage grid."""
    v = np.linspace(0.0, v_max, steps)
    ja, jb = solve_current(a, v), solve_current(b, v)
    rj = float(np.sqrt(np.mean((ja - jb) ** 2)))
    rp = float(np.sqrt(np.mean((v * ja - v * jb) ** 2)))
    return rj, rp


def write_curve_csv(path, v, j) -> None:
    """Write a J-V curve with columns ``v_V,j_mA_cm2,p_mW_cm2``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["v_V", "j_mA_cm2", "p_mW_cm2"])
        for vi, ji in zip(np.asarray(v, float), np.asarray(j, float)):
            w.writerow([repr(float(vi)), repr(float(ji)), repr(float(vi * ji))])


def read_curve_csv(path) -> tuple:
    """Read a curve written by :func:`write_curve_csv`; returns ``(v, j, p)``."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    return data["v_V"], data["j_mA_cm2"], data["p_mW_cm2"]


def with_resistances(params: DiodeParams, r_s=None, r_sh=None) -> DiodeParams:
    changes = {}
    if r_s is not None:
        changes["r_s"] = r_s
    if r_sh is not None:
        changes["r_sh"] = r_sh
    return replace(params, **changes)
