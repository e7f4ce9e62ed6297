"""Bias sweeps, external resistances and J-V metrics on top of the solver."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq, minimize_scalar

from ..diode import CellMetrics
from .device import DeviceStack, default_device
from .solver import Discretization, DivergenceError, MeshSpec, MeshState

# Short-circuit current [mA/cm^2] the default device is calibrated to; the
# resulting coefficient is stored as DeviceStack.alpha_eff.
TARGET_JSC = 16.5
_MAX_HALVINGS = 10


@dataclass
class JVResult:
    """Terminal J-V curve (external network applied) and its metrics."""

    v: np.ndarray
    j: np.ndarray
    metrics: CellMetrics
    v_intrinsic: np.ndarray
    j_intrinsic: np.ndarray

    @property
    def p(self) -> np.ndarray:
        return self.v * self.j


def _advance(disc: Discretization, u, start, stop, trace):
    """Carry ``u`` from (bias, light) ``start`` to ``stop`` by adaptive substeps."""
    (v0, l0), (v1, l1) = start, stop
    s, ds, halvings = 0.0, 1.0, 0
    extra = iters = None
    while s < 1.0:
        t = min(1.0, s + ds)
        v, light = v0 + (v1 - v0) * t, l0 + (l1 - l0) * t
        try:
            u_new, iters, extra, tr = disc.solve(u, v, light)
        except DivergenceError as exc:
            trace.extend(exc.trace)
            halvings += 1
            if halvings > _MAX_HALVINGS:
                raise DivergenceError(
                    f"continuation failed between V={v0:.4f} and V={v1:.4f}", trace) from exc
            ds *= 0.5
            continue
        trace.extend(tr)
        u, s = u_new, t
        if iters <= 6:
            ds = min(2.0 * ds, 1.0)
    return u, iters, extra


def solve_equilibrium(device: DeviceStack, mesh: MeshSpec | None = None) -> MeshState:
    """Dark zero-bias state.

    Raises
    ------
    DivergenceError
        If the nonlinear Poisson iteration does not converge.
    """
    disc = Discretization(device, mesh)
    u = disc.equilibrium_unknowns()
    _, _, extra = disc.assemble(u, 0.0, 0.0)
    return disc.state(u, 0.0, False, 0, extra)


def solve_bias_point(device: DeviceStack, v: float, illuminated: bool = True,
                     guess: MeshState | None = None,
                     mesh: MeshSpec | None = None) -> tuple:
    """Steady state at applied bias ``v``.

    Parameters
    ----------
    device : DeviceStack
    v : float
        Applied forward bias [V].
    illuminated : bool
        Whether the absorber is illuminated.
    guess : MeshState, optional
        Nearby converged state on the same mesh; defaults to equilibrium
        followed by illumination and bias continuation.

    Returns
    -------
    (MeshState, float)
        State and terminal current density [mA/cm^2], photocurrent positive.
    """
    disc = Discretization(device, mesh)
    light = 1.0 if illuminated else 0.0
    trace = []
    if guess is None:
        u = disc.equilibrium_unknowns()
        u, _, _ = _advance(disc, u, (0.0, 0.0), (0.0, light), trace)
        start = (0.0, light)
    else:
        u = guess.unknowns
        start = (guess.bias, 1.0 if guess.illuminated else 0.0)
    u, iters, extra = _advance(disc, u, start, (float(v), light), trace)
    if extra is None:
        _, _, extra = disc.assemble(u, float(v), light)
        iters = 0
    state = disc.state(u, float(v), illuminated, iters, extra)
    return state, state.current


def intrinsic_sweep(device: DeviceStack, mesh: MeshSpec | None = None,
                    v_step: float = 0.02, v_start: float = -0.05,
                    v_limit: float = 3.0, states: bool = False):
    """Illuminated sweep of the device without external resistances.

    The sweep runs from ``v_start`` in steps of ``v_step`` until the current
    has changed sign and two more points are collected.

    Returns
    -------
    v, j : numpy.ndarray
        Bias [V] and terminal current [mA/cm^2].
    list of MeshState, optional
        Only when ``states`` is true.
    """
    disc = Discretization(device, mesh)
    trace = []
    u = disc.equilibrium_unknowns()
    u, _, _ = _advance(disc, u, (0.0, 0.0), (0.0, 1.0), trace)
    u, it, extra = _advance(disc, u, (0.0, 1.0), (v_start, 1.0), trace)
    vs, js, kept = [], [], []
    v = v_start
    after = 0
    u_prev = None
    while v <= v_limit:
        st = disc.state(u, v, True, it or 0, extra)
        vs.append(v)
        js.append(st.current)
        if states:
            kept.append(st)
        if js[-1] < 0:
            after += 1
            if after > 2:
                break
        v_next = round(v + v_step, 12)
        # secant predictor along the sweep, falling back to plain continuation
        nxt = None
        if u_prev is not None:
            try:
                nxt = disc.solve(2 * u - u_prev, v_next, 1.0)
            except DivergenceError as exc:
                trace.extend(exc.trace)
        u_prev = u
        if nxt is not None:
            u, it, extra, tr = nxt
            trace.extend(tr)
        else:
            u, it, extra = _advance(disc, u, (v, 1.0), (v_next, 1.0), trace)
        v = v_next
    else:
        raise DivergenceError("no open-circuit point before the voltage limit", trace)
    out = (np.array(vs), np.array(js))
    return (*out, kept) if states else out


def apply_external(v_int, j_int, r_s: float, r_sh: float) -> tuple:
    """Wrap an intrinsic curve in a series resistor and a parallel shunt.

    Resistances in Ohm cm^2, currents in mA/cm^2. The shunt sits across the
    intrinsic junction and the series resistor carries the terminal current.
    """
    j = np.asarray(j_int) - np.asarray(v_int) * 1e3 / r_sh
    v = np.asarray(v_int) - j * r_s * 1e-3
    return v, j


def curve_metrics(v, j, power: float = 100.0) -> CellMetrics:
    """J_SC, V_OC, FF and efficiency from a sampled J-V curve.

    A monotone cubic interpolant of the samples is used for the zero
    crossings and the maximum-power search.
    """
    order = np.argsort(v)
    v, j = np.asarray(v)[order], np.asarray(j)[order]
    if not (v[0] <= 0 <= v[-1]):
        raise ValueError("curve must span V = 0")
    spline = PchipInterpolator(v, j)
    j_sc = float(spline(0.0))
    sign = np.nonzero((j[:-1] > 0) & (j[1:] <= 0))[0]
    if j_sc <= 0 or sign.size == 0:
        raise ValueError("curve has no open-circuit crossing")
    k = sign[0]
    v_oc = float(brentq(spline, v[k], v[k + 1], xtol=1e-13))
    grid = np.linspace(0.0, v_oc, 400)
    i = int(np.argmax(grid * spline(grid)))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(lambda x: -x * spline(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    p_m = float(-res.fun)
    return CellMetrics.from_jsc_voc_pm(j_sc, v_oc, p_m, power)


def simulate_jv(device: DeviceStack, mesh: MeshSpec | None = None,
                v_step: float = 0.02) -> JVResult:
    """Illuminated J-V curve with the external resistances applied.

    Parameters
    ----------
    device : DeviceStack
    mesh : MeshSpec, optional
    v_step : float
        Intrinsic bias step [V].

    Returns
    -------
    JVResult
    """
    v_int, j_int = intrinsic_sweep(device, mesh, v_step=v_step)
    v, j = apply_external(v_int, j_int, device.r_s, device.r_sh)
    metrics = curve_metrics(v, j, device.power)
    return JVResult(v, j, metrics, v_int, j_int)


def short_circuit_current(device: DeviceStack, mesh: MeshSpec | None = None) -> float:
    """Intrinsic current at zero bias [mA/cm^2]."""
    return solve_bias_point(device, 0.0, True, mesh=mesh)[1]


def calibrate_absorption(target_jsc: float = TARGET_JSC, device: DeviceStack | None = None,
                         mesh: MeshSpec | None = None, bracket=(1e3, 1e6)) -> float:
    """Absorption coefficient giving ``target_jsc`` at short circuit.

    J_SC rises with ``alpha_eff`` inside the default bracket (at much larger
    values generation crowds against the front interface and J_SC drops
    again), so the root is found by bracketing in log space.
    """
    device = default_device() if device is None else device

    def gap(log_alpha):
        dev = replace(device, alpha_eff=float(10.0 ** log_alpha))
        return short_circuit_current(dev, mesh) - target_jsc

    a, b = np.log10(bracket[0]), np.log10(bracket[1])
    if gap(a) > 0 or gap(b) < 0:
        raise ValueError("target J_SC not reachable inside the absorption bracket")
    return float(10.0 ** brentq(gap, a, b, xtol=1e-6))
