"""Steady-state 1-D drift-diffusion solver.

Unknowns per node are the electrostatic potential and the electron and hole
quasi-Fermi levels (all in volts), so every unknown is O(1) even where the
carrier densities span fifty orders of magnitude. Currents use
Scharfetter-Gummel fluxes written in band-edge potentials, which carry the
heterojunction offsets and density-of-states steps. The coupled system is
solved by damped Newton iteration on an interleaved banded Jacobian.

Energy reference: the front-contact Fermi level is zero and the vacuum level
is ``-psi``, so ``Ec = -psi - chi`` and ``Ev = Ec - Eg``. A forward bias ``v``
lowers the back-contact Fermi level to ``-v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import constants
from scipy.linalg import solve_banded

from .device import DeviceStack
from .optics import cell_generation, photon_flux_above_gap

Q = constants.e
EPS0 = constants.epsilon_0 * 1e-2  # F/cm
NM = 1e-7  # cm per nm

_BAND = 5  # half bandwidth of the interleaved 3-unknown stencil


class DivergenceError(RuntimeError):
    """Newton iteration failed to converge at a bias point."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


@dataclass(frozen=True)
class MeshSpec:
    """Nodes per layer and edge refinement strength (0 = uniform, < 1)."""

    nodes_per_layer: int | tuple = 60
    grading: float = 0.8

    def counts(self, n_layers: int) -> tuple:
        if isinstance(self.nodes_per_layer, int):
            counts = (self.nodes_per_layer,) * n_layers
        else:
            counts = tuple(self.nodes_per_layer)
        if len(counts) != n_layers or min(counts) < 50:
            raise ValueError("need at least 50 nodes for every layer")
        return counts


@dataclass
class MeshState:
    """Solution on the mesh. Positions in nm, densities in cm^-3."""

    x: np.ndarray
    psi: np.ndarray
    efn: np.ndarray
    efp: np.ndarray
    n: np.ndarray
    p: np.ndarray
    bias: float
    illuminated: bool
    converged: bool
    iterations: int = 0
    jn: np.ndarray = field(default=None, repr=False)
    jp: np.ndarray = field(default=None, repr=False)

    @property
    def current(self) -> float:
        """Terminal current density [mA/cm^2], photocurrent positive."""
        return float(np.mean(self.jn + self.jp)) * 1e3

    @property
    def unknowns(self) -> np.ndarray:
        u = np.empty(3 * self.psi.size)
        u[0::3], u[1::3], u[2::3] = self.psi, self.efn, self.efp
        return u


def bernoulli(x):
    """B(x) = x / (exp(x) - 1) and its derivative."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    em1 = np.expm1(xs)
    b = np.where(small, 1.0 - x / 2 + x * x / 12, xs / np.where(small, 1.0, em1))
    db = np.where(small, -0.5 + x / 6, (b * (1.0 - b) - xs * b) / xs)
    # large positive x: expm1 overflows; B -> x e^-x ~ 0
    big = x > 700
    if np.any(big):
        b = np.where(big, 0.0, b)
        db = np.where(big, 0.0, db)
    return b, db


def _graded_nodes(start, width, m, grading):
    u = (np.arange(m) + 0.5) / m
    return start + width * (u - grading * np.sin(2 * np.pi * u) / (2 * np.pi))


class Discretization:
    """Finite-volume arrays for one device on one mesh."""

    def __init__(self, device: DeviceStack, mesh: MeshSpec | None = None):
        mesh = MeshSpec() if mesh is None else mesh
        self.device = device
        self.mesh = mesh
        self.vt = constants.k * device.temperature / Q
        counts = mesh.counts(len(device.layers))

        xs, owner = [], []
        start = 0.0
        for k, (layer, m) in enumerate(zip(device.layers, counts)):
            xs.append(_graded_nodes(start, layer.thickness, m, mesh.grading))
            owner.append(np.full(m, k))
            start += layer.thickness
        total = start
        x = np.concatenate([[0.0], *xs, [total]])
        owner = np.concatenate([[0], *owner, [len(device.layers) - 1]])
        self.x_nm = x
        self.owner = owner
        x = x * NM
        self.x = x
        self.h = np.diff(x)
        edges = np.concatenate([[x[0]], 0.5 * (x[1:] + x[:-1]), [x[-1]]])
        self.dx = np.diff(edges)
        self.N = x.size

        def prop(name):
            return np.array([getattr(device.layers[k], name) for k in owner], dtype=float)

        self.chi = prop("chi")
        self.eg = prop("e_g")
        self.nc = prop("n_c")
        self.nv = prop("n_v")
        self.ln_nc = np.log(self.nc)
        self.ln_nv = np.log(self.nv)
        self.ndop = prop("n_d") - prop("n_a")
        eps = prop("eps_r") * EPS0
        mun, mup = prop("mu_n"), prop("mu_p")
        self.eps_e = 2 * eps[1:] * eps[:-1] / (eps[1:] + eps[:-1])
        self.mun_e = 2 * mun[1:] * mun[:-1] / (mun[1:] + mun[:-1])
        self.mup_e = 2 * mup[1:] * mup[:-1] / (mup[1:] + mup[:-1])

        taus = np.array([device.layers[k].lifetimes(device.v_th) for k in owner])
        self.tau_n, self.tau_p = taus[:, 0], taus[:, 1]
        vt = self.vt
        self.ni2 = self.nc * self.nv * np.exp(-self.eg / vt)
        # effective single level at mid-gap
        self.n1 = self.nc * np.exp(-self.eg / (2 * vt))
        self.p1 = self.nv * np.exp(-self.eg / (2 * vt))

        # light enters through the ETL; cell_generation clips everything in
        # front of the absorber, so the interface volume keeps its share
        absorber_start = sum(layer.thickness for layer in device.layers[:-1]) * NM
        flux = photon_flux_above_gap(device.absorber.e_g, device.power)
        self.generation = cell_generation(edges - absorber_start, flux, device.alpha_eff)
        self.absorbed_flux = flux * -np.expm1(-device.alpha_eff * device.absorber.thickness * NM)

        self.psi_left = -device.phi_front

        # banded-storage index maps
        nu = 3 * self.N
        k = np.arange(2 * _BAND + 1)[:, None]
        c = np.arange(nu)[None, :]
        r = c + k - _BAND
        self._ab_valid = (r >= 0) & (r < nu)
        self._ab_rows = np.clip(r, 0, nu - 1)
        self._ab_cols = np.broadcast_to(2 * _BAND - k, r.shape)

    # -- carrier statistics -------------------------------------------------

    def densities(self, psi, efn, efp):
        vt = self.vt
        n = np.exp((efn + psi + self.chi) / vt + self.ln_nc)
        p = np.exp((-psi - self.chi - self.eg - efp) / vt + self.ln_nv)
        return n, p

    def contact_densities(self, v):
        """Equilibrium (n, p) at the front and back contacts for bias ``v``."""
        psi_l, psi_r = self.boundary_psi(v)
        vt = self.vt
        out = []
        for i, psi, ef in ((0, psi_l, 0.0), (-1, psi_r, -v)):
            out.append(np.exp((ef + psi + self.chi[i]) / vt + self.ln_nc[i]))
            out.append(np.exp((-psi - self.chi[i] - self.eg[i] - ef) / vt + self.ln_nv[i]))
        return tuple(out)

    def boundary_psi(self, v):
        return self.psi_left, v - self.device.phi_back

    def neutral_psi(self):
        """Potential giving local charge neutrality at zero quasi-Fermi levels."""
        nd = self.ndop
        root = np.sqrt(0.25 * nd * nd + self.ni2)
        n_major = 0.5 * np.abs(nd) + root
        n = np.where(nd >= 0, n_major, self.ni2 / n_major)
        return self.vt * (np.log(n) - self.ln_nc) - self.chi

    def recombination(self, n, p):
        """Total SRH + radiative + Auger rate and its partials."""
        d = self.device
        denom = self.tau_p * (n + self.n1) + self.tau_n * (p + self.p1)
        excess = n * p - self.ni2
        r_srh = excess / denom
        dn_srh = p / denom - excess * self.tau_p / denom ** 2
        dp_srh = n / denom - excess * self.tau_n / denom ** 2
        r_rad = d.b_rad * excess
        r_aug = d.c_aug * (n + p) * excess
        r = r_srh + r_rad + r_aug
        drdn = dn_srh + d.b_rad * p + d.c_aug * (excess + (n + p) * p)
        drdp = dp_srh + d.b_rad * n + d.c_aug * (excess + (n + p) * n)
        return r, drdn, drdp

    # -- currents -----------------------------------------------------------

    def fluxes(self, psi, n, p, efn=None, efp=None):
        """Element currents (A/cm^2) with partials w.r.t. both end nodes.

        Given the quasi-Fermi levels, the currents are evaluated in the
        equivalent form ``-c B(d) n_r expm1((Efn_l - Efn_r) / Vt)``, which
        avoids cancelling the large drift and diffusion terms against each
        other in highly doped regions.
        """
        vt = self.vt
        phic = psi + self.chi + vt * self.ln_nc
        dn = (phic[1:] - phic[:-1]) / vt
        bp, dbp = bernoulli(dn)
        bm, dbm = bernoulli(-dn)
        cn = Q * self.mun_e * vt / self.h
        nl, nr = n[:-1], n[1:]
        if efn is None:
            fn = cn * (nr * bp - nl * bm)
        else:
            fn = -cn * bp * nr * np.expm1((efn[:-1] - efn[1:]) / vt)
        common = (nr * dbp + nl * dbm) / vt
        jn = {
            "psi_l": cn * (-nl * bm / vt - common),
            "psi_r": cn * (nr * bp / vt + common),
            "ef_l": -cn * nl * bm / vt,
            "ef_r": cn * nr * bp / vt,
        }

        phiv = psi + self.chi + self.eg - vt * self.ln_nv
        dv = (phiv[1:] - phiv[:-1]) / vt
        bp, dbp = bernoulli(dv)
        bm, dbm = bernoulli(-dv)
        cp = Q * self.mup_e * vt / self.h
        pl, pr = p[:-1], p[1:]
        if efp is None:
            fp = cp * (pl * bp - pr * bm)
        else:
            fp = -cp * bp * pl * np.expm1((efp[:-1] - efp[1:]) / vt)
        common = (pl * dbp + pr * dbm) / vt
        jp = {
            "psi_l": cp * (-pl * bp / vt - common),
            "psi_r": cp * (pr * bm / vt + common),
            "ef_l": -cp * pl * bp / vt,
            "ef_r": cp * pr * bm / vt,
        }
        return fn, jn, fp, jp

    # -- Newton system ------------------------------------------------------

    def assemble(self, u, v, light):
        """Residual vector and row-major banded Jacobian."""
        vt = self.vt
        N = self.N
        d = self.device
        psi, efn, efp = u[0::3], u[1::3], u[2::3]
        n, p = self.densities(psi, efn, efp)
        r, drdn, drdp = self.recombination(n, p)
        g = self.generation * light
        fn, jn, fp, jp = self.fluxes(psi, n, p, efn, efp)

        # contact fluxes via surface recombination toward the metal Fermi level
        psi_l, psi_r = self.boundary_psi(v)
        neq_l, peq_l, neq_r, peq_r = self.contact_densities(v)
        qs_n, qs_p = Q * d.s_n, Q * d.s_p

        fn_full = np.concatenate([[qs_n * (n[0] - neq_l)], fn, [-qs_n * (n[-1] - neq_r)]])
        fp_full = np.concatenate([[-qs_p * (p[0] - peq_l)], fp, [qs_p * (p[-1] - peq_r)]])

        def pad(jd, left_psi, left_ef, right_psi, right_ef):
            # derivative arrays over N+1 pseudo-elements (boundary fluxes at the ends)
            out = {}
            out["psi_l"] = np.concatenate([[0.0], jd["psi_l"], [right_psi]])
            out["ef_l"] = np.concatenate([[0.0], jd["ef_l"], [right_ef]])
            out["psi_r"] = np.concatenate([[left_psi], jd["psi_r"], [0.0]])
            out["ef_r"] = np.concatenate([[left_ef], jd["ef_r"], [0.0]])
            return out

        jnp_ = pad(jn, qs_n * n[0] / vt, qs_n * n[0] / vt,
                   -qs_n * n[-1] / vt, -qs_n * n[-1] / vt)
        jpp_ = pad(jp, qs_p * p[0] / vt, qs_p * p[0] / vt,
                   -qs_p * p[-1] / vt, -qs_p * p[-1] / vt)

        qdx = Q * self.dx
        res = np.empty(3 * N)
        rn = fn_full[1:] - fn_full[:-1] + qdx * (g - r)
        rp = fp_full[1:] - fp_full[:-1] - qdx * (g - r)

        # Poisson
        dflux = self.eps_e * (psi[1:] - psi[:-1]) / self.h
        rpsi = np.empty(N)
        rpsi[1:-1] = dflux[1:] - dflux[:-1] + qdx[1:-1] * (p - n + self.ndop)[1:-1]
        rpsi[0] = psi[0] - psi_l
        rpsi[-1] = psi[-1] - psi_r
        res[0::3], res[1::3], res[2::3] = rpsi, rn, rp

        A = np.zeros((3 * N, 2 * _BAND + 1))

        def put(eq, var, dnode, values, nodes):
            rows = 3 * nodes + eq
            A[rows, _BAND + 3 * dnode + var - eq] += values

        inner = np.arange(1, N - 1)
        allnodes = np.arange(N)
        ce = self.eps_e / self.h
        put(0, 0, 0, -(ce[1:] + ce[:-1]) - qdx[1:-1] * (p + n)[1:-1] / vt, inner)
        put(0, 0, 1, ce[1:], inner)
        put(0, 0, -1, ce[:-1], inner)
        put(0, 1, 0, -qdx[1:-1] * n[1:-1] / vt, inner)
        put(0, 2, 0, -qdx[1:-1] * p[1:-1] / vt, inner)
        put(0, 0, 0, np.ones(2), np.array([0, N - 1]))

        dr_dpsi = (drdn * n - drdp * p) / vt
        dr_defn = drdn * n / vt
        dr_defp = -drdp * p / vt

        # electron continuity: dn/defn = n/vt, no efp dependence except via R
        put(1, 0, 0, jnp_["psi_l"][1:] - jnp_["psi_r"][:-1] - qdx * dr_dpsi, allnodes)
        put(1, 1, 0, jnp_["ef_l"][1:] - jnp_["ef_r"][:-1] - qdx * dr_defn, allnodes)
        put(1, 2, 0, -qdx * dr_defp, allnodes)
        put(1, 0, 1, jnp_["psi_r"][1:-1], allnodes[:-1])
        put(1, 1, 1, jnp_["ef_r"][1:-1], allnodes[:-1])
        put(1, 0, -1, -jnp_["psi_l"][1:-1], allnodes[1:])
        put(1, 1, -1, -jnp_["ef_l"][1:-1], allnodes[1:])

        put(2, 0, 0, jpp_["psi_l"][1:] - jpp_["psi_r"][:-1] + qdx * dr_dpsi, allnodes)
        put(2, 2, 0, jpp_["ef_l"][1:] - jpp_["ef_r"][:-1] + qdx * dr_defp, allnodes)
        put(2, 1, 0, qdx * dr_defn, allnodes)
        put(2, 0, 1, jpp_["psi_r"][1:-1], allnodes[:-1])
        put(2, 2, 1, jpp_["ef_r"][1:-1], allnodes[:-1])
        put(2, 0, -1, -jpp_["psi_l"][1:-1], allnodes[1:])
        put(2, 2, -1, -jpp_["ef_l"][1:-1], allnodes[1:])

        extra = {"n": n, "p": p, "fn": fn_full, "fp": fp_full}
        return res, A, extra

    def _direction(self, res, A, v):
        """Newton correction of a row-equilibrated system; returns (du, row scale)."""
        scale = np.abs(A).max(axis=1)
        scale[scale == 0] = 1.0
        A = A / scale[:, None]
        ab = np.where(self._ab_valid, A[self._ab_rows, self._ab_cols], 0.0)
        try:
            du = solve_banded((_BAND, _BAND), ab, -res / scale, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise DivergenceError(f"singular Jacobian at V={v:.4f}") from exc
        return du, scale

    def newton_step(self, u, v, light):
        res, A, extra = self.assemble(u, v, light)
        du, scale = self._direction(res, A, v)
        return du, res / scale, extra

    def solve(self, u0, v, light, tol=1e-8, max_iter=60, max_backtracks=8):
        """Damped Newton from ``u0``; returns (u, iterations, extra, trace).

        Each correction is log-damped to a few thermal voltages and then
        halved while it fails to reduce the row-equilibrated residual. The
        backtracking matters for minority quasi-Fermi levels, whose raw
        Newton corrections overshoot by orders of magnitude.
        """
        u = u0.copy()
        trace = []
        kvt = 2.0 * self.vt
        with np.errstate(all="ignore"):
            res, A, extra = self.assemble(u, v, light)
        for it in range(1, max_iter + 1):
            with np.errstate(all="ignore"):
                du, scale = self._direction(res, A, v)
                # logarithmic damping keeps large corrections bounded
                du = np.sign(du) * kvt * np.log1p(np.abs(du) / kvt)
            if not (np.all(np.isfinite(du)) and np.all(np.isfinite(res))):
                raise DivergenceError(f"non-finite Newton update at V={v:.4f}", trace)
            r0 = float(np.linalg.norm(res / scale))
            t = 1.0
            first = None
            for _ in range(max_backtracks + 1):
                with np.errstate(all="ignore"):
                    trial = self.assemble(u + t * du, v, light)
                ok = np.all(np.isfinite(trial[0]))
                if first is None and ok:
                    first = (t, trial)
                if ok and np.linalg.norm(trial[0] / scale) <= (1.0 - 1e-4 * t) * r0:
                    break
                t *= 0.5
            else:
                # no decrease (typically rounding-level residuals): take the full step
                if first is None:
                    raise DivergenceError(f"non-finite residual at V={v:.4f}", trace)
                t, trial = first
            u = u + t * du
            res, A, extra = trial
            step = float(np.max(np.abs(t * du)))
            trace.append(step)
            if step < tol:
                return u, it, extra, trace
        raise DivergenceError(
            f"Newton did not converge at V={v:.4f} after {max_iter} iterations "
            f"(last update {trace[-1]:.3e})", trace)

    def state(self, u, v, light, iterations, extra) -> MeshState:
        psi, efn, efp = u[0::3].copy(), u[1::3].copy(), u[2::3].copy()
        n, p = extra["n"], extra["p"]
        if np.any(n <= 0) or np.any(p <= 0):
            raise DivergenceError("non-positive carrier density")
        fn, fp = extra["fn"], extra["fp"]
        return MeshState(
            x=self.x_nm.copy(), psi=psi, efn=efn, efp=efp, n=n, p=p, bias=float(v),
            illuminated=bool(light), converged=True, iterations=iterations,
            jn=fn[1:-1].copy(), jp=fp[1:-1].copy(),
        )

    def equilibrium_unknowns(self, tol=1e-12, max_iter=200):
        """Dark zero-bias solution of the nonlinear Poisson equation."""
        vt = self.vt
        psi = self.neutral_psi()
        psi[0], psi[-1] = self.boundary_psi(0.0)
        zeros = np.zeros(self.N)
        ce = self.eps_e / self.h
        qdx = Q * self.dx
        for _ in range(max_iter):
            n, p = self.densities(psi, zeros, zeros)
            dflux = ce * (psi[1:] - psi[:-1])
            res = np.zeros(self.N)
            res[1:-1] = dflux[1:] - dflux[:-1] + qdx[1:-1] * (p - n + self.ndop)[1:-1]
            ab = np.zeros((3, self.N))
            ab[1, 1:-1] = -(ce[1:] + ce[:-1]) - qdx[1:-1] * (p + n)[1:-1] / vt
            ab[0, 2:] = ce[1:]
            ab[2, :-2] = ce[:-1]
            ab[1, 0] = ab[1, -1] = 1.0
            dpsi = solve_banded((1, 1), ab, -res, check_finite=False)
            dpsi = np.sign(dpsi) * 2 * vt * np.log1p(np.abs(dpsi) / (2 * vt))
            psi += dpsi
            if np.max(np.abs(dpsi)) < tol:
                u = np.zeros(3 * self.N)
                u[0::3] = psi
                return u
        raise DivergenceError("equilibrium Poisson solve did not converge")
