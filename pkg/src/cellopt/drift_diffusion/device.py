"""Layer stack description for the 1-D device simulator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace

from ..features import FeatureVector

# Band-gap anchors of the tunable absorber: x [%] -> Eg [eV]
EG_ANCHORS = ((60.0, 1.72), (75.0, 1.95))
# Composition at which the absorber's tabulated chi/Eg were measured
CHI_ANCHOR_X = 68.7
CHI_ANCHOR = 3.67


@dataclass(frozen=True)
class LayerSpec:
    """Material parameters of one layer.

    Thickness is in nm, energies in eV, densities in cm^-3, mobilities in
    cm^2/Vs and capture cross sections in cm^2. ``tau_srh`` is optional; when
    left as None the SRH lifetime follows ``1/(sigma * v_th * n_t)``.
    """

    name: str
    thickness: float
    e_g: float
    chi: float
    eps_r: float
    n_c: float
    n_v: float
    mu_n: float
    mu_p: float
    n_a: float
    n_d: float
    n_t: float
    sigma_n: float = 2e-15
    sigma_p: float = 2e-15
    tau_srh: float | None = None

    def __post_init__(self):
        positive = ("thickness", "e_g", "eps_r", "n_c", "n_v", "mu_n", "mu_p",
                    "n_t", "sigma_n", "sigma_p")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ValueError(f"{self.name}: {key} must be > 0")
        if self.n_a < 0 or self.n_d < 0:
            raise ValueError(f"{self.name}: doping must be >= 0")
        if self.tau_srh is not None and not self.tau_srh > 0:
            raise ValueError(f"{self.name}: tau_srh must be > 0")

    def lifetimes(self, v_th: float) -> tuple[float, float]:
        """SRH lifetimes (tau_n, tau_p) in seconds."""
        if self.tau_srh is not None:
            return self.tau_srh, self.tau_srh
        return 1.0 / (self.sigma_n * v_th * self.n_t), 1.0 / (self.sigma_p * v_th * self.n_t)


@dataclass(frozen=True)
class DeviceStack:
    """Ordered layers (ETL first, light enters through it) plus contacts.

    ``r_s`` and ``r_sh`` are the lumped external resistances in Ohm cm^2.
    ``alpha_eff`` is the wavelength-integrated absorption coefficient of the
    absorber [cm^-1]; its default is the value calibrated by
    :func:`cellopt.drift_diffusion.calibrate_absorption`.
    """

    layers: tuple
    phi_front: float = 4.4
    phi_back: float = 4.95
    r_s: float = 1.0
    r_sh: float = 1000.0
    illuminated: bool = True
    power: float = 100.0
    c_aug: float = 1e-26
    b_rad: float = 1e-11
    s_n: float = 1e7
    s_p: float = 1e7
    v_th: float = 2e7
    temperature: float = 300.0
    alpha_eff: float = 9.6576e4
    defect_width: float = 0.1
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 2:
            raise ValueError("a device needs at least two layers")
        if not self.phi_back > self.phi_front:
            raise ValueError("phi_back must exceed phi_front for this architecture")
        if self.r_s < 0 or not self.r_sh > 0:
            raise ValueError("need r_s >= 0 and r_sh > 0")

    @property
    def absorber(self) -> LayerSpec:
        return self.layers[-1]

    @property
    def thickness_nm(self) -> float:
        return sum(layer.thickness for layer in self.layers)

    def with_absorber(self, **changes) -> "DeviceStack":
        layers = list(self.layers)
        layers[-1] = replace(layers[-1], **changes)
        return replace(self, layers=tuple(layers))

    def with_layer(self, index: int, **changes) -> "DeviceStack":
        layers = list(self.layers)
        layers[index] = replace(layers[index], **changes)
        return replace(self, layers=tuple(layers))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [asdict(layer) for layer in self.layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceStack":
        d = dict(d)
        d["layers"] = tuple(LayerSpec(**layer) for layer in d["layers"])
        return cls(**d)


def default_etl(**changes) -> LayerSpec:
    base = LayerSpec(
        name="TiO2", thickness=50.0, e_g=3.2, chi=4.0, eps_r=9.0,
        n_c=2.0e17, n_v=6.0e17, mu_n=100.0, mu_p=25.0,
        n_a=0.0, n_d=1.65e17, n_t=1e15,
    )
    return replace(base, **changes)


def default_absorber(**changes) -> LayerSpec:
    base = LayerSpec(
        name="MAPbSbI3", thickness=290.0, e_g=1.85, chi=3.67, eps_r=6.5,
        n_c=1.66e19, n_v=5.41e19, mu_n=50.0, mu_p=50.0,
        n_a=1e18, n_d=1e18, n_t=1e14,
    )
    return replace(base, **changes)


def default_device(**changes) -> DeviceStack:
    """The validated FTO/TiO2/absorber/MWCNT stack at x = 68.7 %."""
    return replace(DeviceStack(layers=(default_etl(), default_absorber())), **changes)


def bandgap(x_pct: float) -> float:
    """Absorber band gap [eV], linear in composition through the two anchors."""
    (x0, e0), (x1, e1) = EG_ANCHORS
    return e0 + (e1 - e0) * (x_pct - x0) / (x1 - x0)


def electron_affinity(x_pct: float, cb_fraction: float = 0.5) -> float:
    """Absorber electron affinity [eV].

    ``cb_fraction`` of every band-gap change is taken up by the conduction
    band edge (chi decreases); the rest moves the valence band edge.
    """
    return CHI_ANCHOR - cb_fraction * (bandgap(x_pct) - bandgap(CHI_ANCHOR_X))


def build_device(f: FeatureVector, base: DeviceStack | None = None,
                 cb_fraction: float = 0.5) -> DeviceStack:
    """Map fabrication features onto a device stack.

    Parameters
    ----------
    f : FeatureVector
        Composition, absorber defect density, absorber thickness [um] and
        ETL doping.
    base : DeviceStack, optional
        Template; defaults to :func:`default_device`.
    cb_fraction : float
        Share of the band-gap change assigned to the conduction band.

    Returns
    -------
    DeviceStack
        Copy of ``base`` with the absorber and ETL updated. ``metadata``
        records whether ``x_pct`` lies outside the band-gap anchors.
    """
    base = default_device() if base is None else base
    (x0, _), (x1, _) = EG_ANCHORS
    dev = base.with_absorber(
        e_g=bandgap(f.x_pct),
        chi=electron_affinity(f.x_pct, cb_fraction),
        n_t=f.n_abs,
        thickness=f.t_abs * 1000.0,
    ).with_layer(0, n_d=f.n_etl)
    meta = dict(base.metadata)
    meta["features"] = f.to_dict()
    meta["extrapolated"] = not (x0 <= f.x_pct <= x1)
    return replace(dev, metadata=meta)


def save_device(device: DeviceStack, path) -> None:
    with open(path, "w") as fh:
        json.dump(device.to_dict(), fh, indent=2)


def load_device(path) -> DeviceStack:
    with open(path) as fh:
        return DeviceStack.from_dict(json.load(fh))
