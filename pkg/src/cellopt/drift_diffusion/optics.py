"""Photon flux and Beer-Lambert generation."""

from __future__ import annotations

import numpy as np
from scipy import constants

T_SUN = 5778.0
_STEFAN_INTEGRAL = np.pi ** 4 / 15.0


def photon_flux_above_gap(e_g: float, power: float = 100.0, t_sun: float = T_SUN,
                          terms: int = 60) -> float:
    """Photon flux with energy above ``e_g`` [cm^-2 s^-1].

    The spectrum is a black body at ``t_sun`` rescaled to carry ``power``
    mW/cm^2; the tail integral of x^2/(e^x - 1) is summed in closed form.
    """
    kt = constants.k * t_sun
    xg = e_g * constants.e / kt
    k = np.arange(1, terms + 1, dtype=float)
    tail = np.sum(np.exp(-k * xg) * (xg ** 2 / k + 2 * xg / k ** 2 + 2 / k ** 3))
    return power * 1e-3 / kt * tail / _STEFAN_INTEGRAL


def cell_generation(edges: np.ndarray, flux: float, alpha: float) -> np.ndarray:
    """Control-volume averaged Beer-Lambert generation [cm^-3 s^-1].

    ``edges`` are control-volume boundaries measured from the illuminated
    absorber surface [cm]; negative positions (outside the absorber) are
    clipped, so the integral over all volumes equals the absorbed flux.
    """
    e = np.clip(edges, 0.0, None)
    absorbed = flux * (np.exp(-alpha * e[:-1]) - np.exp(-alpha * e[1:]))
    width = np.diff(edges)
    return np.divide(absorbed, width, out=np.zeros_like(width), where=width > 0)
