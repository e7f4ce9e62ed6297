"""Desk-scale 1-D drift-diffusion simulator for the ETL/absorber stack."""

from .device import (
    DeviceStack, LayerSpec, bandgap, build_device, default_absorber, default_device,
    default_etl, electron_affinity, load_device, save_device,
)
from .jv import (
    JVResult, TARGET_JSC, apply_external, calibrate_absorption, curve_metrics,
    intrinsic_sweep, short_circuit_current, simulate_jv, solve_bias_point,
    solve_equilibrium,
)
from .solver import DivergenceError, MeshSpec, MeshState

__all__ = [
    "DeviceStack", "LayerSpec", "bandgap", "build_device", "default_absorber",
    "default_device", "default_etl", "electron_affinity", "load_device", "save_device",
    "JVResult", "TARGET_JSC", "apply_external", "calibrate_absorption", "curve_metrics",
    "intrinsic_sweep", "short_circuit_current", "simulate_jv", "solve_bias_point",
    "solve_equilibrium", "DivergenceError", "MeshSpec", "MeshState",
]
