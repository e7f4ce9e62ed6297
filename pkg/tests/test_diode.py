import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import lambertw

from cellopt.diode import (
    CellMetrics, DiodeParams, NoOpenCircuitError, ReconstructionError, characteristic_curves,
    curve_rmse, djdv, extract_metrics, max_power_point, open_circuit_voltage, read_curve_csv,
    reconstruct_parameters, residual_vector, solve_current, write_curve_csv, Knowns,
)


def lambert_current(p: DiodeParams, v):
    """Closed-form current of the single-diode model via the Lambert W function."""
    rs, g, nvt = p.rs_v, p.g_sh, p.nvt
    a = 1.0 + rs * g
    arg = rs * p.j_0 / (nvt * a) * np.exp((rs * (p.j_ph + p.j_0) + v) / (nvt * a))
    return (p.j_ph + p.j_0 - v * g) / a - nvt / rs * np.real(lambertw(arg))


diodes = st.builds(
    DiodeParams,
    j_ph=st.floats(10, 30), j_0=st.floats(1e-13, 1e-7), n=st.floats(1, 2),
    r_s=st.floats(0.1, 5), r_sh=st.floats(300, 3e4),
)


@settings(max_examples=50, deadline=None)
@given(diodes)
def test_current_matches_lambert_w(p):
    v = np.linspace(0, 0.9, 25)
    np.testing.assert_allclose(solve_current(p, v), lambert_current(p, v), atol=1e-9, rtol=1e-9)
    assert solve_current(p, 0.3) == pytest.approx(float(lambert_current(p, 0.3)), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(diodes)
def test_current_monotone_decreasing(p):
    v = np.linspace(-0.2, 1.2, 60)
    assert np.all(np.diff(solve_current(p, v)) < 0)


def test_ideal_diode_open_circuit_closed_form():
    p = DiodeParams(20.0, 1e-10, 1.3, r_s=0.0, r_sh=np.inf)
    assert open_circuit_voltage(p) == pytest.approx(p.nvt * np.log1p(20.0 / 1e-10), rel=1e-12)


def test_slope_matches_finite_difference():
    p = DiodeParams(22.0, 1e-9, 1.5, 2.0, 800.0)
    v, h = 0.6, 1e-6
    fd = (solve_current(p, v + h) - solve_current(p, v - h)) / (2 * h)
    assert djdv(p, v, solve_current(p, v)) == pytest.approx(fd, rel=1e-6)


def test_mpp_is_dense_grid_maximum():
    p = DiodeParams(20.0, 1e-10, 1.4, 1.5, 2000.0)
    voc = open_circuit_voltage(p)
    vm, jm, pm = max_power_point(p, voc)
    v = np.linspace(0, voc, 200001)
    assert pm >= np.max(v * solve_current(p, v)) - 1e-9
    assert pm == pytest.approx(vm * jm)


def test_metrics_consistency():
    m = extract_metrics(DiodeParams(20.0, 1e-10, 1.4, 1.5, 2000.0))
    assert m.ff == pytest.approx(100 * m.p_m / (m.j_sc * m.v_oc))
    assert m.eta == pytest.approx(m.p_m)  # 100 mW/cm^2 input


def test_no_open_circuit():
    with pytest.raises(NoOpenCircuitError):
        open_circuit_voltage(DiodeParams(0.0, 1e-10, 1.2))


def test_parameter_validation():
    with pytest.raises(ValueError):
        DiodeParams(20.0, -1.0, 1.2)
    with pytest.raises(ValueError):
        DiodeParams(20.0, 1e-10, 0.3)
    with pytest.raises(ValueError):
        CellMetrics(20.0, 1.0, 120.0, 1.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(diodes)
def test_reconstruction_roundtrip(p):
    m = extract_metrics(p)
    r = reconstruct_parameters(m, p.r_s, p.r_sh)
    assert r.iterations <= 50
    assert r.params.j_ph == pytest.approx(p.j_ph, rel=1e-5)
    assert r.params.j_0 == pytest.approx(p.j_0, rel=1e-5)
    assert r.params.n == pytest.approx(p.n, rel=1e-5)


def test_printed_open_circuit_form_same_root():
    p = DiodeParams(20.0, 1e-10, 1.4, 1.5, 2000.0)
    m = extract_metrics(p)
    a = reconstruct_parameters(m, p.r_s, p.r_sh)
    b = reconstruct_parameters(m, p.r_s, p.r_sh, voc_form="printed")
    assert b.params.n == pytest.approx(a.params.n, rel=1e-8)
    k = Knowns(m.j_sc, m.v_oc, m.p_m, p.r_s, p.r_sh)
    u = [a.params.j_ph, a.params.j_0, a.params.n, a.v_m]
    assert np.max(np.abs(residual_vector(u, k, "printed"))) < 1e-6


def test_infinite_shunt_rejects_printed_form():
    k = Knowns(20.0, 1.0, 15.0, 1.0, np.inf)
    with pytest.raises(ValueError):
        residual_vector([20.0, 1e-10, 1.3, 0.85], k, "printed")


def test_unreachable_fill_factor_fails():
    with pytest.raises(ReconstructionError):
        reconstruct_parameters((20.0, 1.0, 99.0))


def test_curves_and_csv_roundtrip(tmp_path):
    p = DiodeParams(20.0, 1e-10, 1.4)
    c = characteristic_curves(p, 1.0, 50)
    assert c.p[c.mpp_index] == c.p.max()
    write_curve_csv(tmp_path / "c.csv", c.v, c.j)
    v, j, pw = read_curve_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(v, c.v)
    np.testing.assert_array_equal(j, c.j)
    assert curve_rmse(p, p, 1.0) == (0.0, 0.0)
