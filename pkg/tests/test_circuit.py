from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumpedhead.calibration import log_frequency_grid
from lumpedhead.circuit import (GND, NSRC, Branch, CircuitParams, Netlist, build_netlist, geometric_factors,
                                node_voltages, solve_nodal, surface_charge, transfer_impedance)
from lumpedhead.errors import ParameterError, SingularNetworkError, StateError
from lumpedhead.geometry import DipoleSource, standard_geometry
from lumpedhead.tissue import EPS0, TissueSet, TissueSpectrum

PARAMS = CircuitParams(80.0, 1.0, 1.0, 1.2)


def ohm(name, a, b, r):
    return Branch(name, a, b, name, 1.0, TissueSpectrum.constant(name, 1.0 / r, 0.0))


def cap(name, a, b, c):
    return Branch(name, a, b, name, 1.0, TissueSpectrum.constant(name, 0.0, c / EPS0))


def test_structure(baseline):
    net = build_netlist(standard_geometry(), DipoleSource(), baseline, PARAMS)
    assert net.nodes == [GND, NSRC, "N1", "N2", "N3"]
    assert len(net.branches) == 8
    assert len(build_netlist(standard_geometry(), DipoleSource(), baseline, PARAMS, include_air=False).branches) == 7


def test_alpha_split():
    g = geometric_factors(standard_geometry(), CircuitParams(80.0, 1.0, 1.0, 1.0, alpha=0.5))
    assert g["brain_up"] == pytest.approx(2.0 / 80.0, rel=1e-15)
    assert g["brain_down"] == pytest.approx(1.0 / (1.5 * 80.0), rel=1e-15)


def test_radial_factors():
    geom = standard_geometry()
    g = geometric_factors(geom, PARAMS)
    assert g["skull_rad"] == pytest.approx(4 * math.pi / (1 / geom.r_brain - 1 / geom.r_skull), rel=1e-14)
    assert g["scalp_rad"] == pytest.approx(4 * math.pi / (1 / geom.r_skull - 1 / geom.r_scalp), rel=1e-14)
    assert g["air"] == pytest.approx(4 * math.pi * geom.r_scalp, rel=1e-15)
    assert g["skull_tan"] == pytest.approx(PARAMS.gamma_skull * g["skull_rad"])


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_alpha_gain_identity(dispersive, alpha):
    """Only the upward brain branch carries current to the scalp, and its share scales by (1 + alpha)."""
    geom = standard_geometry()
    freqs = log_frequency_grid()
    v0 = node_voltages(build_netlist(geom, DipoleSource(), dispersive, PARAMS), freqs)
    p = CircuitParams(80.0, 1.0, 1.0, 1.2, alpha=alpha)
    va = node_voltages(build_netlist(geom, DipoleSource(), dispersive, p), freqs)
    np.testing.assert_allclose(va, (1 + alpha) * v0, rtol=1e-12)


def test_divider():
    net = Netlist((ohm("R1", "A", GND, 1.0), ohm("R2", "A", GND, 1.0)), "A", 1.0, probe="A")
    assert solve_nodal(net, 10.0).voltages["A"] == pytest.approx(0.5, rel=1e-15)


def test_series_divider():
    net = Netlist((ohm("R1", "A", "B", 3.0), ohm("R2", "B", GND, 1.0)), "A", 2.0, probe="B")
    sol = solve_nodal(net, 10.0)
    assert sol.voltages["A"] == pytest.approx(8.0, rel=1e-15)
    assert sol.voltages["B"] == pytest.approx(2.0, rel=1e-15)


def test_rc_corner():
    f = 1000.0
    c = 1.0 / (2 * math.pi * f)  # omega*R*C = 1 with R = 1
    net = Netlist((ohm("R", "A", GND, 1.0), cap("C", "A", GND, c)), "A", 1.0, probe="A")
    v = solve_nodal(net, f).voltages["A"]
    assert abs(v) == pytest.approx(1 / math.sqrt(2), rel=1e-14)
    assert math.degrees(np.angle(v)) == pytest.approx(-45.0, abs=1e-12)


def _nets(baseline, dispersive):
    geom = standard_geometry()
    for ts in (baseline, dispersive):
        for eta in (0.0, 0.5, 0.95):
            for p in (PARAMS, CircuitParams(30.0, 0.2, 5.0, 0.7, alpha=0.8)):
                yield build_netlist(geom, DipoleSource().at_eta(eta, geom), ts, p)


def test_kcl_residual(baseline, dispersive):
    for net in _nets(baseline, dispersive):
        for f in (10.0, 1e3, 5e4):
            sol = solve_nodal(net, f)
            assert sol.residual < 1e-12
            scale = net.i_dip
            for r in sol.kcl_residuals().values():
                assert abs(r) < 1e-12 * scale


def test_reciprocity(baseline, dispersive):
    for net in _nets(baseline, dispersive):
        for f in (10.0, 5e4):
            for a, b in ((NSRC, "N3"), ("N1", "N3"), (NSRC, "N2")):
                z_ab = transfer_impedance(net, f, a, b)
                z_ba = transfer_impedance(net, f, b, a)
                assert abs(z_ab - z_ba) <= 1e-12 * abs(z_ab)


def test_passivity(dispersive):
    for net in _nets(dispersive, dispersive):
        for f in (10.0, 1e3, 5e4):
            for n in net.unknowns:
                assert transfer_impedance(net, f, n, n).real > 0


def test_low_frequency_limit(baseline):
    geom = standard_geometry()
    with_air = build_netlist(geom, DipoleSource(), baseline, PARAMS)
    without = build_netlist(geom, DipoleSource(), baseline, PARAMS, include_air=False)
    a = node_voltages(with_air, [1e-3])[0]
    b = node_voltages(without, [1e-3])[0]
    assert abs(a - b) <= 1e-12 * abs(b)
    assert b.imag == 0


def test_impedance_scaling(dispersive):
    net = build_netlist(standard_geometry(), DipoleSource(r_dip=0.04), dispersive, PARAMS)
    f = log_frequency_grid()
    np.testing.assert_allclose(node_voltages(net.scaled(3.5), f), 3.5 * node_voltages(net, f), rtol=1e-12)


def test_head_size_scaling(dispersive):
    geom = standard_geometry()
    p = CircuitParams(80.0, 1.0, 1.0, 1.2, r_scalp_ref=geom.r_scalp)
    k = 1.15
    big = geom.scaled(k)
    f = log_frequency_grid()
    v_ref = node_voltages(build_netlist(geom, DipoleSource().at_eta(0.4, geom), dispersive, p), f)
    v_big = node_voltages(build_netlist(big, DipoleSource().at_eta(0.4, big), dispersive, p), f)
    np.testing.assert_allclose(v_big, v_ref / k ** 2, rtol=1e-12)


def test_batched_equals_single(dispersive):
    net = build_netlist(standard_geometry(), DipoleSource(r_dip=0.05), dispersive, PARAMS)
    f = log_frequency_grid()[::7]
    batch = node_voltages(net, f)
    for fi, v in zip(f, batch):
        assert solve_nodal(net, fi).voltages["N3"] == pytest.approx(v, rel=1e-14)


def test_zero_moment_gives_zero(baseline):
    net = build_netlist(standard_geometry(), DipoleSource(p_r=0.0), baseline, PARAMS)
    assert np.all(node_voltages(net, [10.0, 100.0]) == 0)


def test_isolated_node():
    dead = TissueSpectrum.constant("dead", 0.0, 0.0)
    net = Netlist((ohm("R", "A", GND, 1.0), Branch("X", "B", GND, "x", 1.0, dead),
                   ohm("R2", "A", "B", 1.0)), "A", 1.0, probe="A")
    sol = solve_nodal(net, 10.0)  # B floats on a single resistor: still solvable
    assert sol.voltages["B"] == pytest.approx(sol.voltages["A"])
    net2 = Netlist((ohm("R", "A", GND, 1.0), Branch("X", "B", GND, "x", 1.0, dead)), "A", 1.0, probe="A")
    with pytest.raises(SingularNetworkError) as ei:
        solve_nodal(net2, 10.0)
    assert ei.value.node == "B"


def test_disconnected_graph_rejected():
    with pytest.raises(ParameterError):
        Netlist((ohm("R", "A", GND, 1.0), ohm("R2", "B", "C", 1.0)), "A", 1.0, probe="B")


@pytest.mark.parametrize("kw", [dict(s_brain=0.0), dict(gamma_brain=-1.0), dict(alpha=1.0), dict(alpha=-0.1),
                                dict(gamma_scalp=float("nan"))])
def test_param_validation(kw):
    base = dict(s_brain=80.0, gamma_brain=1.0, gamma_skull=1.0, gamma_scalp=1.0)
    with pytest.raises(ParameterError):
        CircuitParams(**{**base, **kw})


def test_surface_charge(dispersive, baseline):
    geom = standard_geometry()
    net = build_netlist(geom, DipoleSource(), dispersive, PARAMS)
    f = 1e3
    sol = solve_nodal(net, f)
    q = surface_charge(sol, "N1")
    j = sol.branch_current("skull_rad") / (4 * math.pi * geom.r_brain ** 2)
    sb, eb = (float(x) for x in dispersive.brain.properties(f))
    ss, es = (float(x) for x in dispersive.skull.properties(f))
    w = 2 * math.pi * f
    expect = j * (es * EPS0 / (ss + 1j * w * es * EPS0) - eb * EPS0 / (sb + 1j * w * eb * EPS0))
    assert q == pytest.approx(expect, rel=1e-13)
    sol0 = solve_nodal(build_netlist(geom, DipoleSource(), baseline, PARAMS), f)
    assert surface_charge(sol0, "N2") == 0
    with pytest.raises(StateError):
        surface_charge(None, "N1")
    with pytest.raises(ValueError):
        surface_charge(sol, "N7")


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 500.0), st.floats(0.05, 20.0), st.floats(0.05, 20.0), st.floats(0.05, 20.0),
       st.floats(0.0, 0.99), st.floats(1.0, 5e4))
def test_scalp_voltage_bounded_by_source(s, gb, gs, gc, alpha, f):
    """A passive ladder cannot raise the scalp node above the driven node."""
    net = build_netlist(standard_geometry(), DipoleSource(), TissueSet(
        TissueSpectrum.constant("brain", 0.33, 1e5), TissueSpectrum.constant("skull", 0.0066, 1e3),
        TissueSpectrum.constant("scalp", 0.33, 1e4), TissueSpectrum.constant("air", 0.0, 1.0)),
        CircuitParams(s, gb, gs, gc, alpha))
    sol = solve_nodal(net, f)
    assert abs(sol.voltages["N3"]) <= abs(sol.voltages[NSRC]) * (1 + 1e-12)
    assert sol.residual < 1e-12
