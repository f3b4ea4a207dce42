from __future__ import annotations

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumpedhead.calibration import log_frequency_grid
from lumpedhead.errors import DegenerateConductivityError, DomainError, TruncationError
from lumpedhead.geometry import DipoleSource, ratios, standard_geometry
from lumpedhead.ssh import (SSHConfig, coefficient_over_sigma4, homogeneous_diagnostic, infinite_medium_axial,
                            scalp_potential, scalp_potential_detailed, series_sum)
from lumpedhead.tissue import TissueSet, TissueSpectrum

P = 15e-9
R3 = 0.092
# p / (4 pi 0.33 r3^2), evaluated independently
V_HOMOG = 4.27357962847717e-07


def loop_oracle(sc, gr, l_max=4000):
    """Term-by-term evaluation of the printed coefficient, no vectorisation, no early stop."""
    s1, s2, s3, s4 = sc
    total = 0j
    for l in range(1, l_max + 1):
        t = lambda a, b: (l + 1) * a + l * b
        x1 = t(s2, s1) * (s3 - s2) * (s4 - s3)
        x2 = (s2 - s1) * t(s2, s3) * (s4 - s3)
        x3 = (s2 - s1) * (s3 - s2) * t(s4, s3)
        x123 = t(s2, s1) * t(s3, s2) * t(s4, s3)
        d = l * (l + 1) * (gr.psi_23 * x1 + gr.psi_13 * x2 + gr.psi_12 * x3) + x123
        total += l * (2 * l + 1) ** 3 * s2 * s3 * gr.eta ** (l - 1) / d
    return total


def test_homogeneous_centred_oracle():
    g = standard_geometry()
    r = scalp_potential_detailed(g, DipoleSource(), TissueSet.homogeneous(0.33), 10.0)
    assert r.value.real == pytest.approx(V_HOMOG, rel=1e-12)
    assert r.value.imag == 0.0
    assert r.nonzero_terms == 1
    assert V_HOMOG == pytest.approx(P / (4 * math.pi * 0.33 * R3 ** 2), rel=1e-14)


def test_homogeneous_coefficient_closed_form():
    gr = ratios(standard_geometry(), DipoleSource(r_dip=0.03))
    sc = (0.33,) * 4
    for l in (1, 2, 5, 17):
        assert coefficient_over_sigma4(l, sc, gr) == pytest.approx(l * gr.eta ** (l - 1) / 0.33, rel=1e-13)
    # l = 1 is eta independent: 1 / 0.33
    assert coefficient_over_sigma4(1, sc, gr).real == pytest.approx(3.0303030303030303, rel=1e-14)


@pytest.mark.parametrize("eta", [0.233, 0.465, 0.814])
def test_homogeneous_eccentric_closed_form(eta):
    g = standard_geometry()
    d = DipoleSource().at_eta(eta, g)
    v = scalp_potential(g, d, TissueSet.homogeneous(0.33), 10.0)
    assert v.real == pytest.approx(V_HOMOG / (1 - eta) ** 2, rel=1e-10)


def test_three_shell_against_loop_oracle(baseline, dispersive):
    g = standard_geometry()
    for tissues, f in ((baseline, 10.0), (dispersive, 1e3), (dispersive, 5e4)):
        for eta in (0.0, 0.465, 0.93):
            d = DipoleSource().at_eta(eta, g)
            gr = ratios(g, d)
            sc = tuple(complex(x) for x in tissues.admittivities(f))
            expect = loop_oracle(sc, gr) * P / (4 * math.pi * R3 ** 2)
            got = scalp_potential(g, d, tissues, f)
            assert abs(got - expect) <= 1e-10 * abs(expect)


def test_linear_in_moment(baseline):
    g = standard_geometry()
    d1 = DipoleSource(r_dip=0.03, p_r=1e-9)
    d2 = DipoleSource(r_dip=0.03, p_r=7e-9)
    v1, v2 = (scalp_potential(g, d, baseline, 100.0) for d in (d1, d2))
    assert v2 == pytest.approx(7 * v1, rel=1e-13)
    assert scalp_potential(g, DipoleSource(p_r=0.0), baseline, 100.0) == 0


def test_conjugate_symmetry(dispersive):
    gr = ratios(standard_geometry(), DipoleSource(r_dip=0.05))
    sc = dispersive.admittivities(2e3)
    a = series_sum(sc, gr).value
    b = series_sum(np.conj(sc), gr).value
    assert b == pytest.approx(np.conj(a), rel=1e-13)


@pytest.mark.parametrize("floor", [1e-12, 1e-10])
def test_air_floor_insensitive(dispersive, floor):
    g = standard_geometry()
    d = DipoleSource().at_eta(0.814, g)
    for f in log_frequency_grid()[::10]:
        v0 = scalp_potential(g, d, dispersive, f)
        v1 = scalp_potential(g, d, dispersive.with_air_sigma(floor), f)
        assert abs(v1 - v0) <= 1e-6 * abs(v0)


def test_lmax_independence_once_converged(baseline):
    g = standard_geometry()
    d = DipoleSource().at_eta(0.93, g)
    a = scalp_potential_detailed(g, d, baseline, 10.0, SSHConfig(l_max=1000))
    b = scalp_potential_detailed(g, d, baseline, 10.0, SSHConfig(l_max=2000))
    assert a.value == b.value and a.terms_used == b.terms_used < 1000


def test_residual_shrinks_with_tolerance(baseline):
    g = standard_geometry()
    d = DipoleSource().at_eta(0.814, g)
    loose = scalp_potential_detailed(g, d, baseline, 10.0, SSHConfig(rel_tol=1e-6))
    tight = scalp_potential_detailed(g, d, baseline, 10.0, SSHConfig(rel_tol=1e-12))
    assert tight.residual < loose.residual
    assert tight.terms_used > loose.terms_used
    assert abs(loose.value - tight.value) <= 1e-5 * abs(tight.value)


def test_truncation_reports_partial_sum(baseline):
    g = standard_geometry()
    d = DipoleSource().at_eta(0.966, g)
    with pytest.raises(TruncationError) as ei:
        scalp_potential(g, d, baseline, 10.0, SSHConfig(l_max=50))
    e = ei.value
    assert e.terms_used == 50 and e.residual > 0
    full = scalp_potential(g, d, baseline, 10.0)
    assert 0 < abs(e.partial_sum) < abs(full)
    r = scalp_potential_detailed(g, d, baseline, 10.0, SSHConfig(l_max=50), raise_on_truncation=False)
    assert not r.converged and r.value == pytest.approx(e.partial_sum, rel=1e-15)


def test_degenerate_conductivity():
    gr = ratios(standard_geometry(), DipoleSource())
    with pytest.raises(DegenerateConductivityError):
        series_sum((0.33, 0.0, 0.33, 0.0), gr)


def test_bad_frequency(baseline):
    with pytest.raises(DomainError):
        scalp_potential(standard_geometry(), DipoleSource(), baseline, 0.0)
    with pytest.raises(DomainError):
        coefficient_over_sigma4(0, (1, 1, 1, 1), ratios(standard_geometry(), DipoleSource()))


def test_homogeneous_diagnostic_reports_discrepancy():
    g = standard_geometry()
    rows = homogeneous_diagnostic(g, DipoleSource(), 0.33, [0.0, 0.5])
    assert rows[0]["ratio"] == pytest.approx(1.0, rel=1e-12)
    # series gives 1/(1-eta)^2 relative to centred; unbounded medium gives (r3/(r3 - r_dip))^2
    r_dip = 0.5 * g.r_brain
    expected = (g.r_scalp - r_dip) ** 2 / (g.r_scalp ** 2 * 0.25)
    assert rows[1]["ratio"] == pytest.approx(expected, rel=1e-10)
    assert infinite_medium_axial(g, DipoleSource(), 0.33) == pytest.approx(V_HOMOG, rel=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(1e-3, 1.0), st.floats(1e-4, 0.05), st.floats(1e-3, 1.0))
def test_positive_for_ohmic_layers(eta, s1, s2, s3):
    """With real conductivities every term is positive, so the potential is real and positive."""
    g = standard_geometry()
    tissues = TissueSet(*(TissueSpectrum.constant(n, s) for n, s in
                          (("brain", s1), ("skull", s2), ("scalp", s3), ("air", 0.0))))
    v = scalp_potential(g, DipoleSource().at_eta(eta, g), tissues, 10.0)
    assert v.real > 0 and v.imag == 0


def test_centred_runtime():
    g, d, t = standard_geometry(), DipoleSource(), TissueSet.homogeneous(0.33)
    scalp_potential(g, d, t, 10.0)
    best = min(_timed(lambda: scalp_potential(g, d, t, 10.0)) for _ in range(20))
    assert best < 1e-3


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0
