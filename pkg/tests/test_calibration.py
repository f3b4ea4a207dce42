from __future__ import annotations

import json
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumpedhead.calibration import (ALPHA_MAX, CalibrationConfig, FittedModel, PolyFit, calibrate_reference,
                                    eval_params, log_frequency_grid, nominal_s_brain, polyfit,
                                    relative_objective, ssh_reference)
from lumpedhead.circuit import CircuitParams, build_netlist, node_voltages
from lumpedhead.errors import CalibrationError, ExtrapolationError, ExtrapolationWarning, FitError
from lumpedhead.geometry import DipoleSource, standard_geometry

FAST = CalibrationConfig(freqs=tuple(log_frequency_grid(10, 5e4, 9)), restarts=1)


# -------------------------------------------------------------------- polyfit


def test_log_grid():
    f = log_frequency_grid()
    assert len(f) == 61 and f[0] == 10.0 and f[-1] == 50e3
    assert np.allclose(np.diff(np.log10(f)), np.log10(5e3) / 60, rtol=1e-12)


@pytest.mark.parametrize("degree", [1, 2, 6])
def test_polyfit_exact_recovery(degree):
    rng = np.random.default_rng(degree)
    c = rng.normal(size=degree + 1)
    x = np.linspace(0, 0.965, 25)
    fit = polyfit(x, np.polynomial.polynomial.polyval(x, c), degree)
    np.testing.assert_allclose(fit.coeffs, c, atol=1e-10)
    assert fit.rmse < 1e-12
    assert fit.domain == (0.0, 0.965)


def test_polyfit_residuals_orthogonal_to_basis():
    rng = np.random.default_rng(3)
    x = np.linspace(0.845, 0.875, 25)
    y = rng.normal(size=25)
    fit = polyfit(x, y, 2)
    r = y - fit(x)
    assert abs(r.mean()) < 1e-12
    V = np.vander(x, 3, increasing=True)
    # raw powers on a narrow interval are ill-conditioned; allow rounding at that scale
    tol = 1e2 * np.finfo(float).eps * np.linalg.cond(V) * np.linalg.norm(y)
    np.testing.assert_allclose(V.T @ r, 0, atol=tol)
    assert fit.rmse == pytest.approx(np.sqrt(np.mean(r ** 2)), rel=1e-12)


def test_polyfit_through_origin():
    x = np.linspace(0, 1, 11)
    fit = polyfit(x, 2 * x + 3 * x ** 3 + 1.0, 3, through_origin=True)
    assert fit.coeffs[0] == 0.0 and fit(0.0) == 0.0
    exact = polyfit(x, 2 * x - x ** 2, 2, through_origin=True)
    np.testing.assert_allclose(exact.coeffs, [0, 2, -1], atol=1e-12)


def test_polyfit_rank_deficient():
    with pytest.raises(FitError):
        polyfit([0.1, 0.2], [1.0, 2.0], 3)
    with pytest.raises(FitError):
        polyfit([0.5] * 5, [1.0] * 5, 1)


def test_polyfit_serialisation():
    fit = polyfit([0, 1, 2, 3], [1, 2, 5, 10], 2)
    back = PolyFit.from_dict(json.loads(json.dumps(fit.to_dict())))
    assert back == fit


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=4))
def test_polyfit_recovers_any_low_degree(coeffs):
    x = np.linspace(-1, 1, 12)
    y = np.polynomial.polynomial.polyval(x, coeffs)
    fit = polyfit(x, y, len(coeffs) - 1)
    np.testing.assert_allclose(fit(x), y, atol=1e-10)


# ------------------------------------------------------------------ objective


def test_relative_objective_permutation_invariant():
    rng = np.random.default_rng(0)
    a = rng.normal(size=20) + 1j * rng.normal(size=20)
    b = rng.normal(size=20) + 1j * rng.normal(size=20)
    p = rng.permutation(20)
    assert relative_objective(a[p], b[p]) == pytest.approx(relative_objective(a, b), rel=1e-14)
    assert relative_objective(b, b) == 0.0


def test_nominal_s_brain():
    g = standard_geometry()
    assert nominal_s_brain(g, DipoleSource()) == pytest.approx((1 / 1e-3 - 1 / g.r_brain) / (4 * np.pi))


# ---------------------------------------------------------------- calibration


def test_self_consistency_fixed_point(baseline):
    """A circuit-generated oracle is reproduced and, anchored at the truth, the truth is returned."""
    g = standard_geometry()
    truth = CircuitParams(60.0, 0.8, 1.3, 0.9)
    oracle = node_voltages(build_netlist(g, DipoleSource(), baseline, truth), FAST.freqs)
    res = calibrate_reference(g, baseline, FAST, oracle=oracle, anchor=truth)
    assert res.objective < 1e-12
    for k in ("s_brain", "gamma_brain", "gamma_skull", "gamma_scalp"):
        assert getattr(res.params, k) == pytest.approx(getattr(truth, k), rel=1e-4)


def test_perturbed_reference_is_tracked(baseline):
    g = standard_geometry()
    base = calibrate_reference(g, baseline, FAST)
    oracle = 1.01 * ssh_reference(g, DipoleSource(), baseline, FAST.freqs)
    bumped = calibrate_reference(g, baseline, FAST, oracle=oracle)
    assert bumped.objective < 1e-8
    v0 = node_voltages(build_netlist(g, DipoleSource(), baseline, base.params), [10.0])[0]
    v1 = node_voltages(build_netlist(g, DipoleSource(), baseline, bumped.params), [10.0])[0]
    assert abs(v1 / v0) == pytest.approx(1.01, rel=1e-4)


def test_frequency_order_does_not_matter(baseline):
    g = standard_geometry()
    a = calibrate_reference(g, baseline, FAST)
    b = calibrate_reference(g, baseline, replace(FAST, freqs=tuple(reversed(FAST.freqs))))
    for k in ("s_brain", "gamma_brain", "gamma_skull", "gamma_scalp"):
        assert getattr(a.params, k) == pytest.approx(getattr(b.params, k), rel=1e-5)


def test_calibration_is_deterministic(baseline):
    g = standard_geometry()
    assert calibrate_reference(g, baseline, FAST) == calibrate_reference(g, baseline, FAST)


def test_zero_reference_rejected(baseline):
    with pytest.raises(CalibrationError):
        calibrate_reference(standard_geometry(), baseline, replace(FAST, dipole=DipoleSource(p_r=0.0)))


# -------------------------------------------------------------- fitted model


def test_reference_fidelity(model, geom, baseline):
    ref = model.reference
    assert ref.converged
    freqs = np.asarray(ref.freq_grid)
    v_ssh = ssh_reference(geom, DipoleSource(), baseline, freqs)
    v_c = node_voltages(build_netlist(geom, DipoleSource(), baseline, ref.params), freqs)
    assert np.max(np.abs(v_c / v_ssh - 1)) < 1e-3
    p = ref.params
    assert min(p.s_brain, p.gamma_brain, p.gamma_skull, p.gamma_scalp) > 0


def test_alpha_samples(model):
    s = model.alpha_sweep
    a = s.ys("alpha")
    assert s.xs()[0] == 0.0 and a[0] == 0.0
    assert np.all(np.diff(a) >= 0)
    assert np.all((a >= 0) & (a <= ALPHA_MAX))
    assert model.alpha_fit(0.0) == 0.0


def test_alpha_saturates_at_high_eccentricity(model):
    """The scalp gain of the circuit is capped at (1 + alpha) < 2, the reference keeps growing."""
    s = model.alpha_sweep
    high = [smp for smp in s.samples if smp.x >= 0.5]
    assert high and all(smp.at_bound and smp.values["alpha"] == ALPHA_MAX for smp in high)


def test_gamma_sweeps_positive(model):
    for sw in (model.psi13_sweep, model.psi23_sweep):
        for key in sw.fits:
            assert np.all(sw.ys(key) > 0)
        assert max(smp.objective for smp in sw.samples) < 1e-6


def test_model_json_round_trip(model):
    text = model.to_json()
    back = FittedModel.from_json(text)
    assert back.to_json() == text
    doc = json.loads(text)
    assert doc["schema_version"] == 1
    assert set(doc["fits"]) == {"alpha_vs_eta", "gamma_brain_vs_psi13", "gamma_skull_vs_psi13",
                                "gamma_scalp_vs_psi23", "gamma_skull_vs_psi23"}
    assert len(doc["tissue_baseline_sha256"]) == 64 and len(doc["freq_grid"]) == 61


def test_model_schema_check(model):
    doc = model.to_dict()
    doc["schema_version"] = 99
    with pytest.raises(FitError):
        FittedModel.from_dict(doc)


def test_eval_params_at_reference(model, geom):
    p = eval_params(model, geom, DipoleSource())
    ref = model.reference.params
    assert p.alpha == 0.0 and p.s_brain == ref.s_brain and p.r_scalp_ref == geom.r_scalp
    for k in ("gamma_brain", "gamma_skull", "gamma_scalp"):
        assert getattr(p, k) == pytest.approx(getattr(ref, k), rel=0.05)


def test_eval_params_domain(model, geom):
    with pytest.raises(ExtrapolationError):
        eval_params(model, geom.with_psi13(0.70), DipoleSource())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(ExtrapolationWarning):
            eval_params(model, geom, DipoleSource().at_eta(0.966, geom))
