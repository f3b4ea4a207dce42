"""Scalar-spherical-harmonics reference solution for the peak scalp potential.

The potential on the dipole axis at the scalp surface is

    V = p_r / (4 pi r_scalp^2) * sum_{l>=1} A4(l) / sigma_4

with the air conductivity sigma_4 cancelled analytically from A4, so an
exactly insulating exterior is handled without a 0/0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConductivityError, DomainError, TruncationError
from .geometry import DipoleSource, GeometryRatios, HeadGeometry, ratios
from .tissue import TissueSet

_EPS = np.finfo(float).eps
_BLOCK = 128


@dataclass(frozen=True)
class SSHConfig:
    rel_tol: float = 1e-12
    l_max: int = 2000

    def __post_init__(self):
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1")


@dataclass(frozen=True)
class SeriesResult:
    """Value of the truncated series plus convergence bookkeeping."""

    value: complex
    terms_used: int
    nonzero_terms: int
    residual: float
    converged: bool


def _check_layers(sigma_c) -> tuple[complex, complex, complex, complex]:
    sc = tuple(complex(s) for s in sigma_c)
    if len(sc) != 4:
        raise ValueError("need four layer conductivities (brain, skull, scalp, air)")
    for i, s in enumerate(sc[:3], 1):
        if s == 0:
            raise DegenerateConductivityError(f"layer {i} has zero complex conductivity")
    return sc


def _coefficients(ls: np.ndarray, sc, gr: GeometryRatios) -> np.ndarray:
    s1, s2, s3, s4 = sc
    ls = ls.astype(float)
    lp = ls + 1.0

    def tilde(a, b):
        return lp * a + ls * b

    x1 = tilde(s2, s1) * (s3 - s2) * (s4 - s3)
    x2 = (s2 - s1) * tilde(s2, s3) * (s4 - s3)
    x3 = (s2 - s1) * (s3 - s2) * tilde(s4, s3)
    x123 = tilde(s2, s1) * tilde(s3, s2) * tilde(s4, s3)
    mixed = gr.psi_23 * x1 + gr.psi_13 * x2 + gr.psi_12 * x3
    denom = ls * lp * mixed + x123
    scale = ls * lp * (np.abs(gr.psi_23 * x1) + np.abs(gr.psi_13 * x2) + np.abs(gr.psi_12 * x3)) + np.abs(x123)
    bad = ~(np.abs(denom) > 1e3 * _EPS * scale)
    if np.any(bad):
        l_bad = int(ls[np.argmax(bad)])
        raise DegenerateConductivityError(
            f"series denominator vanishes at l={l_bad} for conductivities {sc}"
        )
    num = ls * (2.0 * ls + 1.0) ** 3 * s2 * s3 * np.power(gr.eta, ls - 1.0)
    return num / denom


def coefficient_over_sigma4(l: int, sigma_c, gr: GeometryRatios) -> complex:
    """A4(l, omega) / sigma_4 for one harmonic degree."""
    if l < 1:
        raise DomainError("harmonic degree must be >= 1")
    sc = _check_layers(sigma_c)
    return complex(_coefficients(np.array([l]), sc, gr)[0])


def series_sum(sigma_c, gr: GeometryRatios, cfg: SSHConfig = SSHConfig(),
               raise_on_truncation: bool = True) -> SeriesResult:
    """Sum A4/sigma_4 over l until three consecutive terms are below tolerance."""
    sc = _check_layers(sigma_c)
    total = 0j
    nonzero = 0
    small_run = 0
    prev_abs = None
    last_abs = None
    l0 = 1
    while l0 <= cfg.l_max:
        ls = np.arange(l0, min(l0 + _BLOCK, cfg.l_max + 1))
        terms = _coefficients(ls, sc, gr)
        partial = total + np.cumsum(terms)
        mags = np.abs(terms)
        below = mags <= cfg.rel_tol * np.abs(partial)
        for k in range(len(ls)):
            small_run = small_run + 1 if below[k] else 0
            if small_run >= 3:
                nonzero += int(np.count_nonzero(terms[: k + 1]))
                value = complex(partial[k])
                res = _tail(mags[k], mags[k - 1] if k else last_abs)
                return SeriesResult(value, int(ls[k]), nonzero, res, True)
        nonzero += int(np.count_nonzero(terms))
        total = complex(partial[-1])
        prev_abs = float(mags[-2]) if len(mags) > 1 else last_abs
        last_abs = float(mags[-1])
        l0 = int(ls[-1]) + 1
    res = _tail(last_abs or 0.0, prev_abs)
    converged = res <= cfg.rel_tol * abs(total)
    if not converged and raise_on_truncation:
        raise TruncationError(
            f"series not converged at l_max={cfg.l_max} (residual {res:.3e}, sum {abs(total):.3e})",
            partial_sum=total, terms_used=cfg.l_max, residual=res,
        )
    return SeriesResult(total, cfg.l_max, nonzero, res, converged)


def _tail(last: float, prev: float | None) -> float:
    """Geometric estimate of the neglected remainder after the last term."""
    if last == 0:
        return 0.0
    if not prev:
        return math.inf
    q = last / prev
    return float(last * q / (1.0 - q)) if q < 1 else math.inf


def scalp_potential_detailed(geom: HeadGeometry, dip: DipoleSource, tissues: TissueSet, f: float,
                             cfg: SSHConfig = SSHConfig(), raise_on_truncation: bool = True
                             ) -> SeriesResult:
    """Peak scalp potential (V) with series metadata."""
    if not f > 0:
        raise DomainError(f"frequency must be > 0, got {f!r}")
    gr = ratios(geom, dip)
    sc = tissues.admittivities(float(f))
    if dip.p_r == 0:
        return SeriesResult(0j, 0, 0, 0.0, True)
    try:
        res = series_sum(sc, gr, cfg, raise_on_truncation)
    except TruncationError as exc:
        k = dip.p_r / (4.0 * math.pi * geom.r_scalp ** 2)
        raise TruncationError(str(exc), exc.partial_sum * k, exc.terms_used, exc.residual * k) from None
    k = dip.p_r / (4.0 * math.pi * geom.r_scalp ** 2)
    return SeriesResult(res.value * k, res.terms_used, res.nonzero_terms, res.residual * k, res.converged)


def scalp_potential(geom: HeadGeometry, dip: DipoleSource, tissues: TissueSet, f: float,
                    cfg: SSHConfig = SSHConfig()) -> complex:
    return scalp_potential_detailed(geom, dip, tissues, f, cfg).value


def infinite_medium_axial(geom: HeadGeometry, dip: DipoleSource, sigma: float) -> float:
    """Potential of a radial dipole in unbounded homogeneous medium, on its axis at r_scalp."""
    return dip.p_r / (4.0 * math.pi * sigma * (geom.r_scalp - dip.r_dip) ** 2)


def homogeneous_diagnostic(geom: HeadGeometry, dip: DipoleSource, sigma: float, etas,
                           cfg: SSHConfig = SSHConfig(), f: float = 10.0) -> list[dict]:
    """Compare the series with all four media equal against the unbounded-medium value.

    For eta > 0 the two differ: the series as implemented reduces to
    p/(4 pi sigma r3^2) * sum l*eta^(l-1) = p/(4 pi sigma r3^2 (1-eta)^2),
    whereas the unbounded medium gives p/(4 pi sigma (r3 - r_dip)^2).
    """
    tissues = TissueSet.homogeneous(sigma)
    rows = []
    for eta in etas:
        d = dip.at_eta(eta, geom)
        v = scalp_potential(geom, d, tissues, f, cfg).real
        ref = infinite_medium_axial(geom, d, sigma)
        rows.append({"eta": float(eta), "v_series": v, "v_infinite_medium": ref,
                     "ratio": v / ref if ref else math.nan})
    return rows
