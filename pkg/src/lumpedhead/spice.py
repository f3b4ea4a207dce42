"""SPICE netlist export of the lumped head network, and a reader for that subset."""
from __future__ import annotations

import re

from .circuit import GND, Branch, Netlist
from .errors import ExportError, TissueFormatError
from .tissue import EPS0, TissueSpectrum

_SUFFIX = {"t": 1e12, "g": 1e9, "meg": 1e6, "k": 1e3, "m": 1e-3, "u": 1e-6, "n": 1e-9,
           "p": 1e-12, "f": 1e-15}
_NUM = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)([a-zA-Z]*)$")


def _fmt(x: float) -> str:
    return f"{x:.17e}"


def export_spice_netlist(net: Netlist, f_ref: float | None = None) -> str:
    """Parallel R/C per branch plus an AC current source named ``I_DIP``.

    Dispersive media need ``f_ref``: element values are frozen at that
    frequency. Branches with zero conductance emit only their capacitor and
    zero-permittivity branches only their resistor.
    """
    if net.is_dispersive and f_ref is None:
        raise ExportError("tissues are dispersive: a freezing frequency (f_ref) is required")
    if f_ref is not None and not f_ref > 0:
        raise ExportError("f_ref must be > 0")
    lines = ["* lumped three-shell head model"]
    meta = net.meta
    if "geometry" in meta:
        g = meta["geometry"]
        lines.append(f"* geometry: r_brain={g.r_brain!r} m r_skull={g.r_skull!r} m r_scalp={g.r_scalp!r} m")
    if "dipole" in meta:
        d = meta["dipole"]
        lines.append(f"* dipole: r_dip={d.r_dip!r} m p_r={d.p_r!r} A*m d={d.d!r} m")
    if "params" in meta:
        p = meta["params"]
        lines.append("* params: " + " ".join(f"{k}={v!r}" for k, v in p.as_dict().items()))
    lines.append(f"* frozen at: {'none (non-dispersive)' if f_ref is None else repr(float(f_ref)) + ' Hz'}")
    f_eval = f_ref if f_ref is not None else 1.0
    for b in net.branches:
        sigma, eps_rel = (float(x) for x in b.medium.properties(f_eval))
        sigma = max(sigma, b.sigma_floor)
        G = b.factor * sigma
        C = b.factor * eps_rel * EPS0
        tag = b.layer or b.id
        if G > 0:
            lines.append(f"R_{tag} {b.node_a} {b.node_b} {_fmt(1.0 / G)}")
        if C > 0:
            lines.append(f"C_{tag} {b.node_a} {b.node_b} {_fmt(C)}")
    lines.append(f"I_DIP {GND} {net.source_node} DC 0 AC {_fmt(net.i_dip)}")
    if f_ref is not None:
        lines.append(f".AC LIN 1 {_fmt(f_ref)} {_fmt(f_ref)}")
    else:
        lines.append(".AC DEC 20 10 50k")
    lines.append(f".PRINT AC VM({net.probe}) VP({net.probe})")
    lines.append(".END")
    return "\n".join(lines) + "\n"


def parse_value(token: str) -> float:
    m = _NUM.match(token.strip())
    if not m:
        raise TissueFormatError(f"cannot parse SPICE value {token!r}")
    base, suf = float(m.group(1)), m.group(2).lower()
    if not suf:
        return base
    for key in sorted(_SUFFIX, key=len, reverse=True):
        if suf.startswith(key):
            return base * _SUFFIX[key]
    return base  # trailing unit letters such as 'ohm' or 'F'


def parse_spice_netlist(text: str, probe: str = "N3") -> Netlist:
    """Read R, C and one AC current source into a generic :class:`Netlist`.

    Node ``0`` is treated as an alias of ``GND``.
    """
    branches = []
    source = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("*") or line.startswith("."):
            continue
        tok = line.split()
        name = tok[0]
        a, b = ("GND" if t in ("0", "gnd") else t for t in tok[1:3])
        kind = name[0].upper()
        if kind == "R":
            medium = TissueSpectrum.constant(name, 1.0 / parse_value(tok[3]), 0.0)
        elif kind == "C":
            medium = TissueSpectrum.constant(name, 0.0, parse_value(tok[3]) / EPS0)
        elif kind == "I":
            upper = [t.upper() for t in tok]
            mag = parse_value(tok[upper.index("AC") + 1]) if "AC" in upper else parse_value(tok[3])
            if source is not None:
                raise TissueFormatError("more than one current source")
            if a == GND:
                source = (b, mag)
            elif b == GND:
                source = (a, -mag)
            else:
                raise TissueFormatError("floating current sources are not supported")
            continue
        else:
            raise TissueFormatError(f"unsupported element {name!r}")
        branches.append(Branch(name, a, b, name, 1.0, medium))
    if source is None:
        raise TissueFormatError("netlist has no current source")
    return Netlist(tuple(branches), source[0], source[1], probe)
