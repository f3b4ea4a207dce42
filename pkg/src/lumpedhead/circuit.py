"""Lumped RC network of the layered head and its complex nodal solution.

Topology (node names as used in exported netlists)::

    GND --I_dip--> NSRC
    NSRC -- brain_up   -- N1        NSRC -- brain_down -- GND
    N1   -- skull_rad  -- N2        N1   -- brain_tan  -- GND
    N2   -- scalp_rad  -- N3        N2   -- skull_tan  -- GND
                                    N3   -- scalp_tan  -- GND
                                    N3   -- air        -- GND

Every branch is a conductance in parallel with a capacitance sharing one
geometric factor g (metres): Y(f) = g * (sigma(f) + i 2 pi f eps(f)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, SingularNetworkError, StateError
from .geometry import DipoleSource, HeadGeometry, ratios
from .tissue import EPS0, TissueSet, TissueSpectrum

GND = "GND"
NSRC = "NSRC"
LAYER_NAMES = ("brain_up", "brain_down", "brain_tan", "skull_rad", "skull_tan",
               "scalp_rad", "scalp_tan", "air")


@dataclass(frozen=True)
class CircuitParams:
    """Calibrated circuit coefficients.

    ``r_scalp_ref`` (m), when set, turns on head-size scaling: shape factors
    are computed for the geometry rescaled to that scalp radius and every
    impedance is then multiplied by ``(r_scalp_ref / r_scalp)**2``.
    """

    s_brain: float
    gamma_brain: float
    gamma_skull: float
    gamma_scalp: float
    alpha: float = 0.0
    r_scalp_ref: float | None = None

    def __post_init__(self):
        if not (self.s_brain > 0 and math.isfinite(self.s_brain)):
            raise ParameterError(f"s_brain must be > 0, got {self.s_brain}")
        for name in ("gamma_brain", "gamma_skull", "gamma_scalp"):
            g = getattr(self, name)
            if not (g > 0 and math.isfinite(g)):
                raise ParameterError(f"{name} must be > 0, got {g}")
        if not 0 <= self.alpha < 1:
            raise ParameterError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.r_scalp_ref is not None and not self.r_scalp_ref > 0:
            raise ParameterError("r_scalp_ref must be > 0")

    def as_dict(self) -> dict:
        return {"s_brain": self.s_brain, "gamma_brain": self.gamma_brain,
                "gamma_skull": self.gamma_skull, "gamma_scalp": self.gamma_scalp,
                "alpha": self.alpha, "r_scalp_ref": self.r_scalp_ref}


@dataclass(frozen=True)
class Branch:
    id: str
    node_a: str
    node_b: str
    layer: str
    factor: float
    medium: TissueSpectrum
    sigma_floor: float = 0.0

    def __post_init__(self):
        if self.node_a == self.node_b:
            raise ParameterError(f"branch {self.id}: both ends on node {self.node_a}")
        if not (self.factor >= 0 and math.isfinite(self.factor)):
            raise ParameterError(f"branch {self.id}: geometric factor must be >= 0")

    def admittance(self, f):
        return self.factor * self.medium.admittivity(f, self.sigma_floor)


@dataclass(frozen=True)
class Interface:
    """Brain/skull or skull/scalp boundary seen from a ladder node."""

    inner: TissueSpectrum
    outer: TissueSpectrum
    radius: float
    crossing_branch: str


@dataclass(frozen=True)
class Netlist:
    branches: tuple[Branch, ...]
    source_node: str
    i_dip: float
    probe: str = "N3"
    interfaces: dict = field(default_factory=dict, compare=False)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.source_node == GND:
            raise ParameterError("current source must drive a non-ground node")
        nodes = self.nodes
        for n in (self.source_node, self.probe):
            if n not in nodes:
                raise ParameterError(f"node {n} is not connected to any branch")
        # graph connectivity (ignoring admittance values)
        adj: dict[str, set[str]] = {n: set() for n in nodes}
        for b in self.branches:
            adj[b.node_a].add(b.node_b)
            adj[b.node_b].add(b.node_a)
        seen, stack = {GND}, [GND]
        while stack:
            for m in adj.get(stack.pop(), ()):
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        missing = [n for n in nodes if n not in seen]
        if missing:
            raise ParameterError(f"network not connected to {GND}: {missing}")

    @property
    def nodes(self) -> list[str]:
        out = [GND]
        for b in self.branches:
            for n in (b.node_a, b.node_b):
                if n not in out:
                    out.append(n)
        return out

    @property
    def unknowns(self) -> list[str]:
        return [n for n in self.nodes if n != GND]

    def branch(self, layer_or_id: str) -> Branch:
        for b in self.branches:
            if b.layer == layer_or_id or b.id == layer_or_id:
                return b
        raise KeyError(layer_or_id)

    @property
    def is_dispersive(self) -> bool:
        return any(b.medium.is_dispersive for b in self.branches)

    def scaled(self, k: float) -> "Netlist":
        """Every impedance multiplied by ``k``."""
        bs = tuple(Branch(b.id, b.node_a, b.node_b, b.layer, b.factor / k, b.medium, b.sigma_floor)
                   for b in self.branches)
        return Netlist(bs, self.source_node, self.i_dip, self.probe, self.interfaces, self.meta)

    def with_source(self, node: str, i_dip: float | None = None) -> "Netlist":
        return Netlist(self.branches, node, self.i_dip if i_dip is None else i_dip, self.probe,
                       self.interfaces, self.meta)

    def admittance_matrices(self, freqs) -> np.ndarray:
        """Nodal admittance matrices, shape ``(len(freqs), n, n)`` over :attr:`unknowns`."""
        freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
        idx = {n: i for i, n in enumerate(self.unknowns)}
        n = len(idx)
        Y = np.zeros((freqs.size, n, n), dtype=complex)
        for b in self.branches:
            y = np.broadcast_to(b.admittance(freqs), freqs.shape)
            ia, ib = idx.get(b.node_a), idx.get(b.node_b)
            if ia is not None:
                Y[:, ia, ia] += y
            if ib is not None:
                Y[:, ib, ib] += y
            if ia is not None and ib is not None:
                Y[:, ia, ib] -= y
                Y[:, ib, ia] -= y
        return Y

    def source_vector(self) -> np.ndarray:
        i = np.zeros(len(self.unknowns), dtype=complex)
        i[self.unknowns.index(self.source_node)] = self.i_dip
        return i


def geometric_factors(geom: HeadGeometry, params: CircuitParams) -> dict[str, float]:
    """Admittance-per-unit-admittivity factor (m) of every branch."""
    k = 1.0 if params.r_scalp_ref is None else geom.r_scalp / params.r_scalp_ref
    r1, r2, r3 = geom.r_brain / k, geom.r_skull / k, geom.r_scalp / k
    g0 = 1.0 / params.s_brain
    g_skull = 4.0 * math.pi / (1.0 / r1 - 1.0 / r2)
    g_scalp = 4.0 * math.pi / (1.0 / r2 - 1.0 / r3)
    size = k * k  # admittance multiplier == impedance divided by k^2
    a = params.alpha
    raw = {
        "brain_up": g0 / (1.0 - a),
        "brain_down": g0 / (1.0 + a),
        "brain_tan": params.gamma_brain * g0,
        "skull_rad": g_skull,
        "skull_tan": params.gamma_skull * g_skull,
        "scalp_rad": g_scalp,
        "scalp_tan": params.gamma_scalp * g_scalp,
        "air": 4.0 * math.pi * r3,
    }
    return {name: v * size for name, v in raw.items()}


def build_netlist(geom: HeadGeometry, dip: DipoleSource, tissues: TissueSet, params: CircuitParams,
                  include_air: bool = True) -> Netlist:
    """Assemble the five-node ladder for the given head, source and coefficients."""
    ratios(geom, dip)  # validates dipole placement
    g = geometric_factors(geom, params)
    topo = {
        "brain_up": (NSRC, "N1", tissues.brain),
        "brain_down": (NSRC, GND, tissues.brain),
        "brain_tan": ("N1", GND, tissues.brain),
        "skull_rad": ("N1", "N2", tissues.skull),
        "skull_tan": ("N2", GND, tissues.skull),
        "scalp_rad": ("N2", "N3", tissues.scalp),
        "scalp_tan": ("N3", GND, tissues.scalp),
        "air": ("N3", GND, tissues.air),
    }
    branches = tuple(
        Branch(f"{name}", a, b, name, g[name], medium, tissues.sigma_floor)
        for name, (a, b, medium) in topo.items()
        if include_air or name != "air"
    )
    interfaces = {
        "N1": Interface(tissues.brain, tissues.skull, geom.r_brain, "skull_rad"),
        "N2": Interface(tissues.skull, tissues.scalp, geom.r_skull, "scalp_rad"),
    }
    meta = {"geometry": geom, "dipole": dip, "params": params, "tissues": tissues.name}
    return Netlist(branches, NSRC, dip.i_dip, "N3", interfaces, meta)


@dataclass(frozen=True)
class NodalSolution:
    netlist: Netlist
    frequency: float
    voltages: dict[str, complex]
    residual: float

    def branch_current(self, layer_or_id: str) -> complex:
        """Current from node_a to node_b through the branch."""
        b = self.netlist.branch(layer_or_id)
        va, vb = self.voltages[b.node_a], self.voltages[b.node_b]
        return complex(b.admittance(self.frequency) * (va - vb))

    def kcl_residuals(self) -> dict[str, complex]:
        """Net current leaving each non-ground node, source included."""
        out = {n: 0j for n in self.netlist.unknowns}
        for b in self.netlist.branches:
            i = self.branch_current(b.id)
            if b.node_a in out:
                out[b.node_a] += i
            if b.node_b in out:
                out[b.node_b] -= i
        out[self.netlist.source_node] -= self.netlist.i_dip
        return out


KCL_TOL = 1e-12


def _check_isolated(net: Netlist, Y: np.ndarray) -> None:
    diag = np.abs(np.diagonal(Y, axis1=-2, axis2=-1))
    for j, name in enumerate(net.unknowns):
        if np.any(diag[..., j] == 0):
            raise SingularNetworkError(f"node {name} is isolated (zero total admittance)", node=name)


def _refined_solve(Y: np.ndarray, i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """LU solve with one step of refinement; residual accumulated in extended precision."""
    try:
        v = np.linalg.solve(Y, np.broadcast_to(i, Y.shape[:-1])[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularNetworkError(f"singular admittance matrix: {exc}") from None
    Yl, vl = Y.astype(np.clongdouble), v.astype(np.clongdouble)
    r = (i.astype(np.clongdouble) - np.einsum("...ij,...j->...i", Yl, vl))
    dv = np.linalg.solve(Y, r.astype(complex)[..., None])[..., 0]
    v = v + dv
    r = i - np.einsum("...ij,...j->...i", Y.astype(np.clongdouble), v.astype(np.clongdouble))
    res = np.max(np.abs(r), axis=-1).astype(float)
    return v, res


def solve_nodal(net: Netlist, f: float) -> NodalSolution:
    """Node voltages relative to GND at frequency ``f``."""
    if not f > 0:
        raise ValueError(f"frequency must be > 0, got {f!r}")
    Y = net.admittance_matrices([f])
    _check_isolated(net, Y)
    i = net.source_vector()
    v, res = _refined_solve(Y, i)
    scale = np.max(np.abs(i))
    if not np.all(np.isfinite(v)) or (scale > 0 and res[0] > KCL_TOL * scale):
        raise SingularNetworkError(
            f"admittance matrix numerically singular at {f} Hz (KCL residual {res[0]:.3e})")
    volts = {GND: 0j, **{n: complex(x) for n, x in zip(net.unknowns, v[0])}}
    return NodalSolution(net, float(f), volts, float(res[0] / scale) if scale else 0.0)


def node_voltages(net: Netlist, freqs, node: str | None = None) -> np.ndarray:
    """Batched solve over a frequency grid; returns the voltage at ``node`` (default: probe)."""
    node = node or net.probe
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if net.i_dip == 0:
        return np.zeros(freqs.shape, dtype=complex)
    Y = net.admittance_matrices(freqs)
    _check_isolated(net, Y)
    v, _ = _refined_solve(Y, net.source_vector())
    if node == GND:
        return np.zeros(freqs.shape, dtype=complex)
    return v[:, net.unknowns.index(node)]


def scalp_peak_voltage(geom: HeadGeometry, dip: DipoleSource, tissues: TissueSet,
                       params: CircuitParams, f: float, include_air: bool = True) -> complex:
    net = build_netlist(geom, dip, tissues, params, include_air)
    return solve_nodal(net, f).voltages[net.probe]


def transfer_impedance(net: Netlist, f: float, drive: str, sense: str) -> complex:
    """V(sense) / I for a unit current injected at ``drive``."""
    sol = solve_nodal(net.with_source(drive, 1.0), f)
    return sol.voltages[sense]


def surface_charge(sol: NodalSolution | None, interface: str) -> complex:
    """Interfacial charge density eps_out*E_out - eps_in*E_in from the normal current.

    The normal current density is the radial current crossing into the outer
    layer divided by the interface area; each side's normal field follows from
    J = sigma_c * E.
    """
    if sol is None:
        raise StateError("surface charge needs a solved netlist")
    try:
        itf: Interface = sol.netlist.interfaces[interface]
    except KeyError:
        raise ValueError(f"unknown interface {interface!r}; expected one of "
                         f"{sorted(sol.netlist.interfaces)}") from None
    f = sol.frequency
    floor = sol.netlist.branch(itf.crossing_branch).sigma_floor
    j_n = sol.branch_current(itf.crossing_branch) / (4.0 * math.pi * itf.radius ** 2)
    sc_in = complex(itf.inner.admittivity(f, floor))
    sc_out = complex(itf.outer.admittivity(f, floor))
    eps_in = float(itf.inner.properties(f)[1]) * EPS0
    eps_out = float(itf.outer.properties(f)[1]) * EPS0
    return j_n * (eps_out / sc_out - eps_in / sc_in)
