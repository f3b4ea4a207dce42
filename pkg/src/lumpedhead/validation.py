"""Circuit-versus-reference comparison: MRFE, eccentricity/skull grids, ablation."""
from __future__ import annotations

import hashlib
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calibration import FittedModel, eval_params, log_frequency_grid
from .circuit import CircuitParams, build_netlist, node_voltages
from .errors import DegenerateReferenceError, GridMismatchError, SweepError
from .geometry import CM, MM, DipoleSource, HeadGeometry
from .ssh import SSHConfig, scalp_potential
from .tissue import TissueSet

DEFAULT_ETAS = (0.233, 0.465, 0.814, 0.930, 0.966)
STANDARD_T_SKULL = 5.9 * MM
DEFAULT_T_SKULLS = tuple(sorted({round(4.6 + 0.4 * k, 1) * MM for k in range(10)} | {STANDARD_T_SKULL}))
ABLATION_R_DIP = 7.64 * CM
CASES = ("ohmic_nondispersive", "dispersive_R_only", "dispersive_RC")


@dataclass(frozen=True)
class ModelConfig:
    """Everything a solver needs besides the frequency."""

    geom: HeadGeometry
    dip: DipoleSource
    tissues: TissueSet
    params: CircuitParams | None = None
    ssh: SSHConfig = SSHConfig()
    include_air: bool = True

    def digest(self, solver: str) -> str:
        parts = [solver, repr(self.geom), repr(self.dip), self.tissues.digest()]
        if solver == "circuit":
            parts += [repr(self.params), str(self.include_air)]
        else:
            parts.append(repr(self.ssh))
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SweepResult:
    freqs: tuple[float, ...]
    values: np.ndarray = field(compare=False)
    label: str = ""
    provenance: str = ""
    config_hash: str = ""

    def __post_init__(self):
        if len(self.freqs) != len(self.values):
            raise ValueError("freqs and values differ in length")
        if any(b <= a for a, b in zip(self.freqs, self.freqs[1:])):
            raise ValueError("sweep frequencies must be strictly increasing")

    def rows(self):
        for f, v in zip(self.freqs, self.values):
            yield f, v.real, v.imag, abs(v)


def _chunks(n: int, k: int) -> list[slice]:
    k = max(1, min(k, n))
    edges = np.linspace(0, n, k + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def frequency_sweep(solver: str, config: ModelConfig, freqs=None, threads: int = 1,
                    label: str = "") -> SweepResult:
    """Evaluate one solver on a frequency grid; chunks run concurrently, output order is fixed."""
    freqs = np.asarray(log_frequency_grid() if freqs is None else freqs, dtype=float)
    if solver == "circuit":
        if config.params is None:
            raise ValueError("circuit sweep needs CircuitParams")
        net = build_netlist(config.geom, config.dip, config.tissues, config.params, config.include_air)

        def one(f):
            return node_voltages(net, [f])[0]

        def block(fs):
            return node_voltages(net, fs)
    elif solver == "ssh":
        def one(f):
            return scalp_potential(config.geom, config.dip, config.tissues, f, config.ssh)

        def block(fs):
            return np.array([one(f) for f in fs])
    else:
        raise ValueError(f"unknown solver {solver!r}")

    def run(sl):
        try:
            return block(freqs[sl]), {}
        except Exception:
            vals, errs = np.full(sl.stop - sl.start, np.nan + 0j), {}
            for j, f in enumerate(freqs[sl]):
                try:
                    vals[j] = one(f)
                except Exception as exc:  # annotate and keep going
                    errs[float(f)] = f"{type(exc).__name__}: {exc}"
            return vals, errs

    slices = _chunks(len(freqs), threads)
    if threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, slices))
    else:
        parts = [run(sl) for sl in slices]
    failures = {k: v for _, e in parts for k, v in e.items()}
    if failures:
        raise SweepError(f"{solver} sweep failed at {len(failures)} frequencies", failures)
    values = np.concatenate([p for p, _ in parts]).astype(complex)
    return SweepResult(tuple(float(f) for f in freqs), values, label or solver, solver,
                       config.digest(solver))


def mrfe(circuit: SweepResult, ssh: SweepResult) -> float:
    """Mean over frequency of |(V_circuit - V_ref) / V_ref|."""
    if tuple(circuit.freqs) != tuple(ssh.freqs):
        raise GridMismatchError("sweeps are on different frequency grids")
    ref = np.asarray(ssh.values, dtype=complex)
    if np.any(ref == 0):
        raise DegenerateReferenceError("reference sweep has a zero value")
    return float(np.mean(np.abs((np.asarray(circuit.values) - ref) / ref)))


@dataclass(frozen=True)
class MrfeGrid:
    etas: tuple[float, ...]
    t_skulls: tuple[float, ...]
    values: np.ndarray = field(compare=False)  # shape (len(etas), len(t_skulls))
    standard_t_skull: float = STANDARD_T_SKULL

    @property
    def standard_column(self) -> int | None:
        for j, t in enumerate(self.t_skulls):
            if math.isclose(t, self.standard_t_skull, rel_tol=0, abs_tol=1e-9):
                return j
        return None

    def rows(self):
        for i, eta in enumerate(self.etas):
            for j, t in enumerate(self.t_skulls):
                yield eta, t / MM, float(self.values[i, j])


def compare(config: ModelConfig, freqs, threads: int = 1) -> tuple[SweepResult, SweepResult, float]:
    c = frequency_sweep("circuit", config, freqs, threads)
    s = frequency_sweep("ssh", config, freqs, threads)
    return c, s, mrfe(c, s)


def mrfe_grid(model: FittedModel, tissues: TissueSet, etas=DEFAULT_ETAS, t_skulls=DEFAULT_T_SKULLS,
              freqs=None, dipole: DipoleSource | None = None, ssh: SSHConfig = SSHConfig(),
              include_air: bool = True, threads: int = 1, geom: HeadGeometry | None = None) -> MrfeGrid:
    """MRFE per (eccentricity, skull thickness); brain and scalp radii held fixed."""
    freqs = np.asarray(log_frequency_grid() if freqs is None else freqs, dtype=float)
    base = geom or model.geometry
    dipole = dipole or DipoleSource(p_r=model.meta.get("dipole", {}).get("p_r", 15e-9),
                                    d=model.meta.get("dipole", {}).get("d", 1e-3))
    jobs = [(i, j, eta, t) for i, eta in enumerate(etas) for j, t in enumerate(t_skulls)]

    def one(job):
        i, j, eta, t = job
        g = base.with_skull_thickness(t)
        dip = dipole.at_eta(eta, g)
        cfg = ModelConfig(g, dip, tissues, eval_params(model, g, dip), ssh, include_air)
        return compare(cfg, freqs)[2]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            vals = list(ex.map(one, jobs))
    else:
        vals = [one(j) for j in jobs]
    out = np.zeros((len(etas), len(t_skulls)))
    for (i, j, _, _), v in zip(jobs, vals):
        out[i, j] = v
    return MrfeGrid(tuple(float(e) for e in etas), tuple(float(t) for t in t_skulls), out)


@dataclass(frozen=True)
class AblationResult:
    cases: dict
    rel_error: dict

    def rows(self):
        freqs = self.cases[CASES[-1]].freqs
        for k, f in enumerate(freqs):
            row = [f]
            for c in CASES:
                row.append(abs(self.cases[c].values[k]))
            for c in CASES:
                row.append(float(self.rel_error[c][k]))
            yield row


def ablation_tissues(tissues: TissueSet, anchor_hz: float | None = None) -> dict[str, TissueSet]:
    """Tissue sets for the three cases: frozen ohmic, dispersive ohmic, full."""
    return {
        "ohmic_nondispersive": tissues.map(lambda t: t.frozen(anchor_hz), name="ohmic_nondispersive"),
        "dispersive_R_only": tissues.map(lambda t: t.without_permittivity(), name="dispersive_R_only"),
        "dispersive_RC": tissues,
    }


def ablation_study(geom: HeadGeometry, dip: DipoleSource, tissues: TissueSet, params: CircuitParams,
                   freqs=None, anchor_hz: float | None = None, include_air: bool = True,
                   threads: int = 1) -> AblationResult:
    """Circuit response with capacitances and/or dispersion removed, relative to the full model."""
    if not tissues.is_dispersive:
        warnings.warn("tissues are not dispersive: the ohmic and R-only cases coincide", RuntimeWarning,
                      stacklevel=2)
    freqs = np.asarray(log_frequency_grid() if freqs is None else freqs, dtype=float)
    cases = {}
    for case, ts in ablation_tissues(tissues, anchor_hz).items():
        cases[case] = frequency_sweep("circuit", ModelConfig(geom, dip, ts, params, include_air=include_air),
                                      freqs, threads, label=case)
    full = np.asarray(cases["dispersive_RC"].values)
    rel = {c: np.abs(np.asarray(cases[c].values) - full) / np.abs(full) for c in CASES}
    return AblationResult(cases, rel)
