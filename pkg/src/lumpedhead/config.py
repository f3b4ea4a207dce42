"""Run configuration: one YAML file, units resolved to SI at load time.

Example::

    geometry:
      r_brain: 7.91 cm
      r_skull: 8.50 cm
      r_scalp: 9.20 cm
    dipole:
      r_dip: 0 cm
      p_r: 15 nA*m
      d: 1 mm
    tissues: baseline               # builtin name or manifest path
    calibration_tissues: baseline
    frequency: {min: 10, max: 50000, points: 61}
    ssh: {rel_tol: 1.0e-12, l_max: 2000}
    calibration: {anchor_weight: 1.0e-6, restarts: 3, seed: 0}
    validation:
      etas: [0.233, 0.465, 0.814, 0.930, 0.966]
      t_skull: [4.6 mm, 5.0 mm]
      ablation_r_dip: 7.64 cm
      ablation_anchor_hz: null
    include_air: true
    out: results
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .calibration import CalibrationConfig, log_frequency_grid
from .circuit import CircuitParams
from .errors import ConfigError, LumpedHeadError
from .geometry import DipoleSource, HeadGeometry, parse_length, parse_moment, standard_geometry
from .ssh import SSHConfig
from .tissue import DATA_DIR, TissueSet, builtin_tissues, load_tissue_manifest
from .validation import ABLATION_R_DIP, DEFAULT_ETAS, DEFAULT_T_SKULLS

_TOP_KEYS = {"geometry", "dipole", "tissues", "calibration_tissues", "frequency", "ssh", "calibration",
             "validation", "include_air", "out", "model", "threads", "freeze_at", "circuit",
             "homogeneous_sigma"}
_GEOM_KEYS = {"r_brain", "r_skull", "r_scalp"}
_DIP_KEYS = {"r_dip", "p_r", "d"}
_CAL_KEYS = {f.name for f in fields(CalibrationConfig)} - {"freqs", "ssh", "dipole", "include_air",
                                                             "threads"}


@dataclass(frozen=True)
class RunConfig:
    geometry: HeadGeometry = field(default_factory=standard_geometry)
    dipole: DipoleSource = DipoleSource()
    tissues: str | None = None
    calibration_tissues: str = "baseline"
    freq_min: float = 10.0
    freq_max: float = 50e3
    freq_points: int = 61
    ssh: SSHConfig = SSHConfig()
    calibration: dict = field(default_factory=dict)
    etas: tuple[float, ...] = DEFAULT_ETAS
    t_skulls: tuple[float, ...] = DEFAULT_T_SKULLS
    ablation_r_dip: float = ABLATION_R_DIP
    ablation_anchor_hz: float | None = None
    include_air: bool = True
    out: Path = Path(".")
    model: Path | None = None
    threads: int = 1
    freeze_at: float | None = None
    circuit_params: CircuitParams | None = None
    homogeneous_sigma: float = 0.33
    base_dir: Path = Path(".")

    @property
    def freqs(self) -> np.ndarray:
        return log_frequency_grid(self.freq_min, self.freq_max, self.freq_points)

    def tissue_set(self, default: str) -> TissueSet:
        return resolve_tissues(self.tissues or default, self.base_dir)

    def calibration_config(self) -> CalibrationConfig:
        return CalibrationConfig(freqs=tuple(self.freqs), ssh=self.ssh,
                                 dipole=DipoleSource(p_r=self.dipole.p_r, d=self.dipole.d),
                                 include_air=self.include_air, threads=self.threads, **self.calibration)


def resolve_tissues(ref: str, base_dir: Path = Path(".")) -> TissueSet:
    """A builtin set name (``baseline``, ``dispersive_synthetic``, ``homogeneous``) or a manifest path."""
    if (DATA_DIR / f"{ref}.yaml").is_file() and not (base_dir / ref).exists():
        return builtin_tissues(ref)
    path = Path(ref)
    if not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise ConfigError(f"tissue set {ref!r} is neither a builtin name nor an existing file")
    return load_tissue_manifest(path)


def _mapping(doc, what: str) -> dict:
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} must be a mapping")
    return doc


def _number(x, what: str, positive: bool = False) -> float:
    try:
        v = float(x)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {x!r}") from None
    if not math.isfinite(v) or (positive and v <= 0):
        raise ConfigError(f"{what} must be a finite{' positive' if positive else ''} number, got {x!r}")
    return v


def _int(x, what: str, minimum: int = 1) -> int:
    if isinstance(x, bool) or not isinstance(x, int) or x < minimum:
        raise ConfigError(f"{what} must be an integer >= {minimum}, got {x!r}")
    return x


def from_mapping(doc: dict, base_dir: Path = Path(".")) -> RunConfig:
    """Validate a parsed configuration document."""
    doc = _mapping(doc, "configuration")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    kw: dict = {"base_dir": base_dir}
    try:
        geo = _mapping(doc.get("geometry"), "geometry")
        dip = _mapping(doc.get("dipole"), "dipole")
        bad = set(geo) - _GEOM_KEYS - _DIP_KEYS
        if bad or set(dip) - _DIP_KEYS:
            raise ConfigError(f"unknown geometry/dipole keys: {sorted(bad | (set(dip) - _DIP_KEYS))}")
        std = standard_geometry()
        if geo.keys() & _GEOM_KEYS:
            kw["geometry"] = HeadGeometry(*(parse_length(geo[k], k) if k in geo else getattr(std, k)
                                            for k in ("r_brain", "r_skull", "r_scalp")))
        dvals = {**{k: geo[k] for k in _DIP_KEYS & geo.keys()}, **dip}
        if dvals:
            base = DipoleSource()
            kw["dipole"] = DipoleSource(
                r_dip=parse_length(dvals["r_dip"], "r_dip") if "r_dip" in dvals else base.r_dip,
                p_r=parse_moment(dvals["p_r"]) if "p_r" in dvals else base.p_r,
                d=parse_length(dvals["d"], "d") if "d" in dvals else base.d,
            )
    except ConfigError:
        raise
    except LumpedHeadError as exc:
        raise ConfigError(f"invalid geometry: {exc}") from exc

    for key in ("tissues", "calibration_tissues"):
        if key in doc:
            if not isinstance(doc[key], str):
                raise ConfigError(f"{key} must be a builtin name or a manifest path")
            kw[key] = doc[key]

    fr = _mapping(doc.get("frequency"), "frequency")
    if set(fr) - {"min", "max", "points"}:
        raise ConfigError("frequency accepts only min, max, points")
    if "min" in fr:
        kw["freq_min"] = _number(fr["min"], "frequency.min", positive=True)
    if "max" in fr:
        kw["freq_max"] = _number(fr["max"], "frequency.max", positive=True)
    if "points" in fr:
        kw["freq_points"] = _int(fr["points"], "frequency.points", 2)

    s = _mapping(doc.get("ssh"), "ssh")
    if set(s) - {"rel_tol", "l_max"}:
        raise ConfigError("ssh accepts only rel_tol, l_max")
    try:
        kw["ssh"] = SSHConfig(rel_tol=_number(s.get("rel_tol", 1e-12), "ssh.rel_tol", positive=True),
                              l_max=_int(s.get("l_max", 2000), "ssh.l_max"))
    except (ValueError, LumpedHeadError) as exc:
        raise ConfigError(f"invalid ssh options: {exc}") from exc

    cal = _mapping(doc.get("calibration"), "calibration")
    if set(cal) - _CAL_KEYS:
        raise ConfigError(f"unknown calibration keys: {sorted(set(cal) - _CAL_KEYS)}")
    cal = {k: tuple(v) if isinstance(v, list) else v for k, v in cal.items()}
    kw["calibration"] = cal

    val = _mapping(doc.get("validation"), "validation")
    if set(val) - {"etas", "t_skull", "ablation_r_dip", "ablation_anchor_hz"}:
        raise ConfigError("validation accepts etas, t_skull, ablation_r_dip, ablation_anchor_hz")
    if "etas" in val:
        kw["etas"] = tuple(_number(e, "validation.etas") for e in val["etas"])
    if "t_skull" in val:
        kw["t_skulls"] = tuple(parse_length(t, "t_skull") for t in val["t_skull"])
    if "ablation_r_dip" in val:
        kw["ablation_r_dip"] = parse_length(val["ablation_r_dip"], "ablation_r_dip")
    if val.get("ablation_anchor_hz") is not None:
        kw["ablation_anchor_hz"] = _number(val["ablation_anchor_hz"], "ablation_anchor_hz", positive=True)

    if "include_air" in doc:
        if not isinstance(doc["include_air"], bool):
            raise ConfigError("include_air must be true or false")
        kw["include_air"] = doc["include_air"]
    if "out" in doc:
        kw["out"] = base_dir / str(doc["out"])
    if doc.get("model") is not None:
        kw["model"] = base_dir / str(doc["model"])
    if "threads" in doc:
        kw["threads"] = _int(doc["threads"], "threads")
    if doc.get("freeze_at") is not None:
        kw["freeze_at"] = _number(doc["freeze_at"], "freeze_at", positive=True)
    if "homogeneous_sigma" in doc:
        kw["homogeneous_sigma"] = _number(doc["homogeneous_sigma"], "homogeneous_sigma", positive=True)
    if doc.get("circuit") is not None:
        c = _mapping(doc["circuit"], "circuit")
        try:
            p = dict(c.get("params") or {})
            if "r_scalp_ref" in p and p["r_scalp_ref"] is not None:
                p["r_scalp_ref"] = parse_length(p["r_scalp_ref"], "r_scalp_ref")
            kw["circuit_params"] = CircuitParams(**p)
        except (TypeError, LumpedHeadError) as exc:
            raise ConfigError(f"invalid circuit.params: {exc}") from exc
    return RunConfig(**kw)


def load_run_config(path: str | Path | None) -> RunConfig:
    """Parse a YAML run configuration; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return from_mapping(doc or {}, path.parent)


def with_overrides(cfg: RunConfig, **flags) -> RunConfig:
    """Apply command-line values; ``None`` means the flag was not given."""
    given = {k: v for k, v in flags.items() if v is not None}
    if "freq_points" in given and given["freq_points"] < 2:
        raise ConfigError("--freq-points must be >= 2")
    for k in ("freq_min", "freq_max", "freeze_at"):
        if k in given and not (math.isfinite(given[k]) and given[k] > 0):
            raise ConfigError(f"--{k.replace('_', '-')} must be a positive number")
    if "threads" in given and given["threads"] < 1:
        raise ConfigError("--threads must be >= 1")
    if "out" in given:
        given["out"] = Path(given["out"])
    if "model" in given:
        given["model"] = Path(given["model"])
    cfg = replace(cfg, **given)
    if not cfg.freq_min < cfg.freq_max:
        raise ConfigError(f"frequency range is empty: min={cfg.freq_min!r} max={cfg.freq_max!r}")
    return cfg
