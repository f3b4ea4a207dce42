"""Frequency-dependent tissue properties and complex conductivity.

Tables are sampled ``(frequency, sigma, eps_rel)`` triples; between samples
both quantities are interpolated linearly in log10(frequency), outside the
table they are held at the nearest endpoint (with an ``ExtrapolationWarning``).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np
import yaml

from .errors import (
    ConfigError,
    DomainError,
    ExtrapolationWarning,
    TissueFormatError,
    TissueValidationError,
)

EPS0 = 8.8541878128e-12  # F/m
LAYERS = ("brain", "skull", "scalp", "air")
CSV_HEADER = ("frequency_hz", "sigma_s_per_m", "eps_rel")


@dataclass(frozen=True)
class TissueSpectrum:
    """Sampled conductivity/permittivity of one medium.

    A single sample means frequency-independent properties.
    """

    name: str
    freqs: tuple[float, ...]
    sigma: tuple[float, ...]
    eps_rel: tuple[float, ...]

    def __post_init__(self):
        n = len(self.freqs)
        if n == 0:
            raise TissueValidationError(f"tissue {self.name!r}: table has no samples")
        if len(self.sigma) != n or len(self.eps_rel) != n:
            raise TissueValidationError(f"tissue {self.name!r}: column lengths differ")
        for f in self.freqs:
            if not (f > 0 and math.isfinite(f)):
                raise TissueFormatError(f"tissue {self.name!r}: frequency {f!r} must be finite and > 0")
        for a, b in zip(self.freqs, self.freqs[1:]):
            if not b > a:
                raise TissueFormatError(
                    f"tissue {self.name!r}: frequencies must be strictly increasing ({a} then {b})"
                )
        for s, e in zip(self.sigma, self.eps_rel):
            if not (math.isfinite(s) and math.isfinite(e)):
                raise TissueValidationError(f"tissue {self.name!r}: non-finite value")
            if s < 0 or e < 0:
                raise TissueValidationError(
                    f"tissue {self.name!r}: sigma and eps_rel must be >= 0 (got {s}, {e})"
                )

    @classmethod
    def constant(cls, name: str, sigma: float, eps_rel: float = 0.0) -> "TissueSpectrum":
        return cls(name, (1.0,), (float(sigma),), (float(eps_rel),))

    @classmethod
    def from_samples(cls, name: str, samples: Iterable[tuple[float, float, float]]) -> "TissueSpectrum":
        rows = [tuple(float(v) for v in s) for s in samples]
        return cls(name, tuple(r[0] for r in rows), tuple(r[1] for r in rows), tuple(r[2] for r in rows))

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        return list(zip(self.freqs, self.sigma, self.eps_rel))

    @property
    def is_dispersive(self) -> bool:
        return len(set(self.sigma)) > 1 or len(set(self.eps_rel)) > 1

    def properties(self, f) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated ``(sigma, eps_rel)`` at frequency/frequencies ``f``."""
        f = np.asarray(f, dtype=float)
        if np.any(~(f > 0)):
            raise DomainError("frequency must be > 0")
        if len(self.freqs) == 1:
            return np.full(f.shape, self.sigma[0]), np.full(f.shape, self.eps_rel[0])
        if np.any(f < self.freqs[0]) or np.any(f > self.freqs[-1]):
            warnings.warn(
                f"tissue {self.name!r}: query outside [{self.freqs[0]}, {self.freqs[-1]}] Hz, "
                "clamped to table endpoint",
                ExtrapolationWarning,
                stacklevel=3,
            )
        lf = np.log10(f)
        lx = np.log10(np.asarray(self.freqs))
        return np.interp(lf, lx, self.sigma), np.interp(lf, lx, self.eps_rel)

    def admittivity(self, f, sigma_floor: float = 0.0) -> np.ndarray:
        """Vectorised complex conductivity sigma + i*omega*eps at ``f``."""
        sigma, eps_rel = self.properties(f)
        sigma = np.maximum(sigma, sigma_floor)
        return sigma + 1j * (2.0 * np.pi * np.asarray(f, dtype=float)) * eps_rel * EPS0

    def frozen(self, at: float | None = None) -> "TissueSpectrum":
        """Frequency-independent copy with sigma taken at ``at`` (default lowest sample), eps zeroed."""
        f = self.freqs[0] if at is None else at
        sigma, _ = self.properties(f)
        return TissueSpectrum.constant(self.name, float(sigma), 0.0)

    def without_permittivity(self) -> "TissueSpectrum":
        return TissueSpectrum(self.name, self.freqs, self.sigma, tuple(0.0 for _ in self.freqs))


def complex_conductivity(spectrum: TissueSpectrum, f: float, sigma_floor: float = 0.0) -> complex:
    """sigma(f) + i*2*pi*f*eps_rel(f)*eps0 in S/m."""
    if not f > 0:
        raise DomainError(f"frequency must be > 0, got {f!r}")
    return complex(spectrum.admittivity(float(f), sigma_floor))


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return source.decode("utf-8")
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data


def load_tissue_table(source: IO | bytes | str | Path, name: str = "tissue") -> TissueSpectrum:
    """Parse a tissue CSV table.

    The header line ``frequency_hz,sigma_s_per_m,eps_rel`` is optional; lines
    starting with ``#`` and blank lines are skipped. Rows must already be in
    ascending frequency order.
    """
    text = _read_text(source)
    rows: list[tuple[float, float, float]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if tuple(p.lower() for p in parts) == CSV_HEADER:
            continue
        if len(parts) != 3:
            raise TissueFormatError(f"line {lineno}: expected 3 fields, got {len(parts)}")
        try:
            rows.append(tuple(float(p) for p in parts))
        except ValueError as exc:
            raise TissueFormatError(f"line {lineno}: {exc}") from None
    if not rows:
        raise TissueValidationError(f"tissue {name!r}: table has no samples")
    return TissueSpectrum.from_samples(name, rows)


def dump_tissue_table(spectrum: TissueSpectrum) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for f, s, e in spectrum.samples:
        w.writerow([repr(f), repr(s), repr(e)])
    return buf.getvalue()


@dataclass(frozen=True)
class TissueSet:
    """The four media of the head model, indexed brain/skull/scalp/air."""

    brain: TissueSpectrum
    skull: TissueSpectrum
    scalp: TissueSpectrum
    air: TissueSpectrum
    sigma_floor: float = 0.0
    name: str = field(default="tissues", compare=False)

    def __getitem__(self, layer: str) -> TissueSpectrum:
        if layer not in LAYERS:
            raise KeyError(layer)
        return getattr(self, layer)

    def layers(self) -> tuple[TissueSpectrum, ...]:
        return (self.brain, self.skull, self.scalp, self.air)

    def admittivities(self, f) -> np.ndarray:
        """Complex conductivities with shape ``(4,) + shape(f)``."""
        return np.stack([t.admittivity(f, self.sigma_floor) for t in self.layers()])

    @property
    def is_dispersive(self) -> bool:
        return any(t.is_dispersive for t in self.layers())

    def map(self, fn, name: str | None = None) -> "TissueSet":
        return TissueSet(*(fn(t) for t in self.layers()), sigma_floor=self.sigma_floor,
                         name=name or self.name)

    def with_air_sigma(self, sigma: float) -> "TissueSet":
        air = TissueSpectrum(self.air.name, self.air.freqs, tuple(sigma for _ in self.air.freqs),
                             self.air.eps_rel)
        return TissueSet(self.brain, self.skull, self.scalp, air, self.sigma_floor, self.name)

    def digest(self) -> str:
        payload = {"sigma_floor": self.sigma_floor,
                   **{n: t.samples for n, t in zip(LAYERS, self.layers())}}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    @classmethod
    def homogeneous(cls, sigma: float, eps_rel: float = 0.0) -> "TissueSet":
        return cls(*(TissueSpectrum.constant(n, sigma, eps_rel) for n in LAYERS), name="homogeneous")


def tissue_set_from_mapping(doc: Mapping, base_dir: Path | None = None, name: str = "tissues") -> TissueSet:
    """Build a TissueSet from a parsed manifest.

    Each layer entry is either ``{file: path}`` (relative to ``base_dir``) or
    ``{sigma: .., eps_rel: ..}`` for a constant medium.
    """
    layers_doc = doc.get("layers", doc)
    base_dir = Path(base_dir or ".")
    spectra = {}
    for layer in LAYERS:
        if layer not in layers_doc:
            raise ConfigError(f"tissue manifest is missing layer {layer!r}")
        entry = layers_doc[layer]
        if isinstance(entry, str):
            entry = {"file": entry}
        if "file" in entry:
            path = Path(entry["file"])
            if not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                raise ConfigError(f"tissue table for {layer!r} not found: {path}")
            spectra[layer] = load_tissue_table(path, name=layer)
        elif "sigma" in entry:
            spectra[layer] = TissueSpectrum.constant(layer, float(entry["sigma"]),
                                                     float(entry.get("eps_rel", 0.0)))
        else:
            raise ConfigError(f"layer {layer!r}: need 'file' or 'sigma'")
    floor = float(doc.get("sigma_floor", 0.0))
    if floor < 0:
        raise ConfigError("sigma_floor must be >= 0")
    return TissueSet(**spectra, sigma_floor=floor, name=str(doc.get("name", name)))


def load_tissue_manifest(path: str | Path) -> TissueSet:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"tissue manifest not found: {path}")
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return tissue_set_from_mapping(doc, path.parent, name=path.stem)


DATA_DIR = Path(__file__).parent / "data" / "tissues"


def builtin_tissues(name: str) -> TissueSet:
    """Shipped manifests: ``baseline``, ``homogeneous`` and ``dispersive_synthetic``."""
    path = DATA_DIR / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"unknown built-in tissue set {name!r}")
    return load_tissue_manifest(path)
