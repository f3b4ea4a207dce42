"""Three-shell spherical head geometry and the radial dipole source."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

from .errors import ConfigError, GeometryError

CM = 1e-2
MM = 1e-3


@dataclass(frozen=True)
class HeadGeometry:
    """Concentric brain/skull/scalp radii in metres."""

    r_brain: float
    r_skull: float
    r_scalp: float

    def __post_init__(self):
        if not all(math.isfinite(r) for r in (self.r_brain, self.r_skull, self.r_scalp)):
            raise GeometryError("radii must be finite")
        if not 0 < self.r_brain < self.r_skull < self.r_scalp:
            raise GeometryError(
                f"need 0 < r_brain < r_skull < r_scalp, got {self.r_brain}, {self.r_skull}, {self.r_scalp}"
            )

    @property
    def t_skull(self) -> float:
        return self.r_skull - self.r_brain

    @property
    def t_scalp(self) -> float:
        return self.r_scalp - self.r_skull

    def with_skull_thickness(self, t_skull: float) -> "HeadGeometry":
        """Move the skull/scalp interface; brain and scalp radii stay fixed."""
        return replace(self, r_skull=self.r_brain + t_skull)

    def with_psi13(self, psi13: float) -> "HeadGeometry":
        """Move the brain/skull interface so r_brain / r_scalp == psi13."""
        return replace(self, r_brain=psi13 * self.r_scalp)

    def with_psi23(self, psi23: float) -> "HeadGeometry":
        """Move the skull/scalp interface so r_skull / r_scalp == psi23."""
        return replace(self, r_skull=psi23 * self.r_scalp)

    def scaled(self, k: float) -> "HeadGeometry":
        return HeadGeometry(k * self.r_brain, k * self.r_skull, k * self.r_scalp)


@dataclass(frozen=True)
class DipoleSource:
    """Radially oriented current dipole.

    ``r_dip`` is the radial position (m), ``p_r`` the moment (A*m) and ``d``
    the effective dipole length (m); the lumped source current is ``p_r / d``.
    """

    r_dip: float = 0.0
    p_r: float = 15e-9
    d: float = 1e-3

    def __post_init__(self):
        if not (self.r_dip >= 0 and math.isfinite(self.r_dip)):
            raise GeometryError(f"r_dip must be >= 0, got {self.r_dip}")
        if not (self.p_r >= 0 and math.isfinite(self.p_r)):
            raise GeometryError(f"p_r must be >= 0, got {self.p_r}")
        if not (self.d > 0 and math.isfinite(self.d)):
            raise GeometryError(f"d must be > 0, got {self.d}")

    @property
    def i_dip(self) -> float:
        return self.p_r / self.d

    def at_eta(self, eta: float, geom: HeadGeometry) -> "DipoleSource":
        return replace(self, r_dip=eta * geom.r_brain)


@dataclass(frozen=True)
class GeometryRatios:
    eta: float
    psi_12: float
    psi_13: float
    psi_23: float


def ratios(geom: HeadGeometry, dip: DipoleSource) -> GeometryRatios:
    """Dipole eccentricity and interface radius ratios."""
    if not dip.r_dip < geom.r_brain:
        raise GeometryError(f"dipole at r={dip.r_dip} m is not inside the brain (r_brain={geom.r_brain} m)")
    return GeometryRatios(
        eta=dip.r_dip / geom.r_brain,
        psi_12=geom.r_brain / geom.r_skull,
        psi_13=geom.r_brain / geom.r_scalp,
        psi_23=geom.r_skull / geom.r_scalp,
    )


def standard_geometry() -> HeadGeometry:
    """The canonical head: 7.91 / 8.50 / 9.20 cm."""
    return HeadGeometry(7.91 * CM, 8.50 * CM, 9.20 * CM)


_LENGTH = {"m": 1.0, "cm": CM, "mm": MM, "um": 1e-6, "µm": 1e-6}
_MOMENT = {"a*m": 1.0, "ma*m": 1e-3, "ua*m": 1e-6, "µa*m": 1e-6, "na*m": 1e-9, "pa*m": 1e-12}
_QTY = re.compile(r"^\s*([-+0-9.eE]+)\s*([^\s].*)?$")


def _parse(value, table: dict, what: str) -> float:
    if isinstance(value, (int, float)):
        raise ConfigError(f"{what}: value {value!r} needs an explicit unit suffix")
    m = _QTY.match(str(value))
    if not m or m.group(2) is None:
        raise ConfigError(f"{what}: cannot parse {value!r}; expected '<number> <unit>'")
    unit = m.group(2).strip().lower().replace("·", "*").replace(" ", "")
    if unit not in table:
        raise ConfigError(f"{what}: unknown unit {m.group(2)!r} (allowed: {', '.join(table)})")
    try:
        return float(m.group(1)) * table[unit]
    except ValueError:
        raise ConfigError(f"{what}: bad number in {value!r}") from None


def parse_length(value, what: str = "length") -> float:
    """``'7.91 cm'`` -> 0.0791."""
    return _parse(value, _LENGTH, what)


def parse_moment(value, what: str = "p_r") -> float:
    """``'15 nA*m'`` -> 1.5e-8."""
    return _parse(value, _MOMENT, what)
