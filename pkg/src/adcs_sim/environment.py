"""Environment models: low-precision Sun/Moon ephemerides, tilted dipole
geomagnetic field, piecewise-exponential atmosphere and cylindrical eclipse.

Distances are in km, times in seconds, magnetic field in Tesla, all vectors
in ECI unless noted.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

J2000 = datetime(2000, 1, 1, 12, 0, 0, tzinfo=timezone.utc)
SECONDS_PER_DAY = 86400.0

# Hot-path module constants; PhysicalConstants mirrors them for callers that
# want to override.
MU_EARTH = 398600.4418          # km^3/s^2
MU_MOON = 4902.800066           # km^3/s^2
R_EARTH = 6378.137              # km
J2 = 1.08262668e-3
OMEGA_EARTH = 7.2921158553e-5   # rad/s, sidereal
SOLAR_FLUX = 1361.0             # W/m^2 at 1 AU
SPEED_OF_LIGHT = 299792458.0    # m/s
B0 = 3.12e-5                    # T, equatorial surface dipole field
DIPOLE_TILT_DEG = 11.5
DIPOLE_POLE_LON_DEG = -71.6     # east longitude of the geomagnetic north pole
OBLIQUITY_DEG = 23.44
TROPICAL_YEAR_DAYS = 365.25
SUN_MEAN_LON_J2000_DEG = 280.460
MOON_DISTANCE_KM = 384400.0
MOON_PERIOD_DAYS = 27.32
MOON_INCLINATION_DEG = OBLIQUITY_DEG + 5.145  # circular orbit, node fixed at the equinox
MOON_MEAN_LON_J2000_DEG = 218.316


@dataclass(frozen=True)
class PhysicalConstants:
    mu_earth: float = MU_EARTH
    mu_moon: float = MU_MOON
    r_earth: float = R_EARTH
    solar_flux: float = SOLAR_FLUX
    speed_of_light: float = SPEED_OF_LIGHT
    dipole_strength: float = B0 * R_EARTH ** 3  # T km^3
    dipole_tilt_deg: float = DIPOLE_TILT_DEG

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"physical constant {name} must be positive, got {value}")

    @property
    def solar_pressure(self) -> float:
        """Radiation pressure at 1 AU for a perfectly absorbing surface [N/m^2]."""
        return self.solar_flux / self.speed_of_light


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class EpochTime:
    """Simulation time ``t`` seconds after the calendar ``epoch`` (UTC)."""

    t: float
    epoch: datetime = J2000

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"simulation time must be >= 0, got {self.t}")
        if self.epoch.tzinfo is None:
            object.__setattr__(self, "epoch", self.epoch.replace(tzinfo=timezone.utc))

    @property
    def days_since_j2000(self) -> float:
        return (self.epoch - J2000).total_seconds() / SECONDS_PER_DAY + self.t / SECONDS_PER_DAY

    def at(self, t: float) -> "EpochTime":
        return EpochTime(t, self.epoch)


def gmst(t: EpochTime) -> float:
    """Greenwich mean sidereal angle [rad] (UT1 taken equal to UTC)."""
    deg = 280.46061837 + 360.98564736629 * t.days_since_j2000
    return math.radians(deg % 360.0)


def sun_direction(t: EpochTime) -> np.ndarray:
    """Unit vector from Earth to Sun on a circular ecliptic orbit."""
    lam = math.radians(SUN_MEAN_LON_J2000_DEG + 360.0 / TROPICAL_YEAR_DAYS * t.days_since_j2000)
    eps = math.radians(OBLIQUITY_DEG)
    return np.array([math.cos(lam), math.cos(eps) * math.sin(lam), math.sin(eps) * math.sin(lam)])


def moon_position(t: EpochTime) -> np.ndarray:
    """Moon position [km] on a circular orbit inclined to the equator, node at the equinox."""
    u = math.radians(MOON_MEAN_LON_J2000_DEG + 360.0 / MOON_PERIOD_DAYS * t.days_since_j2000)
    inc = math.radians(MOON_INCLINATION_DEG)
    return MOON_DISTANCE_KM * np.array([math.cos(u), math.cos(inc) * math.sin(u), math.sin(inc) * math.sin(u)])


def dipole_axis(t: EpochTime, const: PhysicalConstants = CONSTANTS) -> np.ndarray:
    """Unit vector of the geomagnetic dipole moment (points to the geomagnetic south pole)."""
    lon = gmst(t) + math.radians(DIPOLE_POLE_LON_DEG)
    tilt = math.radians(const.dipole_tilt_deg)
    st = math.sin(tilt)
    return -np.array([st * math.cos(lon), st * math.sin(lon), math.cos(tilt)])


class SubsurfaceError(ValueError):
    pass


def magnetic_field(r: np.ndarray, t: EpochTime, const: PhysicalConstants = CONSTANTS) -> np.ndarray:
    """Tilted dipole co-rotating with the Earth.

    Args:
        r: ECI position [km], must lie outside the Earth.
        t: epoch time.

    Returns:
        Field vector in ECI [T].
    """
    rn = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    if rn <= const.r_earth:
        raise SubsurfaceError(f"magnetic field queried below the surface (|r|={rn:.1f} km)")
    m = dipole_axis(t, const)
    rh = r / rn
    return (const.dipole_strength / rn ** 3) * (3.0 * np.dot(m, rh) * rh - m)


class AtmosphereRangeError(ValueError):
    pass


@dataclass(frozen=True)
class AtmosphereTable:
    """Piecewise-exponential density bands ``rho = rho_i * exp(-(h - h_i) / H_i)``."""

    altitudes: tuple[float, ...]
    densities: tuple[float, ...]
    scale_heights: tuple[float, ...]
    top: float = 1000.0
    _alts: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.altitudes)
        if n == 0 or len(self.densities) != n or len(self.scale_heights) != n:
            raise ValueError("atmosphere table columns must be non-empty and of equal length")
        for i in range(1, n):
            if not self.altitudes[i] > self.altitudes[i - 1]:
                raise ValueError("atmosphere altitudes must be strictly increasing")
            if not self.densities[i] < self.densities[i - 1]:
                raise ValueError("atmosphere densities must be strictly decreasing")
        if any(H <= 0 for H in self.scale_heights):
            raise ValueError("scale heights must be positive")
        object.__setattr__(self, "_alts", list(self.altitudes))

    @classmethod
    def from_csv(cls, path: str | Path) -> "AtmosphereTable":
        with open(path, newline="") as fh:
            return cls._from_rows(csv.DictReader(fh))

    @classmethod
    def _from_rows(cls, reader) -> "AtmosphereTable":
        h, rho, H = [], [], []
        for row in reader:
            h.append(float(row["h_km"]))
            rho.append(float(row["rho_kg_m3"]))
            H.append(float(row["H_km"]))
        return cls(tuple(h), tuple(rho), tuple(H), top=max(1000.0, h[-1]) if h else 1000.0)

    def density(self, h: float) -> float:
        if not (self.altitudes[0] <= h <= self.top):
            raise AtmosphereRangeError(
                f"altitude {h:.3f} km outside atmosphere table [{self.altitudes[0]}, {self.top}]"
            )
        i = bisect.bisect_right(self._alts, h) - 1
        return self.densities[i] * math.exp(-(h - self.altitudes[i]) / self.scale_heights[i])


@lru_cache(maxsize=1)
def default_atmosphere() -> AtmosphereTable:
    text = resources.files("adcs_sim").joinpath("data/atmosphere.csv").read_text()
    return AtmosphereTable._from_rows(csv.DictReader(text.splitlines()))


def atmosphere_density(h: float, table: AtmosphereTable | None = None) -> float:
    """Density [kg/m^3] at geometric altitude ``h`` [km]."""
    return (table or default_atmosphere()).density(h)


def eclipse(r: np.ndarray, e_sun: np.ndarray, r_earth: float = R_EARTH) -> bool:
    """Cylindrical-shadow test: behind the Earth and within one Earth radius of the shadow axis."""
    r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    along = r[0] * e_sun[0] + r[1] * e_sun[1] + r[2] * e_sun[2]
    return along < -math.sqrt(max(r2 - r_earth * r_earth, 0.0))
