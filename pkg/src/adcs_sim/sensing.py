"""Sensor models: six-face sun sensor suite, magnetometer and star tracker.

Every measurement error is a small random rotation of the true body-frame
vector (axis uniform on the sphere, angle Gaussian per axis), so measured and
true vectors always share the same norm.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .mathcore import rotate_vector

ARCSEC = math.pi / (180.0 * 3600.0)


@dataclass(frozen=True)
class StarCatalogEntry:
    name: str
    ra_hms: tuple[float, float, float]
    dec_dms: tuple[float, float, float]   # sign carried by the first nonzero field
    vmag: float = 0.0

    @property
    def ra_rad(self) -> float:
        h, m, s = self.ra_hms
        return math.radians(15.0 * (h + m / 60.0 + s / 3600.0))

    @property
    def dec_rad(self) -> float:
        d, m, s = self.dec_dms
        negative = any(x < 0 for x in self.dec_dms)
        mag = abs(d) + abs(m) / 60.0 + abs(s) / 3600.0
        return math.radians(-mag if negative else mag)

    @classmethod
    def from_strings(cls, name: str, ra: str, dec: str, vmag: float = 0.0) -> "StarCatalogEntry":
        h, m, s = (float(x) for x in ra.split(":"))
        dec = dec.strip()
        sign = -1.0 if dec.startswith("-") else 1.0
        d, am, asec = (float(x) for x in dec.lstrip("+-").split(":"))
        if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60):
            raise ValueError(f"right ascension out of range for {name}: {ra}")
        if not (0 <= d <= 90 and 0 <= am < 60 and 0 <= asec < 60):
            raise ValueError(f"declination out of range for {name}: {dec}")
        # keep the sign on the degree field, or on minutes when degrees are zero
        if d != 0:
            dms = (sign * d, am, asec)
        elif am != 0:
            dms = (0.0, sign * am, asec)
        else:
            dms = (0.0, 0.0, sign * asec)
        return cls(name, (h, m, s), dms, float(vmag))


def catalog_direction(entry: StarCatalogEntry) -> np.ndarray:
    """Inertial unit vector ``[cos d cos a, cos d sin a, sin d]``."""
    a, d = entry.ra_rad, entry.dec_rad
    return np.array([math.cos(d) * math.cos(a), math.cos(d) * math.sin(a), math.sin(d)])


class StarCatalog:
    def __init__(self, entries: list[StarCatalogEntry]):
        if not entries:
            raise ValueError("star catalog is empty")
        self.entries = list(entries)
        self.directions = np.array([catalog_direction(e) for e in self.entries])

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, name: str) -> StarCatalogEntry:
        for e in self.entries:
            if e.name.lower() == name.lower():
                return e
        raise KeyError(name)

    @classmethod
    def _from_rows(cls, rows) -> "StarCatalog":
        return cls([StarCatalogEntry.from_strings(r["name"], r["ra_hms"], r["dec_dms"], float(r["vmag"]))
                    for r in rows])

    @classmethod
    def from_csv(cls, path: str | Path) -> "StarCatalog":
        with open(path, newline="") as fh:
            return cls._from_rows(csv.DictReader(fh))

    @classmethod
    def default(cls) -> "StarCatalog":
        text = resources.files("adcs_sim").joinpath("data/stars.csv").read_text()
        return cls._from_rows(csv.DictReader(text.splitlines()))


class TrackerStatus(str, Enum):
    OK = "ok"
    STARTING = "starting"
    INSUFFICIENT = "insufficient_stars"
    SUN_BLINDED = "sun_blinded"


@dataclass
class SensorSuite:
    """Sensor parameters plus the seeded random stream shared by all sensors."""

    sun_sigma_deg: float = 1.25
    sun_fov_half_deg: float = 53.96
    mag_sigma_deg: float = 1.0
    star_sigma_arcsec: float = 70.0
    star_fov_half_deg: float = 90.0
    star_startup_s: float = 3600.0
    min_stars: int = 4
    sun_exclusion_deg: float = 30.0
    boresight: tuple[float, float, float] = (1.0, 0.0, 0.0)
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("sun_sigma_deg", "mag_sigma_deg", "star_sigma_arcsec"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("sun_fov_half_deg", "star_fov_half_deg"):
            if not 0.0 < getattr(self, name) <= 90.0:
                raise ValueError(f"{name} must lie in (0, 90] degrees")
        if self.min_stars < 2:
            raise ValueError("min_stars must be at least 2")
        self.rng = np.random.default_rng(self.seed)
        self._boresight = np.asarray(self.boresight, float) / np.linalg.norm(self.boresight)
        self._cos_sun_fov = math.cos(math.radians(self.sun_fov_half_deg))
        self._cos_star_fov = math.cos(math.radians(self.star_fov_half_deg))
        self._cos_exclusion = math.cos(math.radians(self.sun_exclusion_deg))

    def reseed(self, seed: int) -> None:
        self.seed = seed
        self.rng = np.random.default_rng(seed)


def noisy_rotation(v: np.ndarray, sigma_rad: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate ``v`` by a random small rotation with per-axis RMS angle ``sigma_rad``.

    The rotation vector is drawn as three independent Gaussians, so the angle
    between input and output has RMS ``sigma_rad * sqrt(2)`` at small angles
    (only the two components orthogonal to ``v`` tilt it).
    """
    if sigma_rad == 0.0:
        rng.standard_normal(3)  # keep the stream aligned across noise settings
        return np.array(v, dtype=float)
    phi = rng.standard_normal(3) * sigma_rad
    angle = math.sqrt(phi @ phi)
    if angle == 0.0:
        return np.array(v, dtype=float)
    return rotate_vector(np.asarray(v, float), phi / angle, angle)


def direction_noise(v: np.ndarray, sigma_rad: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb ``v`` so its direction error has RMS ``sigma_rad``.

    Two orthogonal tilt components each with ``sigma/sqrt(2)`` give a total
    angular RMS of ``sigma``.
    """
    return noisy_rotation(v, sigma_rad / math.sqrt(2.0), rng)


def sun_visible(s_body: np.ndarray, suite: SensorSuite) -> bool:
    """True when some face boresight (+-x, +-y, +-z) sees the sun within its FOV."""
    return max(abs(s_body[0]), abs(s_body[1]), abs(s_body[2])) >= suite._cos_sun_fov


def sun_sensor_measure(A: np.ndarray, sun_eci: np.ndarray, in_eclipse: bool,
                       suite: SensorSuite) -> tuple[np.ndarray, bool]:
    """Body-frame sun unit vector and a validity flag.

    Args:
        A: true attitude matrix (ECI to body).
        sun_eci: Earth-to-Sun unit vector.
        in_eclipse: whether the spacecraft is in the Earth's shadow.
        suite: sensor parameters and random stream.
    """
    s_true = A @ sun_eci
    s = direction_noise(s_true, math.radians(suite.sun_sigma_deg), suite.rng)
    s = s / np.linalg.norm(s)
    if in_eclipse:
        return s, False
    return s, sun_visible(s_true, suite)


def magnetometer_measure(A: np.ndarray, B_eci: np.ndarray, suite: SensorSuite) -> np.ndarray:
    return direction_noise(A @ B_eci, math.radians(suite.mag_sigma_deg), suite.rng)


@dataclass
class StarObservation:
    body: np.ndarray
    eci: np.ndarray
    name: str


def visible_stars(A: np.ndarray, catalog: StarCatalog, suite: SensorSuite) -> np.ndarray:
    """Indices of catalog stars within the tracker FOV for attitude ``A``."""
    boresight_eci = A.T @ suite._boresight
    return np.flatnonzero(catalog.directions @ boresight_eci > suite._cos_star_fov)


def star_tracker_measure(A: np.ndarray, catalog: StarCatalog, t: float, suite: SensorSuite,
                         sun_eci: np.ndarray | None = None) -> tuple[list[StarObservation], TrackerStatus]:
    """Noisy body vectors of the visible catalog stars paired with their inertial vectors.

    Stars outside the FOV are dropped. The list is empty unless the status is
    ``OK``: the tracker is still starting, the sun is inside the exclusion cone,
    or fewer than ``suite.min_stars`` stars are visible.
    """
    if t < suite.star_startup_s:
        return [], TrackerStatus.STARTING
    if sun_eci is not None and (A.T @ suite._boresight) @ sun_eci > suite._cos_exclusion:
        return [], TrackerStatus.SUN_BLINDED
    idx = visible_stars(A, catalog, suite)
    if len(idx) < suite.min_stars:
        return [], TrackerStatus.INSUFFICIENT
    sigma = suite.star_sigma_arcsec * ARCSEC
    obs = []
    for i in idx:
        r = catalog.directions[i]
        b = direction_noise(A @ r, sigma, suite.rng)
        obs.append(StarObservation(b / np.linalg.norm(b), r, catalog.entries[i].name))
    return obs, TrackerStatus.OK


@dataclass
class SensorFrame:
    t: float
    sun_body: np.ndarray
    sun_valid: bool
    mag_body: np.ndarray
    mag_valid: bool
    stars: list[StarObservation]
    tracker_status: TrackerStatus
    sun_eci: np.ndarray
    mag_eci: np.ndarray


def sample_frame(t: float, A: np.ndarray, sun_eci: np.ndarray, B_eci: np.ndarray, in_eclipse: bool,
                 catalog: StarCatalog, suite: SensorSuite, use_tracker: bool = True) -> SensorFrame:
    """One epoch of all sensor outputs, drawn in a fixed order for determinism."""
    s, s_ok = sun_sensor_measure(A, sun_eci, in_eclipse, suite)
    m = magnetometer_measure(A, B_eci, suite)
    if use_tracker:
        stars, status = star_tracker_measure(A, catalog, t, suite, None if in_eclipse else sun_eci)
    else:
        stars, status = [], TrackerStatus.STARTING if t < suite.star_startup_s else TrackerStatus.INSUFFICIENT
    return SensorFrame(t, s, s_ok, m, bool(np.linalg.norm(B_eci) > 0), stars, status, sun_eci, B_eci)


def random_unit_vectors(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


def star_visibility_probability(catalog: StarCatalog, fov_half_deg: float, min_stars: int = 4,
                                samples: int = 10_000, seed: int = 0) -> float:
    """Fraction of uniformly random boresights seeing at least ``min_stars`` catalog stars."""
    b = random_unit_vectors(samples, np.random.default_rng(seed))
    counts = (b @ catalog.directions.T > math.cos(math.radians(fov_half_deg))).sum(axis=1)
    return float(np.mean(counts >= min_stars))


def sun_sensor_coverage(fov_half_deg: float = 53.96, samples: int = 100_000, seed: int = 0) -> float:
    """Fraction of the unit sphere seen by at least one of the six face sensors."""
    s = random_unit_vectors(samples, np.random.default_rng(seed))
    return float(np.mean(np.abs(s).max(axis=1) >= math.cos(math.radians(fov_half_deg))))
