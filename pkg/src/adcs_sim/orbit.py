"""TLE ingestion and numerical propagation of the perturbed two-body problem.

TLE mean elements are used as osculating Keplerian elements (no SGP4); this
is a deliberate fidelity limit adequate for attitude-level simulation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import environment as env
from .mathcore import rk4_step

DEFAULT_AREA = 0.04  # m^2, one 20 cm cube face
DEFAULT_MASS = 7.0
DEFAULT_CD = 2.6
DEFAULT_CR = 1.5


class TleError(ValueError):
    """TLE decoding failure; ``code`` is one of ``checksum``, ``format``, ``line_number``."""

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


class KeplerError(RuntimeError):
    pass


class PropagationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"t={t:.3f} s: {message}")
        self.message = message
        self.t = t


@dataclass(frozen=True)
class Tle:
    catalog_number: int
    classification: str
    designator: str
    epoch: datetime
    ndot: float
    nddot: float
    bstar: float
    inclination: float      # deg
    raan: float             # deg
    eccentricity: float
    arg_perigee: float      # deg
    mean_anomaly: float     # deg
    mean_motion: float      # rev/day
    rev_number: int
    name: str = ""

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise TleError("format", f"eccentricity {self.eccentricity} outside [0, 1)")
        if not 0.0 <= self.inclination <= 180.0:
            raise TleError("format", f"inclination {self.inclination} outside [0, 180]")


def tle_checksum(line: str) -> int:
    """Mod-10 checksum over the first 68 columns (digits count, '-' counts 1)."""
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += int(ch)
        elif ch == "-":
            total += 1
    return total % 10


def _implied_decimal(field: str) -> float:
    # " 12345-4" -> 0.12345e-4
    s = field.strip()
    if not s:
        return 0.0
    sign = -1.0 if s[0] == "-" else 1.0
    s = s.lstrip("+-")
    mantissa, exp = s[:-2], s[-2:]
    return sign * float("0." + mantissa.strip()) * 10.0 ** int(exp)


def _field(line: str, a: int, b: int, conv, name: str):
    try:
        return conv(line[a - 1:b])
    except ValueError as exc:
        raise TleError("format", f"bad {name} field {line[a - 1:b]!r}") from exc


def parse_tle(line1: str, line2: str, name: str = "") -> Tle:
    """Decode a two-line element set (fixed-column format).

    Raises:
        TleError: with ``code`` ``line_number`` (wrong leading digits or mismatched
            catalog numbers), ``format`` (length or field syntax) or ``checksum``.
    """
    line1, line2 = line1.rstrip("\r\n "), line2.rstrip("\r\n ")
    if not line1.startswith("1 ") or not line2.startswith("2 "):
        raise TleError("line_number", "lines must start with '1 ' and '2 ' respectively")
    for i, line in enumerate((line1, line2), start=1):
        if len(line) != 69:
            raise TleError("format", f"line {i} has {len(line)} characters, expected 69")
        if not line[68].isdigit():
            raise TleError("format", f"line {i} checksum column is not a digit")
        if tle_checksum(line) != int(line[68]):
            raise TleError("checksum", f"line {i} checksum {line[68]} != computed {tle_checksum(line)}")
    cat1 = _field(line1, 3, 7, int, "catalog number")
    cat2 = _field(line2, 3, 7, int, "catalog number")
    if cat1 != cat2:
        raise TleError("line_number", f"catalog numbers differ between lines ({cat1} vs {cat2})")

    yy = _field(line1, 19, 20, int, "epoch year")
    day = _field(line1, 21, 32, float, "epoch day")
    year = 2000 + yy if yy < 57 else 1900 + yy
    epoch = datetime(year, 1, 1, tzinfo=timezone.utc) + timedelta(days=day - 1.0)

    return Tle(
        catalog_number=cat1,
        classification=line1[7],
        designator=line1[9:17].strip(),
        epoch=epoch,
        ndot=_field(line1, 34, 43, float, "ndot"),
        nddot=_field(line1, 45, 52, _implied_decimal, "nddot"),
        bstar=_field(line1, 54, 61, _implied_decimal, "bstar"),
        inclination=_field(line2, 9, 16, float, "inclination"),
        raan=_field(line2, 18, 25, float, "raan"),
        eccentricity=_field(line2, 27, 33, lambda s: float("0." + s.strip()), "eccentricity"),
        arg_perigee=_field(line2, 35, 42, float, "argument of perigee"),
        mean_anomaly=_field(line2, 44, 51, float, "mean anomaly"),
        mean_motion=_field(line2, 53, 63, float, "mean motion"),
        rev_number=_field(line2, 64, 68, lambda s: int(s.strip() or 0), "revolution number"),
        name=name,
    )


def parse_tle_text(text: str) -> list[Tle]:
    """Parse 2-line or 3-line (named) TLE records from text."""
    lines = [ln.rstrip() for ln in text.splitlines() if ln.strip()]
    out: list[Tle] = []
    i = 0
    while i < len(lines):
        if lines[i].startswith("1 ") and i + 1 < len(lines):
            out.append(parse_tle(lines[i], lines[i + 1]))
            i += 2
        elif i + 2 < len(lines) and lines[i + 1].startswith("1 "):
            name = lines[i][2:].strip() if lines[i].startswith("0 ") else lines[i].strip()
            out.append(parse_tle(lines[i + 1], lines[i + 2], name=name))
            i += 3
        else:
            raise TleError("format", f"unexpected line {lines[i]!r}")
    return out


def read_tle_file(path: str | Path) -> list[Tle]:
    return parse_tle_text(Path(path).read_text())


@dataclass(frozen=True)
class OrbitElements:
    """Osculating Keplerian elements; angles in degrees, ``a`` in km."""

    a: float
    e: float
    i: float
    raan: float
    argp: float
    nu: float

    def __post_init__(self):
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity {self.e} outside [0, 1)")
        if self.a * (1.0 - self.e) <= env.R_EARTH:
            raise ValueError(f"perigee radius {self.a * (1 - self.e):.1f} km is below the surface")

    @property
    def period(self) -> float:
        return 2.0 * math.pi * math.sqrt(self.a ** 3 / env.MU_EARTH)

    @property
    def perigee_altitude(self) -> float:
        return self.a * (1.0 - self.e) - env.R_EARTH

    @property
    def apogee_altitude(self) -> float:
        return self.a * (1.0 + self.e) - env.R_EARTH


@dataclass(frozen=True)
class OrbitState:
    r: np.ndarray  # km, ECI
    v: np.ndarray  # km/s, ECI

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "OrbitState":
        return cls(np.array(x[:3], dtype=float), np.array(x[3:6], dtype=float))

    @property
    def energy(self) -> float:
        return 0.5 * float(self.v @ self.v) - env.MU_EARTH / float(np.linalg.norm(self.r))

    @property
    def angular_momentum(self) -> np.ndarray:
        return np.cross(self.r, self.v)


@dataclass(frozen=True)
class PerturbationSwitches:
    j2: bool = True
    drag: bool = True
    srp: bool = True
    third_body: bool = True

    @classmethod
    def none(cls) -> "PerturbationSwitches":
        return cls(False, False, False, False)


def solve_kepler(M: float, e: float, tol: float = 1e-14, max_iter: int = 50) -> float:
    """Eccentric anomaly [rad] from mean anomaly [rad] by Newton iteration."""
    M = math.remainder(M, 2.0 * math.pi)
    E = M if e < 0.8 else math.pi
    for _ in range(max_iter):
        dE = (E - e * math.sin(E) - M) / (1.0 - e * math.cos(E))
        E -= dE
        if abs(dE) < tol:
            return E
    raise KeplerError(f"Kepler iteration did not converge (M={M}, e={e})")


def true_from_mean(M_deg: float, e: float) -> float:
    E = solve_kepler(math.radians(M_deg), e)
    nu = 2.0 * math.atan2(math.sqrt(1.0 + e) * math.sin(0.5 * E), math.sqrt(1.0 - e) * math.cos(0.5 * E))
    return math.degrees(nu) % 360.0


def elements_from_tle(tle: Tle) -> OrbitElements:
    n = tle.mean_motion * 2.0 * math.pi / env.SECONDS_PER_DAY
    a = (env.MU_EARTH / n ** 2) ** (1.0 / 3.0)
    return OrbitElements(
        a=a,
        e=tle.eccentricity,
        i=tle.inclination,
        raan=tle.raan,
        argp=tle.arg_perigee,
        nu=true_from_mean(tle.mean_anomaly, tle.eccentricity),
    )


def _perifocal_to_eci(raan: float, inc: float, argp: float) -> np.ndarray:
    cO, sO = math.cos(raan), math.sin(raan)
    ci, si = math.cos(inc), math.sin(inc)
    cw, sw = math.cos(argp), math.sin(argp)
    return np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])


def elements_to_state(el: OrbitElements, mu: float = env.MU_EARTH) -> OrbitState:
    p = el.a * (1.0 - el.e ** 2)
    nu = math.radians(el.nu)
    r_pf = p / (1.0 + el.e * math.cos(nu)) * np.array([math.cos(nu), math.sin(nu), 0.0])
    v_pf = math.sqrt(mu / p) * np.array([-math.sin(nu), el.e + math.cos(nu), 0.0])
    Q = _perifocal_to_eci(math.radians(el.raan), math.radians(el.i), math.radians(el.argp))
    return OrbitState(Q @ r_pf, Q @ v_pf)


def state_to_elements(state: OrbitState, mu: float = env.MU_EARTH) -> OrbitElements:
    """Osculating elements. For circular orbits ``argp`` is 0 and ``nu`` is the
    argument of latitude; for equatorial orbits ``raan`` is 0."""
    r, v = np.asarray(state.r, float), np.asarray(state.v, float)
    rn, vn2 = np.linalg.norm(r), v @ v
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    node = np.array([-h[1], h[0], 0.0])
    nn = np.linalg.norm(node)
    e_vec = ((vn2 - mu / rn) * r - (r @ v) * v) / mu
    e = float(np.linalg.norm(e_vec))
    a = 1.0 / (2.0 / rn - vn2 / mu)
    inc = math.acos(max(-1.0, min(1.0, h[2] / hn)))
    eps = 1e-11
    raan = math.atan2(node[1], node[0]) if nn > eps * hn else 0.0
    n_hat = node / nn if nn > eps * hn else np.array([1.0, 0.0, 0.0])
    # in-plane axes: n_hat and h_hat x n_hat
    m_hat = np.cross(h / hn, n_hat)
    if e > eps:
        argp = math.atan2(e_vec @ m_hat, e_vec @ n_hat)
        p_hat = e_vec / e
        q_hat = np.cross(h / hn, p_hat)
        nu = math.atan2(r @ q_hat, r @ p_hat)
    else:
        argp = 0.0
        nu = math.atan2(r @ m_hat, r @ n_hat)
    return OrbitElements(a, e, math.degrees(inc), math.degrees(raan) % 360.0,
                         math.degrees(argp) % 360.0, math.degrees(nu) % 360.0)


def accel_j2(r: np.ndarray, mu: float = env.MU_EARTH, j2: float = env.J2, re: float = env.R_EARTH) -> np.ndarray:
    """Oblateness acceleration [km/s^2]."""
    x, y, z = r
    r2 = x * x + y * y + z * z
    rn = math.sqrt(r2)
    k = 1.5 * j2 * mu * re * re / (r2 * r2 * rn)
    f = 5.0 * z * z / r2
    return np.array([k * x * (f - 1.0), k * y * (f - 1.0), k * z * (f - 3.0)])


def relative_velocity(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Velocity relative to an atmosphere co-rotating with the Earth [km/s]."""
    w = env.OMEGA_EARTH
    return np.array([v[0] + w * r[1], v[1] - w * r[0], v[2]])


def accel_drag(r: np.ndarray, v: np.ndarray, projected_area: float, cd: float = DEFAULT_CD,
               mass: float = DEFAULT_MASS, table: env.AtmosphereTable | None = None) -> np.ndarray:
    """Aerodynamic drag [km/s^2] with a co-rotating atmosphere.

    Raises:
        environment.AtmosphereRangeError: altitude outside the density table.
    """
    h = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]) - env.R_EARTH
    rho = env.atmosphere_density(h, table)
    if projected_area == 0.0:
        return np.zeros(3)
    vr = relative_velocity(r, v)
    vrn = math.sqrt(vr[0] * vr[0] + vr[1] * vr[1] + vr[2] * vr[2])
    # rho [kg/m^3] * (km/s -> m/s)^2 / 1000 (m -> km)  ==  rho * 1000 * |v| v
    return -0.5 * rho * 1000.0 * vrn * vr * (cd * projected_area / mass)


def accel_srp(r: np.ndarray, e_sun: np.ndarray, projected_area: float, cr: float = DEFAULT_CR,
              mass: float = DEFAULT_MASS, in_eclipse: bool = False,
              const: env.PhysicalConstants = env.CONSTANTS) -> np.ndarray:
    """Solar radiation pressure [km/s^2], flux taken at 1 AU, zero in eclipse."""
    if in_eclipse or projected_area == 0.0:
        return np.zeros(3)
    return -(const.solar_pressure * cr * projected_area / mass / 1000.0) * np.asarray(e_sun, float)


def accel_third_body(r: np.ndarray, r_moon: np.ndarray, mu_moon: float = env.MU_MOON) -> np.ndarray:
    """Lunar tidal acceleration: direct term minus the indirect (Earth) term [km/s^2]."""
    d = r_moon - r
    dn = np.linalg.norm(d)
    mn = np.linalg.norm(r_moon)
    return mu_moon * (d / dn ** 3 - r_moon / mn ** 3)


# (t, unit direction in ECI) -> projected area [m^2]
AreaProvider = Callable[[float, np.ndarray], float]


def constant_area(area: float = DEFAULT_AREA) -> AreaProvider:
    return lambda t, u: area


class OrbitPropagator:
    """RK4 integrator for ``r'' = -mu r/|r|^3 + a_p`` with switchable perturbations.

    Sun direction, Moon position, eclipse state and projected areas are
    frozen over each step (evaluated at the step start).
    """

    def __init__(self, switches: PerturbationSwitches = PerturbationSwitches(),
                 epoch: datetime = env.J2000, area_provider: AreaProvider | None = None,
                 mass: float = DEFAULT_MASS, cd: float = DEFAULT_CD, cr: float = DEFAULT_CR,
                 atmosphere: env.AtmosphereTable | None = None):
        self.switches = switches
        self.epoch = epoch
        self.area_provider = area_provider or constant_area()
        self.mass, self.cd, self.cr = mass, cd, cr
        self.atmosphere = atmosphere
        self.last_eclipse = False

    def _frozen_terms(self, t: float, r: np.ndarray, v: np.ndarray):
        sw = self.switches
        et = env.EpochTime(t, self.epoch)
        e_sun = env.sun_direction(et)
        shadow = env.eclipse(r, e_sun)
        self.last_eclipse = shadow
        a_const = np.zeros(3)
        if sw.srp and not shadow:
            a_const = a_const + accel_srp(r, e_sun, self.area_provider(t, e_sun), self.cr, self.mass, shadow)
        r_moon = env.moon_position(et) if sw.third_body else None
        drag_area = 0.0
        if sw.drag:
            vr = relative_velocity(r, v)
            drag_area = self.area_provider(t, vr / np.linalg.norm(vr))
        return a_const, r_moon, drag_area

    def acceleration(self, t: float, r: np.ndarray, v: np.ndarray, frozen=None) -> np.ndarray:
        if frozen is None:
            frozen = self._frozen_terms(t, r, v)
        a_const, r_moon, drag_area = frozen
        rn = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
        if rn <= env.R_EARTH:
            raise PropagationError(f"trajectory below the surface (|r|={rn:.1f} km)", t)
        a = -env.MU_EARTH / rn ** 3 * r + a_const
        sw = self.switches
        if sw.j2:
            a = a + accel_j2(r)
        if sw.drag:
            try:
                a = a + accel_drag(r, v, drag_area, self.cd, self.mass, self.atmosphere)
            except env.AtmosphereRangeError as exc:
                raise PropagationError(str(exc), t) from exc
        if sw.third_body:
            a = a + accel_third_body(r, r_moon)
        return a

    def step(self, t: float, x: np.ndarray, dt: float) -> np.ndarray:
        """Advance the 6-vector ``[r, v]`` by ``dt`` seconds."""
        frozen = self._frozen_terms(t, x[:3], x[3:])

        def rhs(tt, xx):
            return np.concatenate([xx[3:], self.acceleration(tt, xx[:3], xx[3:], frozen)])

        return rk4_step(rhs, t, x, dt)


@dataclass
class OrbitTrajectory:
    t: np.ndarray
    states: np.ndarray      # (N, 6)
    eclipse: np.ndarray     # (N,) bool

    def state(self, k: int) -> OrbitState:
        return OrbitState.from_vector(self.states[k])


def propagate(x0: OrbitState, switches: PerturbationSwitches = PerturbationSwitches(),
              area_provider: AreaProvider | None = None, dt: float = 1.0, t_end: float = 0.0,
              epoch: datetime = env.J2000, mass: float = DEFAULT_MASS, cd: float = DEFAULT_CD,
              cr: float = DEFAULT_CR, atmosphere: env.AtmosphereTable | None = None) -> OrbitTrajectory:
    """Integrate from ``t=0`` to ``t_end`` at fixed step ``dt``; the last step is shortened to land on ``t_end``.

    Raises:
        PropagationError: on subsurface trajectories or leaving the atmosphere table (drag on).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    prop = OrbitPropagator(switches, epoch, area_provider, mass, cd, cr, atmosphere)
    n = int(math.ceil(t_end / dt - 1e-9))
    ts = np.empty(n + 1)
    xs = np.empty((n + 1, 6))
    ecl = np.zeros(n + 1, dtype=bool)
    x = x0.as_vector().astype(float)
    t = 0.0
    ts[0], xs[0] = t, x
    ecl[0] = env.eclipse(x[:3], env.sun_direction(env.EpochTime(0.0, epoch)))
    for k in range(1, n + 1):
        h = min(dt, t_end - t)
        x = prop.step(t, x, h)
        t = k * dt if k < n else t_end
        ts[k], xs[k] = t, x
        ecl[k] = env.eclipse(x[:3], env.sun_direction(env.EpochTime(t, epoch)))
    return OrbitTrajectory(ts, xs, ecl)


def write_orbit_csv(path: str | Path, traj: OrbitTrajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "rx", "ry", "rz", "vx", "vy", "vz", "eclipse_flag"])
        for t, x, e in zip(traj.t, traj.states, traj.eclipse):
            w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [int(e)])


def nodal_crossings(traj: OrbitTrajectory) -> list[tuple[float, np.ndarray]]:
    """Ascending-node crossings (z from - to +), linearly interpolated in time and state."""
    z = traj.states[:, 2]
    out = []
    for k in range(len(z) - 1):
        if z[k] < 0.0 <= z[k + 1]:
            f = -z[k] / (z[k + 1] - z[k])
            t = traj.t[k] + f * (traj.t[k + 1] - traj.t[k])
            x = traj.states[k] + f * (traj.states[k + 1] - traj.states[k])
            out.append((t, x))
    return out


def initial_state_from_tles(tles: Iterable[Tle]) -> tuple[OrbitState, datetime]:
    tle = next(iter(tles))
    return elements_to_state(elements_from_tle(tle)), tle.epoch
