"""Rigid-body attitude dynamics, disturbance torques and the spacecraft model."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import environment as env
from .mathcore import NonFiniteError, cross, quat_to_dcm, rk4_step, u_matrix
from .orbit import relative_velocity

BRITE_INERTIA = np.array([
    [0.0465, -0.0007, 0.0004],
    [-0.0007, 0.0486, -0.0021],
    [0.0004, -0.0021, 0.0482],
])
CUBE_EDGE = 0.20  # m
DEFAULT_CM_OFFSET = (0.01, -0.01, 0.01)  # m, centre of mass relative to the geometric centre


@dataclass(frozen=True)
class Face:
    normal: np.ndarray     # outward unit normal, body frame
    area: float            # m^2
    centroid: np.ndarray   # centre of pressure relative to the centre of mass, m


def cube_faces(edge: float = CUBE_EDGE, cm_offset=DEFAULT_CM_OFFSET) -> list[Face]:
    faces = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            n = np.zeros(3)
            n[axis] = sign
            faces.append(Face(n, edge * edge, 0.5 * edge * n - np.asarray(cm_offset, float)))
    return faces


@dataclass
class SpacecraftProperties:
    J: np.ndarray = field(default_factory=lambda: BRITE_INERTIA.copy())
    mass: float = 7.0
    faces: list[Face] = field(default_factory=cube_faces)
    cd: float = 2.6
    cr: float = 1.5
    residual_dipole: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.001]))

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        self.residual_dipole = np.asarray(self.residual_dipole, dtype=float)
        if self.J.shape != (3, 3):
            raise ValueError("inertia tensor must be 3x3")
        if np.abs(self.J - self.J.T).max() > 1e-12:
            raise ValueError("inertia tensor must be symmetric")
        if np.linalg.eigvalsh(self.J).min() <= 0:
            raise ValueError("inertia tensor must be positive definite")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        self.J_inv = np.linalg.inv(self.J)
        self._normals = np.array([f.normal for f in self.faces], dtype=float).reshape(-1, 3)
        self._areas = np.array([f.area for f in self.faces], dtype=float)
        self._centroids = np.array([f.centroid for f in self.faces], dtype=float).reshape(-1, 3)

    @property
    def j_min(self) -> float:
        return float(np.linalg.eigvalsh(self.J)[0])

    def projected_area(self, u_body: np.ndarray) -> float:
        """Area seen from direction ``u_body`` (unit, body frame)."""
        c = self._normals @ u_body
        return float(np.sum(self._areas * np.clip(c, 0.0, None)))

    @classmethod
    def from_dict(cls, data: dict) -> "SpacecraftProperties":
        data = dict(data)
        kwargs = {}
        if "J" in data:
            kwargs["J"] = np.array(data.pop("J"), dtype=float)
        if "faces" in data:
            kwargs["faces"] = [
                Face(np.asarray(f["normal"], float), float(f["area"]), np.asarray(f["centroid"], float))
                for f in data.pop("faces")
            ]
        if "residual_dipole" in data:
            kwargs["residual_dipole"] = np.array(data.pop("residual_dipole"), dtype=float)
        for key in ("mass", "cd", "cr"):
            if key in data:
                kwargs[key] = float(data.pop(key))
        if data:
            raise ValueError(f"unknown spacecraft property keys: {sorted(data)}")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "SpacecraftProperties":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "J": self.J.tolist(),
            "mass": self.mass,
            "faces": [{"normal": f.normal.tolist(), "area": f.area, "centroid": f.centroid.tolist()}
                      for f in self.faces],
            "cd": self.cd,
            "cr": self.cr,
            "residual_dipole": self.residual_dipole.tolist(),
        }


@dataclass
class AttitudeState:
    q: np.ndarray   # scalar-last, ECI -> body
    w: np.ndarray   # rad/s, body frame

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-9:
            raise ValueError("attitude quaternion must be unit norm")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.w])


@dataclass(frozen=True)
class DisturbanceSwitches:
    gravity_gradient: bool = True
    aero: bool = True
    srp: bool = True
    magnetic: bool = True


def torque_gravity_gradient(q: np.ndarray, r: np.ndarray, J: np.ndarray, A: np.ndarray | None = None) -> np.ndarray:
    """``3 mu/|r|^3 * n x (J n)`` with ``n`` the nadir direction in body axes [N m]."""
    if A is None:
        A = quat_to_dcm(q)
    rn = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    n = A @ (-r / rn)
    return (3.0 * env.MU_EARTH / rn ** 3) * cross(n, J @ n)


def torque_aero(q: np.ndarray, r: np.ndarray, v: np.ndarray, props: SpacecraftProperties,
                A: np.ndarray | None = None, table: env.AtmosphereTable | None = None) -> np.ndarray:
    """Drag torque summed over the faces exposed to the flow (absorption model) [N m]."""
    if A is None:
        A = quat_to_dcm(q)
    h = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]) - env.R_EARTH
    rho = env.atmosphere_density(h, table)
    vr = relative_velocity(r, v) * 1000.0
    speed = math.sqrt(vr @ vr)
    u = A @ (vr / speed)
    cosines = props._normals @ u
    lit = cosines > 0.0
    if not lit.any():
        return np.zeros(3)
    # force on face i: -q_dyn * Cd * A_i * cos_i * u
    mags = 0.5 * rho * speed * speed * props.cd * props._areas[lit] * cosines[lit]
    lever = (mags[:, None] * props._centroids[lit]).sum(axis=0)
    return -cross(lever, u)


def torque_srp(q: np.ndarray, r: np.ndarray, e_sun: np.ndarray, in_eclipse: bool,
               props: SpacecraftProperties, A: np.ndarray | None = None,
               const: env.PhysicalConstants = env.CONSTANTS) -> np.ndarray:
    """Solar radiation pressure torque over sunlit faces, zero in eclipse [N m]."""
    if in_eclipse:
        return np.zeros(3)
    if A is None:
        A = quat_to_dcm(q)
    s = A @ e_sun
    cosines = props._normals @ s
    lit = cosines > 0.0
    if not lit.any():
        return np.zeros(3)
    mags = const.solar_pressure * props.cr * props._areas[lit] * cosines[lit]
    lever = (mags[:, None] * props._centroids[lit]).sum(axis=0)
    return -cross(lever, s)


def torque_magnetic(q: np.ndarray, B_eci: np.ndarray, m_total: np.ndarray, A: np.ndarray | None = None) -> np.ndarray:
    """``m x B_body`` for the total (commanded + residual) dipole [N m]."""
    if A is None:
        A = quat_to_dcm(q)
    return cross(m_total, A @ B_eci)


def attitude_rhs(x: np.ndarray, L: np.ndarray, Md: np.ndarray, J: np.ndarray,
                 J_inv: np.ndarray | None = None) -> np.ndarray:
    """Derivative of ``[q, w]``: ``J w' = (J w) x w + Md + L`` and ``q' = U(w) q / 2``."""
    q, w = x[:4], x[4:7]
    if J_inv is None:
        J_inv = np.linalg.inv(J)
    w_dot = J_inv @ (cross(J @ w, w) + Md + L)
    q_dot = 0.5 * (u_matrix(w) @ q)
    return np.concatenate([q_dot, w_dot])


def _require_finite(v: np.ndarray, name: str) -> None:
    if not np.isfinite(v).all():
        idx = int(np.flatnonzero(~np.isfinite(v))[0])
        raise NonFiniteError(f"non-finite {name} component {idx}", idx)


def step_attitude(state: AttitudeState, L: np.ndarray, Md: np.ndarray, J: np.ndarray, dt: float,
                  J_inv: np.ndarray | None = None) -> AttitudeState:
    """One RK4 step with torques held constant; the quaternion is renormalized."""
    L = np.asarray(L, float)
    Md = np.asarray(Md, float)
    _require_finite(L, "control torque")
    _require_finite(Md, "disturbance torque")
    if J_inv is None:
        J_inv = np.linalg.inv(J)
    x = rk4_step(lambda t, y: attitude_rhs(y, L, Md, J, J_inv), 0.0, state.as_vector(), dt)
    q = x[:4] / np.linalg.norm(x[:4])
    return AttitudeState(q, x[4:7])


def wheel_coupled_rhs(x: np.ndarray, h_dot: np.ndarray, M_ext: np.ndarray, J: np.ndarray,
                      J_inv: np.ndarray) -> np.ndarray:
    """Derivative of ``[q, w, h_rw]`` for three orthogonal wheels.

    The wheels act on the body with ``L = -h_dot - w x h_rw``; the wheel momentum
    rate ``h_dot`` is held constant over the step.
    """
    q, w, h = x[:4], x[4:7], x[7:10]
    L = -h_dot - cross(w, h)
    w_dot = J_inv @ (cross(J @ w, w) + M_ext + L)
    q_dot = 0.5 * (u_matrix(w) @ q)
    return np.concatenate([q_dot, w_dot, h_dot])


def step_wheel_coupled(q: np.ndarray, w: np.ndarray, h: np.ndarray, h_dot: np.ndarray, M_ext: np.ndarray,
                       J: np.ndarray, J_inv: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    _require_finite(h_dot, "wheel torque")
    _require_finite(M_ext, "external torque")
    x0 = np.concatenate([q, w, h])
    x = rk4_step(lambda t, y: wheel_coupled_rhs(y, h_dot, M_ext, J, J_inv), 0.0, x0, dt)
    return x[:4] / np.linalg.norm(x[:4]), x[4:7], x[7:10]


def inertial_momentum(q: np.ndarray, w: np.ndarray, J: np.ndarray, h_rw: np.ndarray | None = None) -> np.ndarray:
    """Total angular momentum expressed in ECI."""
    h_body = J @ w if h_rw is None else J @ w + h_rw
    return quat_to_dcm(q).T @ h_body
