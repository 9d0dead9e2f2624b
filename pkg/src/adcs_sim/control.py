"""Control laws: magnetic detumbling, Lyapunov slew/tracking with reaction-wheel
allocation, and magnetic wheel desaturation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mathcore import cross, quat_to_dcm, rotation_angle, skew, unit, vee

DEG = math.pi / 180.0


@dataclass(frozen=True)
class ActuatorLimits:
    M_max: float = 2e-3          # N m, wheel torque per axis
    h_max: float = 30e-3         # N m s, wheel momentum per axis
    rotor_inertia: float = 5.12e-5  # kg m^2, recorded only
    m_max: float = 0.12          # A m^2, magnetorquer dipole per axis

    def __post_init__(self):
        for name in ("M_max", "h_max", "rotor_inertia", "m_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"actuator limit {name} must be positive")


@dataclass(frozen=True)
class ControlGains:
    k_w: float = 0.01            # N m s/rad
    k_A: float = 0.0004          # N m
    k_det: float = 0.0           # N m s/rad; 0 means "compute from the orbit"
    detumble_threshold: float = 1.0 * DEG   # rad/s, bang-bang above, B-dot below

    def __post_init__(self):
        if not (self.k_w > 0 and self.k_A > 0):
            raise ValueError("k_w and k_A must be positive")
        if self.k_det < 0 or self.detumble_threshold <= 0:
            raise ValueError("k_det must be >= 0 and the detumble threshold positive")


@dataclass
class WheelState:
    """Stored wheel momenta and the distribution matrix (columns are spin axes)."""

    h: np.ndarray = field(default_factory=lambda: np.zeros(3))
    A_dist: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.A_dist = np.asarray(self.A_dist, dtype=float)
        self.A_pinv = np.linalg.pinv(self.A_dist)

    @property
    def body_momentum(self) -> np.ndarray:
        return self.A_dist @ self.h


@dataclass
class AllocationResult:
    h_dot: np.ndarray
    torque: np.ndarray          # realized torque on the body
    saturated: bool             # a torque or momentum clamp was active


@dataclass
class TargetSpec:
    name: str
    direction: np.ndarray       # inertial unit vector
    w_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w_d_dot: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.direction = unit(np.asarray(self.direction, dtype=float))
        self.q_d = target_quaternion(self.direction)
        self.A_d = quat_to_dcm(self.q_d)


def sign0(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with ``sign(0) = 0``."""
    return np.sign(x)


def compute_k_det(T_orb: float, xi_m: float, J: np.ndarray) -> float:
    """Detumbling gain ``4 pi / T_orb * (1 + sin xi_m) * J_min``."""
    if not T_orb > 0:
        raise ValueError("orbital period must be positive")
    return 4.0 * math.pi / T_orb * (1.0 + math.sin(xi_m)) * float(np.linalg.eigvalsh(J)[0])


def geomagnetic_inclination(h_orbit: np.ndarray, dipole_axis: np.ndarray) -> float:
    """Angle [rad] between the orbit plane and the geomagnetic equator, in [0, pi/2]."""
    c = abs(float(unit(h_orbit) @ unit(dipole_axis)))
    return math.acos(min(1.0, c))


def detumble_command(w: np.ndarray, B_body: np.ndarray, b_dot: np.ndarray,
                     gains: ControlGains, limits: ActuatorLimits, rate_valid: bool = True) -> np.ndarray:
    """Magnetorquer dipole [A m^2] for detumbling.

    Above ``gains.detumble_threshold`` this is bang-bang on the field-direction
    rate, ``-m_max sign(b_dot)``. Below it the dipole ``k_det/|B| (w x b)``
    produces the torque ``-k_det (b x w) x b`` and is clamped per axis. With no
    valid rate estimate the bang-bang branch is used.
    """
    nB = math.sqrt(B_body @ B_body)
    if nB == 0.0:
        return np.zeros(3)
    if not rate_valid or math.sqrt(w @ w) >= gains.detumble_threshold:
        return -limits.m_max * sign0(b_dot)
    m = (gains.k_det / nB) * cross(w, B_body / nB)
    return np.clip(m, -limits.m_max, limits.m_max)


def tracking_torque(w: np.ndarray, A_e: np.ndarray, target: TargetSpec, J: np.ndarray,
                    gains: ControlGains) -> np.ndarray:
    """Lyapunov tracking law.

    ``L = -k_w w_e + w x (J w) + J (A_e w_d_dot - [w_e x] A_e w_d) - k_A vee(A_e^T - A_e)``
    with ``w_e = w - A_e w_d``.
    """
    w_e = w - A_e @ target.w_d
    ff = J @ (A_e @ target.w_d_dot - skew(w_e) @ (A_e @ target.w_d))
    return -gains.k_w * w_e + cross(w, J @ w) + ff - gains.k_A * vee(A_e.T - A_e)


def lyapunov_value(w_e: np.ndarray, A_e: np.ndarray, J: np.ndarray, k_A: float) -> float:
    """``V = 0.5 w_e^T J w_e + k_A tr(I - A_e)``."""
    return 0.5 * float(w_e @ J @ w_e) + k_A * (3.0 - float(np.trace(A_e)))


def wheel_allocation(L_desired: np.ndarray, w: np.ndarray, wheels: WheelState, dt: float,
                     limits: ActuatorLimits, h_dot_extra: np.ndarray | None = None) -> AllocationResult:
    """Wheel momentum rate realizing ``L_desired`` within torque and momentum limits.

    ``h_dot = -A* (L + w x A h)`` is clamped to ``M_max`` per axis, and further so
    that one step of ``dt`` keeps ``|h| <= h_max``. ``h_dot_extra`` (for example a
    desaturation term) is added before clamping. The realized body torque is
    ``-A h_dot - w x A h``. ``wheels.h`` is not modified; the caller integrates it
    together with the body.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    h_body = wheels.A_dist @ wheels.h
    h_dot = -wheels.A_pinv @ (L_desired + cross(w, h_body))
    if h_dot_extra is not None:
        h_dot = h_dot + h_dot_extra
    clamped = np.clip(h_dot, -limits.M_max, limits.M_max)
    # momentum headroom for this step
    hi = (limits.h_max - wheels.h) / dt
    lo = (-limits.h_max - wheels.h) / dt
    clamped = np.minimum(np.maximum(clamped, lo), hi)
    saturated = bool(np.any(np.abs(clamped - h_dot) > 1e-15))
    torque = -wheels.A_dist @ clamped - cross(w, h_body)
    return AllocationResult(clamped, torque, saturated)


def desaturation_command(wheels: WheelState, B_body: np.ndarray,
                         limits: ActuatorLimits) -> tuple[np.ndarray, np.ndarray]:
    """Momentum-dump commands ``(T_rw, m_des)``.

    ``T_rw = -M_max sign(h)`` and ``m_des = M_max (sign(h) x b) / |B|`` clamped
    per axis to ``m_max``. A zero field defers the dump (zero commands).
    """
    nB = math.sqrt(B_body @ B_body)
    if nB == 0.0:
        return np.zeros(3), np.zeros(3)
    s = sign0(wheels.h)
    T_rw = -limits.M_max * s
    m = limits.M_max * cross(s, B_body / nB) / nB
    return T_rw, np.clip(m, -limits.m_max, limits.m_max)


def target_quaternion(d: np.ndarray) -> np.ndarray:
    """Quaternion whose attitude points body +x along the inertial unit vector ``d``.

    ``q_d = [u sin(psi/2), cos(psi/2)]`` with ``u = (i x d)/|i x d|`` and
    ``psi = acos(i . d)``, evaluated as ``atan2(|i x d|, i . d)`` to keep precision
    near 0 and pi. For ``d = -i`` the rotation is 180 degrees about +z.
    """
    d = unit(np.asarray(d, dtype=float))
    i_hat = np.array([1.0, 0.0, 0.0])
    c = cross(i_hat, d)
    nc = math.sqrt(c @ c)
    psi = math.atan2(nc, float(d[0]))
    if nc < 1e-15:
        if d[0] > 0:
            return np.array([0.0, 0.0, 0.0, 1.0])
        return np.array([0.0, 0.0, 1.0, 0.0])
    u = c / nc
    s = math.sin(0.5 * psi)
    return np.array([u[0] * s, u[1] * s, u[2] * s, math.cos(0.5 * psi)])


def attitude_error(A_bn: np.ndarray, A_d: np.ndarray) -> np.ndarray:
    return A_bn @ A_d.T


def pointing_error(A_e: np.ndarray) -> float:
    """Rotation angle ``acos((tr A_e - 1)/2)`` in [0, pi], via :func:`rotation_angle`."""
    return rotation_angle(A_e)


class BdotEstimator:
    """Backward difference of the measured unit field vector, first-order filtered."""

    def __init__(self, cutoff: float = 5.0):
        self.cutoff = cutoff
        self.b_prev: np.ndarray | None = None
        self.t_prev: float | None = None
        self.value = np.zeros(3)

    def reset(self) -> None:
        self.b_prev = None
        self.t_prev = None
        self.value = np.zeros(3)

    def update(self, t: float, B_body: np.ndarray) -> np.ndarray:
        nB = math.sqrt(B_body @ B_body)
        if nB == 0.0:
            return self.value
        b = B_body / nB
        if self.b_prev is not None:
            dt = t - self.t_prev
            raw = (b - self.b_prev) / dt
            aT = self.cutoff * dt
            self.value = (aT * (raw + self._raw_prev) - (aT - 2.0) * self.value) / (2.0 + aT)
            self._raw_prev = raw
        else:
            self._raw_prev = np.zeros(3)
        self.b_prev, self.t_prev = b, t
        return self.value


class DesaturationTrigger:
    """Hysteresis on stored momentum with a field-geometry gate."""

    def __init__(self, limits: ActuatorLimits, start_frac: float = 0.9, stop_frac: float = 0.2,
                 min_angle_deg: float = 45.0):
        if not 0.0 < stop_frac < start_frac <= 1.0:
            raise ValueError("desaturation thresholds must satisfy 0 < stop < start <= 1")
        self.limits = limits
        self.start = start_frac * limits.h_max
        self.stop = stop_frac * limits.h_max
        self.sin_min = math.sin(math.radians(min_angle_deg))
        self.active = False
        self.events = 0

    def update(self, h: np.ndarray) -> bool:
        peak = float(np.max(np.abs(h)))
        if not self.active and peak > self.start:
            self.active = True
            self.events += 1
        elif self.active and peak < self.stop:
            self.active = False
        return self.active

    def dump_allowed(self, h: np.ndarray, B_body: np.ndarray) -> bool:
        """Dump only while the field is far enough from the most loaded wheel axis."""
        nB = math.sqrt(B_body @ B_body)
        if nB == 0.0:
            return False
        axis = int(np.argmax(np.abs(h)))
        return math.sqrt(max(0.0, 1.0 - (B_body[axis] / nB) ** 2)) > self.sin_min
