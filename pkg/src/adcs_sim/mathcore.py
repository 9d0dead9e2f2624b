"""Quaternion and rotation-matrix algebra plus the fixed-step RK4 integrator.

Quaternions are stored scalar-LAST, ``q = [q1, q2, q3, q4]`` with ``q4`` the
scalar part. The attitude matrix ``A(q)`` maps inertial (ECI) components into
body components, so ``v_body = A(q) @ v_eci``.
"""
from __future__ import annotations

import logging
import math
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6


class NonFiniteError(FloatingPointError):
    """Raised when a state derivative or input contains NaN/inf."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross carries ~10 us of overhead for 3-vectors; this is the hot path.
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def unit(v: np.ndarray) -> np.ndarray:
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if n == 0.0:
        raise ZeroDivisionError("cannot normalize a zero vector")
    return np.asarray(v, dtype=float) / n


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ZeroDivisionError("cannot normalize a zero quaternion")
    return q / n


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_multiply(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Composition with ``A(quat_multiply(q, p)) == A(q) @ A(p)``."""
    q1, q2, q3, q4 = q
    p1, p2, p3, p4 = p
    return np.array([
        q4 * p1 + p4 * q1 - (q2 * p3 - q3 * p2),
        q4 * p2 + p4 * q2 - (q3 * p1 - q1 * p3),
        q4 * p3 + p4 * q3 - (q1 * p2 - q2 * p1),
        q4 * p4 - (q1 * p1 + q2 * p2 + q3 * p3),
    ])


def quat_to_dcm(q: np.ndarray) -> np.ndarray:
    """Attitude matrix of a scalar-last quaternion.

    A unit quaternion is expected; inputs off the unit sphere by more than
    ``NORM_TOLERANCE`` are renormalized and the event is logged.

    Returns:
        3x3 rotation taking ECI components to body components.
    """
    q1, q2, q3, q4 = q
    n2 = q1 * q1 + q2 * q2 + q3 * q3 + q4 * q4
    if abs(n2 - 1.0) > NORM_TOLERANCE:
        log.warning("quat_to_dcm: non-unit quaternion (norm=%.3g), renormalizing", math.sqrt(n2))
        s = 1.0 / math.sqrt(n2)
        q1, q2, q3, q4 = q1 * s, q2 * s, q3 * s, q4 * s
    return np.array([
        [q1 * q1 - q2 * q2 - q3 * q3 + q4 * q4, 2.0 * (q1 * q2 + q3 * q4), 2.0 * (q1 * q3 - q2 * q4)],
        [2.0 * (q1 * q2 - q3 * q4), -q1 * q1 + q2 * q2 - q3 * q3 + q4 * q4, 2.0 * (q2 * q3 + q1 * q4)],
        [2.0 * (q1 * q3 + q2 * q4), 2.0 * (q2 * q3 - q1 * q4), -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4],
    ])


def _canonical_sign(q: np.ndarray) -> np.ndarray:
    if q[3] > 0.0:
        return q
    if q[3] < 0.0:
        return -q
    for c in q[:3]:
        if c != 0.0:
            return q if c > 0.0 else -q
    return q


def dcm_to_quat(A: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_to_dcm` using Shepperd's branch selection.

    The returned quaternion has a non-negative scalar part; when the scalar part
    is exactly zero the first nonzero vector component is made positive.

    Raises:
        ValueError: if ``A`` is not a proper rotation within 1e-6.
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {A.shape}")
    ortho = np.abs(A.T @ A - np.eye(3)).max()
    if ortho > NORM_TOLERANCE or abs(np.linalg.det(A) - 1.0) > NORM_TOLERANCE:
        raise ValueError(f"matrix is not a rotation (orthogonality residual {ortho:.3g})")
    tr = A[0, 0] + A[1, 1] + A[2, 2]
    i = int(np.argmax([A[0, 0], A[1, 1], A[2, 2], tr]))
    if i == 3:
        q4 = 0.5 * math.sqrt(1.0 + tr)
        f = 0.25 / q4
        q = np.array([(A[1, 2] - A[2, 1]) * f, (A[2, 0] - A[0, 2]) * f, (A[0, 1] - A[1, 0]) * f, q4])
    elif i == 0:
        q1 = 0.5 * math.sqrt(max(0.0, 1.0 + 2.0 * A[0, 0] - tr))
        f = 0.25 / q1
        q = np.array([q1, (A[0, 1] + A[1, 0]) * f, (A[0, 2] + A[2, 0]) * f, (A[1, 2] - A[2, 1]) * f])
    elif i == 1:
        q2 = 0.5 * math.sqrt(max(0.0, 1.0 + 2.0 * A[1, 1] - tr))
        f = 0.25 / q2
        q = np.array([(A[0, 1] + A[1, 0]) * f, q2, (A[1, 2] + A[2, 1]) * f, (A[2, 0] - A[0, 2]) * f])
    else:
        q3 = 0.5 * math.sqrt(max(0.0, 1.0 + 2.0 * A[2, 2] - tr))
        f = 0.25 / q3
        q = np.array([(A[0, 2] + A[2, 0]) * f, (A[1, 2] + A[2, 1]) * f, q3, (A[0, 1] - A[1, 0]) * f])
    return _canonical_sign(q / np.linalg.norm(q))


def axis_angle_to_dcm(axis: np.ndarray, angle: float) -> np.ndarray:
    """Attitude matrix of a frame rotated by ``angle`` about ``axis``."""
    e = unit(np.asarray(axis, dtype=float))
    c, s = math.cos(angle), math.sin(angle)
    return c * np.eye(3) + (1.0 - c) * np.outer(e, e) - s * skew(e)


def rotate_vector(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Actively rotate ``v`` by ``angle`` about the unit ``axis`` (Rodrigues)."""
    c, s = math.cos(angle), math.sin(angle)
    return v * c + cross(axis, v) * s + axis * (np.dot(axis, v) * (1.0 - c))


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix, ``skew(w) @ v == w x v``."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(P: np.ndarray) -> np.ndarray:
    """``[P32, P13, P21]`` of any 3x3 matrix (inverse of :func:`skew` on skew matrices)."""
    return np.array([P[2, 1], P[0, 2], P[1, 0]])


def xi_matrix(q: np.ndarray) -> np.ndarray:
    """4x3 matrix with ``dq/dt = 0.5 * xi_matrix(q) @ w``."""
    q1, q2, q3, q4 = q
    return np.array([
        [q4, -q3, q2],
        [q3, q4, -q1],
        [-q2, q1, q4],
        [-q1, -q2, -q3],
    ])


def u_matrix(w: np.ndarray) -> np.ndarray:
    """4x4 antisymmetric matrix with ``dq/dt = 0.5 * u_matrix(w) @ q``."""
    w1, w2, w3 = w
    return np.array([
        [0.0, w3, -w2, w1],
        [-w3, 0.0, w1, w2],
        [w2, -w1, 0.0, w3],
        [-w1, -w2, -w3, 0.0],
    ])


def rotation_angle(A: np.ndarray) -> float:
    """Principal rotation angle of a rotation matrix, in [0, pi].

    Equal to ``acos((tr A - 1)/2)``; evaluated with ``atan2`` so it stays
    accurate near 0 and pi.
    """
    c = 0.5 * (A[0, 0] + A[1, 1] + A[2, 2] - 1.0)
    s = 0.5 * math.sqrt((A[2, 1] - A[1, 2]) ** 2 + (A[0, 2] - A[2, 0]) ** 2 + (A[1, 0] - A[0, 1]) ** 2)
    return math.atan2(s, c)


def _check_finite(k: np.ndarray, stage: int) -> None:
    if not np.isfinite(k).all():
        idx = int(np.flatnonzero(~np.isfinite(k))[0])
        raise NonFiniteError(f"non-finite derivative at component {idx} (RK4 stage {stage})", idx)


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of ``dx/dt = f(t, x)``.

    Raises:
        ValueError: if ``dt`` is not positive.
        NonFiniteError: if any stage derivative is NaN/inf; ``.index`` names the component.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    h2 = 0.5 * dt
    k1 = f(t, x)
    _check_finite(k1, 1)
    k2 = f(t + h2, x + h2 * k1)
    _check_finite(k2, 2)
    k3 = f(t + h2, x + h2 * k2)
    _check_finite(k3, 3)
    k4 = f(t + dt, x + dt * k3)
    _check_finite(k4, 4)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
