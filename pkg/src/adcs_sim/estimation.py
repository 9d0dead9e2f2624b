"""Static attitude determination, finite-difference rate reconstruction and
low-pass filtering."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mathcore import _canonical_sign, cross, dcm_to_quat, quat_to_dcm, rotation_angle, vee, xi_matrix

log = logging.getLogger(__name__)


class DegenerateGeometryError(ValueError):
    pass


class AmbiguousAttitudeError(ValueError):
    pass


def _triad_frame(v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    t1 = v1 / np.linalg.norm(v1)
    c = cross(v1, v2)
    nc = np.linalg.norm(c)
    if nc < 1e-6 * np.linalg.norm(v1) * np.linalg.norm(v2):
        raise DegenerateGeometryError("TRIAD reference vectors are (nearly) parallel")
    t2 = c / nc
    return np.column_stack([t1, t2, cross(t1, t2)])


def triad(v1_body: np.ndarray, v2_body: np.ndarray, v1_eci: np.ndarray, v2_eci: np.ndarray) -> np.ndarray:
    """Attitude matrix (ECI to body) from two vector pairs; the first pair is the anchor.

    Raises:
        DegenerateGeometryError: if either pair is nearly parallel.
    """
    return _triad_frame(v1_body, v2_body) @ _triad_frame(v1_eci, v2_eci).T


def _profile(observations, weights):
    if len(observations) < 2:
        raise ValueError("at least two vector observations are required")
    b = np.array([o[0] for o in observations], dtype=float)
    r = np.array([o[1] for o in observations], dtype=float)
    w = np.ones(len(b)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(b),) or (w <= 0).any():
        raise ValueError("weights must be positive, one per observation")
    B = (w[:, None] * b).T @ r
    return B, w


def davenport_k(B: np.ndarray) -> np.ndarray:
    S = B + B.T
    sigma = np.trace(B)
    z = np.array([B[1, 2] - B[2, 1], B[2, 0] - B[0, 2], B[0, 1] - B[1, 0]])
    K = np.empty((4, 4))
    K[:3, :3] = S - sigma * np.eye(3)
    K[:3, 3] = z
    K[3, :3] = z
    K[3, 3] = sigma
    return K


def davenport_q(observations, weights=None) -> np.ndarray:
    """Wahba solution as the dominant eigenvector of Davenport's K matrix.

    Args:
        observations: sequence of ``(body_unit_vector, eci_unit_vector)`` pairs.
        weights: positive weights, default all ones.

    Raises:
        AmbiguousAttitudeError: if the two largest eigenvalues are closer than 1e-9.
    """
    B, w = _profile(observations, weights)
    vals, vecs = np.linalg.eigh(davenport_k(B))
    if vals[3] - vals[2] < 1e-9 * w.sum():
        raise AmbiguousAttitudeError("dominant eigenvalue of K is not separated; attitude unobservable")
    return _canonical_sign(vecs[:, 3])


@dataclass
class QuestInfo:
    lambda_max: float
    iterations: int
    used_fallback: bool


def quest_with_info(observations, weights=None, tol: float = 1e-12, max_iter: int = 50) -> tuple[np.ndarray, QuestInfo]:
    """QUEST: Newton iteration on the characteristic polynomial of K from ``lambda0 = sum(w)``.

    Falls back to :func:`davenport_q` (with ``used_fallback`` set) if Newton does
    not converge or the optimal rotation is near 180 degrees, where the
    unnormalized quaternion vanishes.
    """
    B, w = _profile(observations, weights)
    S = B + B.T
    sigma = np.trace(B)
    z = np.array([B[1, 2] - B[2, 1], B[2, 0] - B[0, 2], B[0, 1] - B[1, 0]])
    kappa = _adj_trace(S)
    delta = np.linalg.det(S)
    a = sigma * sigma - kappa
    bb = sigma * sigma + z @ z
    c = delta + z @ S @ z
    d = z @ S @ S @ z

    def poly(lam):
        return (lam * lam - a) * (lam * lam - bb) - c * lam + c * sigma - d

    def dpoly(lam):
        return 2.0 * lam * (2.0 * lam * lam - a - bb) - c

    lam = float(w.sum())
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        df = dpoly(lam)
        if df == 0.0:
            break
        step = poly(lam) / df
        lam -= step
        if abs(step) < tol * max(1.0, abs(lam)):
            converged = True
            break
    if not converged:
        log.warning("QUEST Newton iteration did not converge; using Davenport eigen-solution")
        return davenport_q(observations, weights), QuestInfo(float("nan"), it, True)
    alpha = lam * lam - sigma * sigma + kappa
    beta = lam - sigma
    gamma = (lam + sigma) * alpha - delta
    x = (alpha * np.eye(3) + beta * S + S @ S) @ z
    q = np.array([x[0], x[1], x[2], gamma])
    n = np.linalg.norm(q)
    if n < 1e-8 * max(1.0, abs(lam)) ** 3:
        return davenport_q(observations, weights), QuestInfo(lam, it, True)
    return _canonical_sign(q / n), QuestInfo(lam, it, False)


def _adj_trace(S: np.ndarray) -> float:
    return (S[1, 1] * S[2, 2] - S[1, 2] * S[2, 1]
            + S[0, 0] * S[2, 2] - S[0, 2] * S[2, 0]
            + S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0])


def quest(observations, weights=None) -> np.ndarray:
    """Optimal quaternion (scalar-last, ECI to body) for Wahba's problem."""
    return quest_with_info(observations, weights)[0]


def wahba_loss(A: np.ndarray, observations, weights=None) -> float:
    w = np.ones(len(observations)) if weights is None else np.asarray(weights, float)
    return 0.5 * float(sum(wi * np.sum((b - A @ r) ** 2) for wi, (b, r) in zip(w, observations)))


def rate_from_quaternions(q_prev: np.ndarray, q_curr: np.ndarray, dt: float) -> np.ndarray:
    """``w = 2 Xi(q)^T (q - q_prev) / dt`` with sign continuity enforced."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if q_prev @ q_curr < 0.0:
        q_curr = -q_curr
    return 2.0 * xi_matrix(q_curr).T @ ((q_curr - q_prev) / dt)


def rate_from_dcm(A_prev: np.ndarray, A_curr: np.ndarray, dt: float) -> np.ndarray:
    """``w = vee(-(A - A_prev)/dt * A^T)``."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    return vee(-((A_curr - A_prev) / dt) @ A_curr.T)


@dataclass(frozen=True)
class FilterParams:
    w1: float = 1.0      # rad/s, first-order cutoff
    w2: float = 5.0      # rad/s, second-order cutoff
    xi: float = 0.7
    ts: float = 0.1      # s, sample period

    def __post_init__(self):
        if not (self.w1 > 0 and self.w2 > 0 and self.ts > 0):
            raise ValueError("filter cutoffs and sample period must be positive")
        if not 0.0 < self.xi <= 2.0:
            raise ValueError("damping ratio must lie in (0, 2]")


@dataclass
class Lowpass1State:
    x_prev: np.ndarray | None = None
    y_prev: np.ndarray | None = None


@dataclass
class Lowpass2State:
    x: list = field(default_factory=list)   # x[k-1], x[k-2]
    y: list = field(default_factory=list)   # y[k-1], y[k-2]


def lowpass1_coefficients(w: float, ts: float) -> tuple[float, float]:
    """Tustin discretization of ``w/(s+w)``: ``y_k = b (x_k + x_{k-1}) - a y_{k-1}``."""
    aT = w * ts
    return aT / (2.0 + aT), (aT - 2.0) / (2.0 + aT)


def lowpass1_step(state: Lowpass1State, x_in: np.ndarray, params: FilterParams,
                  w: float | None = None) -> np.ndarray:
    """Advance the first-order filter; the first sample initializes it at steady state."""
    x_in = np.asarray(x_in, dtype=float)
    if state.x_prev is None:
        state.x_prev, state.y_prev = x_in.copy(), x_in.copy()
        return x_in.copy()
    b, a = lowpass1_coefficients(params.w1 if w is None else w, params.ts)
    y = b * (x_in + state.x_prev) - a * state.y_prev
    state.x_prev, state.y_prev = x_in.copy(), y
    return y.copy()


def lowpass2_coefficients(w: float, xi: float, ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Tustin discretization of ``w^2/(s^2 + 2 xi w s + w^2)``.

    Returns:
        ``(b, a)`` normalized so ``a[0] == 1``.
    """
    K = 2.0 / ts
    a0 = K * K + 2.0 * xi * w * K + w * w
    a1 = 2.0 * w * w - 2.0 * K * K
    a2 = K * K - 2.0 * xi * w * K + w * w
    b = w * w * np.array([1.0, 2.0, 1.0]) / a0
    return b, np.array([1.0, a1 / a0, a2 / a0])


def lowpass2_step(state: Lowpass2State, x_in: np.ndarray, params: FilterParams,
                  w: float | None = None) -> np.ndarray:
    x_in = np.asarray(x_in, dtype=float)
    if not state.x:
        state.x = [x_in.copy(), x_in.copy()]
        state.y = [x_in.copy(), x_in.copy()]
        return x_in.copy()
    b, a = lowpass2_coefficients(params.w2 if w is None else w, params.xi, params.ts)
    y = b[0] * x_in + b[1] * state.x[0] + b[2] * state.x[1] - a[1] * state.y[0] - a[2] * state.y[1]
    state.x = [x_in.copy(), state.x[0]]
    state.y = [y, state.y[0]]
    return y.copy()


def reset_lowpass1(state: Lowpass1State, value: np.ndarray) -> None:
    state.x_prev = np.array(value, dtype=float)
    state.y_prev = np.array(value, dtype=float)


class RateEstimator:
    """Backward-difference angular rate from successive attitude estimates, then filtered.

    ``order`` selects the first- or second-order low-pass stage; the cutoff
    may be switched per mission phase with :meth:`set_filter`.
    """

    def __init__(self, params: FilterParams, order: int = 1, method: str = "quaternion"):
        if order not in (1, 2):
            raise ValueError("filter order must be 1 or 2")
        if method not in ("quaternion", "dcm"):
            raise ValueError("method must be 'quaternion' or 'dcm'")
        self.params = params
        self.order = order
        self.method = method
        self.q_prev: np.ndarray | None = None
        self.t_prev: float | None = None
        self.raw = np.zeros(3)
        self.filtered = np.zeros(3)
        self._f1 = Lowpass1State()
        self._f2 = Lowpass2State()

    def set_filter(self, order: int, params: FilterParams) -> None:
        if order != self.order or params != self.params:
            self.order, self.params = order, params
            self._f1, self._f2 = Lowpass1State(), Lowpass2State()
            # restart at the current estimate so switching does not kick
            if self.order == 1:
                lowpass1_step(self._f1, self.filtered, self.params)
            else:
                lowpass2_step(self._f2, self.filtered, self.params)

    def reset(self) -> None:
        self.q_prev = None
        self.t_prev = None

    def update(self, t: float, q: np.ndarray) -> np.ndarray:
        if self.q_prev is None:
            self.q_prev, self.t_prev = q.copy(), t
            return self.filtered.copy()
        if not t > self.t_prev:
            raise ValueError("rate estimator timestamps must be strictly increasing")
        dt = t - self.t_prev
        if self.method == "quaternion":
            self.raw = rate_from_quaternions(self.q_prev, q, dt)
        else:
            self.raw = rate_from_dcm(quat_to_dcm(self.q_prev), quat_to_dcm(q), dt)
        if self.order == 1:
            self.filtered = lowpass1_step(self._f1, self.raw, self.params)
        else:
            self.filtered = lowpass2_step(self._f2, self.raw, self.params)
        self.q_prev = q.copy() if q @ self.q_prev >= 0 else -q
        self.t_prev = t
        return self.filtered.copy()


@dataclass
class AttitudeEstimate:
    q_est: np.ndarray
    A_est: np.ndarray
    source: str   # "triad" | "quest" | "hold"
    t: float

    @classmethod
    def from_quaternion(cls, q: np.ndarray, source: str, t: float) -> "AttitudeEstimate":
        return cls(q, quat_to_dcm(q), source, t)

    @classmethod
    def from_dcm(cls, A: np.ndarray, source: str, t: float) -> "AttitudeEstimate":
        q = dcm_to_quat(A)
        return cls(q, quat_to_dcm(q), source, t)


def attitude_error_angle(A_est: np.ndarray, A_true: np.ndarray) -> float:
    """Rotation angle [rad] between an estimated and a true attitude matrix."""
    return rotation_angle(A_est @ A_true.T)
