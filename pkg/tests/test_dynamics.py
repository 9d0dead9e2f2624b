import json
import math

import numpy as np
import pytest

from adcs_sim import environment as env
from adcs_sim.dynamics import (BRITE_INERTIA, AttitudeState, Face, SpacecraftProperties, attitude_rhs,
                               cube_faces, inertial_momentum, step_attitude, step_wheel_coupled,
                               torque_aero, torque_gravity_gradient, torque_magnetic, torque_srp)
from adcs_sim.mathcore import NonFiniteError, dcm_to_quat, quat_to_dcm
from adcs_sim.orbit import relative_velocity

from conftest import random_quaternion

IDENTITY_Q = np.array([0.0, 0.0, 0.0, 1.0])


def test_default_properties_and_round_trip(tmp_path):
    props = SpacecraftProperties()
    np.testing.assert_array_equal(props.J, BRITE_INERTIA)
    assert props.mass == 7.0 and len(props.faces) == 6
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(props.to_dict()))
    again = SpacecraftProperties.from_json(path)
    np.testing.assert_array_equal(again.J, props.J)
    assert again.projected_area(np.array([1.0, 0.0, 0.0])) == pytest.approx(0.04)


def test_properties_validation():
    with pytest.raises(ValueError):
        SpacecraftProperties(J=np.array([[1.0, 0.1, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(ValueError):
        SpacecraftProperties(J=-np.eye(3))
    with pytest.raises(ValueError):
        SpacecraftProperties.from_dict({"J": np.eye(3).tolist(), "colour": "red"})


def test_projected_area_of_cube_diagonal():
    props = SpacecraftProperties()
    u = np.ones(3) / math.sqrt(3)
    assert props.projected_area(u) == pytest.approx(0.04 * math.sqrt(3))


def test_attitude_state_requires_unit_quaternion():
    with pytest.raises(ValueError):
        AttitudeState(np.array([0.0, 0.0, 0.0, 2.0]), np.zeros(3))


def test_gravity_gradient_equilibria(rng):
    J = np.diag([0.04, 0.05, 0.06])
    r = np.array([7000.0, 0.0, 0.0])
    # body x along nadir: A maps -r_hat to +x
    A = np.array([[-1.0, 0, 0], [0, -1.0, 0], [0, 0, 1.0]])
    np.testing.assert_allclose(torque_gravity_gradient(dcm_to_quat(A), r, J), 0.0, atol=1e-20)
    for _ in range(10):
        np.testing.assert_allclose(torque_gravity_gradient(random_quaternion(rng), r, 0.05 * np.eye(3)), 0.0,
                                   atol=1e-20)


def test_gravity_gradient_45_degree_magnitude():
    r = np.array([env.R_EARTH + 700.0, 0.0, 0.0])
    vals, vecs = np.linalg.eigh(BRITE_INERTIA)
    n_body = (vecs[:, 0] + vecs[:, 2]) / math.sqrt(2.0)
    # build an attitude whose nadir vector in body axes is n_body
    other = np.cross(n_body, vecs[:, 1])
    A = np.column_stack([-n_body, vecs[:, 1], -other])
    if np.linalg.det(A) < 0:
        A[:, 2] *= -1
    tau = torque_gravity_gradient(dcm_to_quat(A), r, BRITE_INERTIA)
    rn = np.linalg.norm(r)
    expected = 1.5 * env.MU_EARTH / rn ** 3 * (vals[2] - vals[0])
    assert np.linalg.norm(tau) == pytest.approx(expected, rel=0.10)


def _orbit_point(h=611.0):
    r = np.array([env.R_EARTH + h, 0.0, 0.0])
    v = np.array([0.0, math.sqrt(env.MU_EARTH / r[0]), 0.0])
    return r, v


def test_aero_zero_lever_and_parallel_offset():
    r, v = _orbit_point()
    q = IDENTITY_Q  # flow is close to body +y here
    centred = SpacecraftProperties(faces=[Face(f.normal, f.area, np.zeros(3)) for f in cube_faces()])
    np.testing.assert_allclose(torque_aero(q, r, v, centred), 0.0, atol=1e-25)
    # single face normal to the flow with its centroid on the flow line
    one_face = SpacecraftProperties(faces=[Face(np.array([0.0, 1.0, 0.0]), 0.04, np.array([0.0, 0.1, 0.0]))])
    np.testing.assert_allclose(torque_aero(q, r, v, one_face), 0.0, atol=1e-20)


def test_aero_offset_times_drag_force():
    r = np.array([env.R_EARTH + 611.0, 0.0, 0.0])
    v = np.array([0.0, 7.56, 0.0])
    vr = relative_velocity(r, v) * 1000.0
    u_eci = vr / np.linalg.norm(vr)
    # attitude putting the flow along body +x: lit face is +x only
    x_b = u_eci
    z_b = np.array([0.0, 0.0, 1.0])
    y_b = np.cross(z_b, x_b)
    A = np.vstack([x_b, y_b, z_b])
    offset = np.array([0.01, -0.01, 0.01])
    props = SpacecraftProperties(faces=cube_faces(cm_offset=offset))
    tau = torque_aero(dcm_to_quat(A), r, v, props)
    rho = env.atmosphere_density(611.0)
    # drag on the ram (+x) face opposes the motion
    force = -0.5 * rho * (vr @ vr) * props.cd * 0.04 * np.array([1.0, 0.0, 0.0])
    lever = -offset  # geometric centre relative to the centre of mass
    np.testing.assert_allclose(tau, np.cross(lever, force), rtol=0, atol=1e-12 * np.linalg.norm(force))


def test_srp_gating_and_single_face():
    r = np.array([7000.0, 0.0, 0.0])
    s = np.array([1.0, 0.0, 0.0])
    props = SpacecraftProperties()
    np.testing.assert_array_equal(torque_srp(IDENTITY_Q, r, s, True, props), np.zeros(3))
    centred = SpacecraftProperties(faces=cube_faces(cm_offset=(0, 0, 0)))
    np.testing.assert_allclose(torque_srp(IDENTITY_Q, r, s, False, centred), 0.0, atol=1e-22)
    c = np.array([0.1, 0.05, 0.0])
    one = SpacecraftProperties(faces=[Face(np.array([1.0, 0.0, 0.0]), 0.04, c)])
    tau = torque_srp(IDENTITY_Q, r, s, False, one)
    sin_theta = np.linalg.norm(np.cross(c, s)) / np.linalg.norm(c)
    expected = env.CONSTANTS.solar_pressure * 1.5 * 0.04 * np.linalg.norm(c) * sin_theta
    assert np.linalg.norm(tau) == pytest.approx(expected, rel=1e-12)


def test_magnetic_torque_examples(rng):
    B = np.array([0.0, 2e-5, 0.0])
    np.testing.assert_allclose(torque_magnetic(IDENTITY_Q, B, np.array([0.12, 0.0, 0.0])), [0, 0, 2.4e-6],
                               atol=1e-20)
    np.testing.assert_array_equal(torque_magnetic(IDENTITY_Q, B, 3.0 * B), np.zeros(3))
    for _ in range(50):
        q = random_quaternion(rng)
        Bi = rng.standard_normal(3) * 3e-5
        tau = torque_magnetic(q, Bi, rng.standard_normal(3) * 0.1)
        assert abs(tau @ (quat_to_dcm(q) @ Bi)) < 1e-22


def test_rhs_rest_and_principal_spin():
    x = np.concatenate([IDENTITY_Q, np.zeros(3)])
    np.testing.assert_array_equal(attitude_rhs(x, np.zeros(3), np.zeros(3), BRITE_INERTIA), np.zeros(7))
    vals, vecs = np.linalg.eigh(BRITE_INERTIA)
    x = np.concatenate([IDENTITY_Q, 0.1 * vecs[:, 1]])
    np.testing.assert_allclose(attitude_rhs(x, np.zeros(3), np.zeros(3), BRITE_INERTIA)[4:], 0.0, atol=1e-17)


def test_torque_free_conservation(rng):
    J = BRITE_INERTIA
    state = AttitudeState(random_quaternion(rng), rng.standard_normal(3) * 0.2)
    T0 = 0.5 * state.w @ J @ state.w
    H0 = inertial_momentum(state.q, state.w, J)
    for _ in range(600):
        state = step_attitude(state, np.zeros(3), np.zeros(3), J, 0.1)
    assert 0.5 * state.w @ J @ state.w == pytest.approx(T0, rel=1e-9)
    assert np.linalg.norm(J @ state.w) == pytest.approx(np.linalg.norm(H0), rel=1e-9)
    np.testing.assert_allclose(inertial_momentum(state.q, state.w, J), H0, rtol=0, atol=1e-9 * np.linalg.norm(H0))
    assert abs(np.linalg.norm(state.q) - 1.0) < 1e-15


def test_principal_spin_for_one_orbit():
    vals, vecs = np.linalg.eigh(BRITE_INERTIA)
    w0 = math.radians(1.0) * vecs[:, 2]
    state = AttitudeState(IDENTITY_Q, w0)
    for _ in range(int(5891 / 1.0)):
        state = step_attitude(state, np.zeros(3), np.zeros(3), BRITE_INERTIA, 1.0)
    assert np.linalg.norm(state.w) == pytest.approx(math.radians(1.0), rel=1e-9)


def test_constant_torque_linear_growth():
    J = np.diag([0.0465, 0.0486, 0.0482])
    state = AttitudeState(IDENTITY_Q, np.zeros(3))
    L = np.array([0.0, 0.0, 1e-4])
    for k in range(100):
        state = step_attitude(state, L, np.zeros(3), J, 0.1)
    assert state.w[2] == pytest.approx(1e-4 * 10.0 / 0.0482, rel=1e-9)
    assert abs(state.w[0]) < 1e-15 and abs(state.w[1]) < 1e-15


def test_non_finite_torque_rejected():
    state = AttitudeState(IDENTITY_Q, np.zeros(3))
    with pytest.raises(NonFiniteError):
        step_attitude(state, np.array([np.nan, 0, 0]), np.zeros(3), BRITE_INERTIA, 0.1)


def test_wheel_coupled_total_momentum_conserved(rng):
    J = BRITE_INERTIA
    J_inv = np.linalg.inv(J)
    q, w, h = random_quaternion(rng), rng.standard_normal(3) * 0.05, np.array([0.01, -0.005, 0.002])
    H0 = inertial_momentum(q, w, J, h)
    for k in range(600):
        h_dot = 1e-4 * np.array([math.sin(0.1 * k), math.cos(0.05 * k), 0.5])
        q, w, h = step_wheel_coupled(q, w, h, h_dot, np.zeros(3), J, J_inv, 0.1)
    H1 = inertial_momentum(q, w, J, h)
    assert np.linalg.norm(H1 - H0) < 1e-9 * np.linalg.norm(H0)
