import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adcs_sim.mathcore import (NonFiniteError, axis_angle_to_dcm, cross, dcm_to_quat, quat_multiply,
                               quat_to_dcm, rk4_step, rotation_angle, skew, u_matrix, vee, xi_matrix)

from conftest import random_quaternion, random_unit

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


def test_identity_quaternion_gives_identity_matrix():
    np.testing.assert_array_equal(quat_to_dcm(np.array([0.0, 0.0, 0.0, 1.0])), np.eye(3))


def test_quarter_turn_about_x():
    s = math.sin(math.radians(45))
    A = quat_to_dcm(np.array([s, 0.0, 0.0, s]))
    Aj = A @ np.array([0.0, 1.0, 0.0])
    assert abs(Aj[1]) < 1e-15
    np.testing.assert_allclose(Aj, [0.0, 0.0, -1.0], atol=1e-15)


def test_dcm_orthogonal_for_random_quaternions(rng):
    for _ in range(1000):
        A = quat_to_dcm(random_quaternion(rng))
        np.testing.assert_allclose(A.T @ A, np.eye(3), atol=1e-12)


def test_non_unit_quaternion_is_renormalized(caplog):
    A = quat_to_dcm(np.array([0.0, 0.0, 0.0, 2.0]))
    np.testing.assert_allclose(A, np.eye(3))
    assert "renormalizing" in caplog.text


def test_composition_matches_matrix_product(rng):
    q, p = random_quaternion(rng), random_quaternion(rng)
    np.testing.assert_allclose(quat_to_dcm(quat_multiply(q, p)), quat_to_dcm(q) @ quat_to_dcm(p), atol=1e-12)


def test_dcm_to_quat_identity():
    np.testing.assert_array_equal(dcm_to_quat(np.eye(3)), [0.0, 0.0, 0.0, 1.0])


def test_dcm_to_quat_half_turn_about_z():
    A = np.diag([-1.0, -1.0, 1.0])
    np.testing.assert_allclose(dcm_to_quat(A), [0.0, 0.0, 1.0, 0.0], atol=1e-15)


def test_dcm_quat_round_trip(rng):
    for _ in range(200):
        q = random_quaternion(rng)
        back = dcm_to_quat(quat_to_dcm(q))
        assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-12


def test_dcm_to_quat_rejects_non_rotation():
    with pytest.raises(ValueError):
        dcm_to_quat(np.diag([1.0, 1.0, -1.0]))


def test_skew_examples(rng):
    np.testing.assert_array_equal(skew(np.zeros(3)), np.zeros((3, 3)))
    np.testing.assert_array_equal(skew(np.array([1.0, 0, 0])) @ np.array([0, 1.0, 0]), [0, 0, 1.0])
    for _ in range(100):
        w, v = rng.standard_normal(3), rng.standard_normal(3)
        np.testing.assert_allclose(skew(w) @ v, np.cross(w, v), atol=1e-15)


@given(vec3)
def test_vee_inverts_skew(w):
    np.testing.assert_array_equal(vee(skew(w)), w)


def test_vee_of_identity_and_antisymmetric(rng):
    np.testing.assert_array_equal(vee(np.eye(3)), np.zeros(3))
    M = rng.standard_normal((3, 3))
    P = M - M.T
    np.testing.assert_allclose(skew(vee(P)), P, atol=1e-15)


def test_xi_matrix_properties(rng):
    X = xi_matrix(np.array([0.0, 0.0, 0.0, 1.0]))
    np.testing.assert_array_equal(X[:3], np.eye(3))
    np.testing.assert_array_equal(X[3], np.zeros(3))
    for _ in range(100):
        q, w = random_quaternion(rng), rng.standard_normal(3)
        np.testing.assert_allclose(xi_matrix(q).T @ q, np.zeros(3), atol=1e-15)
        np.testing.assert_allclose(0.5 * xi_matrix(q) @ w, 0.5 * u_matrix(w) @ q, atol=1e-14)


def test_u_matrix_antisymmetric(rng):
    np.testing.assert_array_equal(u_matrix(np.zeros(3)), np.zeros((4, 4)))
    for _ in range(100):
        w, q = rng.standard_normal(3), random_quaternion(rng)
        U = u_matrix(w)
        np.testing.assert_allclose(U + U.T, 0.0, atol=0)
        assert abs(q @ U @ q) < 1e-14


def test_rk4_zero_derivative_keeps_state():
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(rk4_step(lambda t, y: np.zeros_like(y), 0.0, x, 0.5), x)


def test_rk4_exponential_closed_form():
    # RK4 on x' = x reproduces the degree-4 Taylor polynomial of e^dt
    x = rk4_step(lambda t, y: y, 0.0, np.array([1.0]), 0.1)
    assert x[0] == pytest.approx(1 + 0.1 + 0.1 ** 2 / 2 + 0.1 ** 3 / 6 + 0.1 ** 4 / 24, abs=1e-15)
    assert x[0] == pytest.approx(1.105170833, abs=1e-9)


def test_rk4_harmonic_oscillator_period():
    T = 2 * math.pi
    dt = T / 1000
    x = np.array([1.0, 0.0])
    for k in range(1000):
        x = rk4_step(lambda t, y: np.array([y[1], -y[0]]), k * dt, x, dt)
    assert np.abs(x - [1.0, 0.0]).max() < 1e-9


def test_rk4_reports_non_finite_component():
    with pytest.raises(NonFiniteError) as err:
        rk4_step(lambda t, y: np.array([0.0, np.nan]), 0.0, np.zeros(2), 0.1)
    assert err.value.index == 1
    with pytest.raises(ValueError):
        rk4_step(lambda t, y: y, 0.0, np.zeros(2), 0.0)


@settings(max_examples=50)
@given(st.floats(0.0, math.pi), st.integers(0, 2 ** 31))
def test_rotation_angle_recovers_constructed_angle(theta, seed):
    axis = random_unit(np.random.default_rng(seed))
    assert rotation_angle(axis_angle_to_dcm(axis, theta)) == pytest.approx(theta, abs=2e-8)


def test_cross_matches_numpy(rng):
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    np.testing.assert_allclose(cross(a, b), np.cross(a, b), atol=1e-15)
