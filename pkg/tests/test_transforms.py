import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneforge.transforms import (
    RigidTransform,
    quat_angle,
    quat_from_axis_angle,
    quat_multiply,
    quat_to_matrix,
)

unit_vec = st.tuples(*[st.floats(-1, 1) for _ in range(3)]).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)
angles = st.floats(-3.0, 3.0)
coords = st.tuples(*[st.floats(-10, 10) for _ in range(3)])


def test_identity_noop():
    pts = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    out = RigidTransform.identity().apply(pts)
    np.testing.assert_array_equal(out, pts)


def test_axis_angle_quarter_turn():
    t = RigidTransform.from_axis_angle([0, 0, 1], np.pi / 2)
    out = t.apply(np.array([[1.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out, [[0.0, 1.0, 0.0]], atol=1e-12)


def test_quat_angle_exact():
    q = quat_from_axis_angle([0, 1, 0], 0.7)
    assert quat_angle(q) == pytest.approx(0.7, abs=1e-12)
    # double cover: -q is the same rotation
    assert quat_angle(-q) == pytest.approx(0.7, abs=1e-12)


def test_rotation_matrix_orthonormal():
    q = quat_from_axis_angle([1, 2, 3], 1.1)
    r = quat_to_matrix(q)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(unit_vec, angles, coords)
def test_inverse_roundtrip(axis, angle, t):
    tf = RigidTransform.from_axis_angle(axis, angle, t)
    pts = np.array([[0.3, -0.2, 1.7], [4.0, 5.0, -6.0]])
    back = tf.inverse().apply(tf.apply(pts))
    np.testing.assert_allclose(back, pts, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(unit_vec, angles, unit_vec, angles)
def test_compose_matches_matrix_product(ax1, an1, ax2, an2):
    a = RigidTransform.from_axis_angle(ax1, an1, (0.1, 0.2, 0.3))
    b = RigidTransform.from_axis_angle(ax2, an2, (-1.0, 0.5, 2.0))
    np.testing.assert_allclose(a.compose(b).matrix, a.matrix @ b.matrix, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(unit_vec, angles)
def test_matrix_roundtrip(axis, angle):
    tf = RigidTransform.from_axis_angle(axis, angle, (1.0, -2.0, 0.25))
    back = RigidTransform.from_matrix(tf.matrix)
    np.testing.assert_allclose(back.matrix, tf.matrix, atol=1e-9)


def test_quat_multiply_composes_rotations():
    qa = quat_from_axis_angle([0, 0, 1], 0.4)
    qb = quat_from_axis_angle([1, 0, 0], 0.9)
    np.testing.assert_allclose(
        quat_to_matrix(quat_multiply(qa, qb)),
        quat_to_matrix(qa) @ quat_to_matrix(qb),
        atol=1e-12,
    )


def test_relative_to():
    a = RigidTransform.from_axis_angle([0, 1, 0], 0.3, (1, 0, 0))
    b = RigidTransform.from_axis_angle([1, 0, 0], -0.8, (0, 2, 0))
    rel = a.relative_to(b)
    np.testing.assert_allclose(b.compose(rel).matrix, a.matrix, atol=1e-12)
