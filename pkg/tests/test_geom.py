import numpy as np
import pytest

from egolift import geom
from egolift.errors import DegenerateGravityAlignment, NearPiRotation
from egolift.geom import GravityDir, Pose, Rotation, Tangent


def random_pose(rng, max_angle=np.pi - 0.1):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    r = geom.so3_exp(axis * angle)
    return Pose(Rotation(r), rng.uniform(-2, 2, size=3))


def test_exp_zero_is_identity():
    p = geom.se3_exp(Tangent.zero())
    np.testing.assert_allclose(p.rotation.m, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(p.translation, 0.0, atol=1e-15)


def test_exp_quarter_turn_maps_x_to_y():
    p = geom.se3_exp(Tangent([0, 0, np.pi / 2], [0, 0, 0]))
    np.testing.assert_allclose(p.rotation.m @ [1, 0, 0], [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(p.translation, 0.0, atol=1e-15)


def test_log_identity_is_zero():
    t = geom.se3_log(Pose.identity())
    np.testing.assert_allclose(t.rot_part, 0.0, atol=1e-15)
    np.testing.assert_allclose(t.trans_part, 0.0, atol=1e-15)


def test_log_pure_translation():
    t = geom.se3_log(Pose(Rotation.identity(), [0, 0, 1.0]))
    np.testing.assert_allclose(t.rot_part, 0.0, atol=1e-15)
    np.testing.assert_allclose(t.trans_part, [0, 0, 1.0], atol=1e-15)


def test_exp_log_round_trip_fixed_norm():
    rng = np.random.default_rng(3)
    for _ in range(50):
        w = rng.normal(size=3)
        w *= 1.3 / np.linalg.norm(w)
        xi = Tangent(w, rng.normal(size=3))
        back = geom.se3_log(geom.se3_exp(xi))
        np.testing.assert_allclose(back.rot_part, xi.rot_part, atol=1e-9)
        np.testing.assert_allclose(back.trans_part, xi.trans_part, atol=1e-9)


def test_log_exp_round_trip_random_poses():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        p = random_pose(rng)
        q = geom.se3_exp(geom.se3_log(p))
        np.testing.assert_allclose(q.rotation.m, p.rotation.m, atol=1e-9)
        np.testing.assert_allclose(q.translation, p.translation, atol=1e-9)


def test_log_rejects_near_pi():
    r = geom.so3_exp(np.array([np.pi - 1e-9, 0, 0]))
    with pytest.raises(NearPiRotation):
        geom.se3_log(Pose(Rotation(r), np.zeros(3)))


def test_small_angle_branch():
    xi = Tangent([1e-10, -2e-10, 5e-11], [0.3, -0.1, 0.2])
    back = geom.se3_log(geom.se3_exp(xi))
    np.testing.assert_allclose(back.rot_part, xi.rot_part, atol=1e-15)
    np.testing.assert_allclose(back.trans_part, xi.trans_part, atol=1e-12)


def test_boxminus_same_pose_is_zero():
    rng = np.random.default_rng(5)
    p = random_pose(rng)
    d = geom.pose_boxminus(p, p)
    np.testing.assert_allclose(d.rot_part, 0.0, atol=1e-12)
    np.testing.assert_allclose(d.trans_part, 0.0, atol=1e-12)


def test_boxminus_pure_translation():
    d = geom.pose_boxminus(Pose.identity(), Pose(Rotation.identity(), [1, 0, 0]))
    np.testing.assert_allclose(d.trans_part, [1, 0, 0], atol=1e-15)


def test_boxminus_retraction_round_trip():
    rng = np.random.default_rng(6)
    for _ in range(200):
        a, b = random_pose(rng), random_pose(rng)
        try:
            d = geom.pose_boxminus(a, b)
        except NearPiRotation:
            continue
        back = a.compose(geom.se3_exp(d))
        np.testing.assert_allclose(back.rotation.m, b.rotation.m, atol=1e-9)
        np.testing.assert_allclose(back.translation, b.translation, atol=1e-9)


def test_pose_group_axioms():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        a = random_pose(rng)
        b = random_pose(rng)
        c = random_pose(rng)
        ab_c = a.compose(b).compose(c)
        a_bc = a.compose(b.compose(c))
        np.testing.assert_allclose(ab_c.matrix(), a_bc.matrix(), atol=1e-9)
        ident = a.compose(a.inverse())
        np.testing.assert_allclose(ident.matrix(), np.eye(4), atol=1e-9)
        inv = a.compose(b).inverse()
        alt = b.inverse().compose(a.inverse())
        np.testing.assert_allclose(inv.matrix(), alt.matrix(), atol=1e-9)


def test_gravity_align_hand_case():
    # camera z along +x, gravity straight down
    r = Rotation(np.array([[0, 0, 1.0], [0, 1, 0], [-1, 0, 0]]))
    assert np.allclose(r.m[:, 2], [1, 0, 0])
    out = geom.gravity_align(r, GravityDir([0, 0, -1.0]))
    expected = np.column_stack([[0, 0, -1.0], [0, 1, 0.0], [1, 0, 0.0]])
    np.testing.assert_allclose(out.m, expected, atol=1e-12)
    assert np.linalg.det(out.m) == pytest.approx(1.0)


def test_gravity_align_properties():
    rng = np.random.default_rng(8)
    for _ in range(500):
        p = random_pose(rng)
        g = rng.normal(size=3)
        g /= np.linalg.norm(g)
        try:
            out = geom.gravity_align(p.rotation, GravityDir(g))
        except DegenerateGravityAlignment:
            continue
        np.testing.assert_allclose(out.m[:, 0], g, atol=1e-9)
        np.testing.assert_allclose(out.m.T @ out.m, np.eye(3), atol=1e-9)
        assert np.linalg.det(out.m) == pytest.approx(1.0, abs=1e-9)


def test_gravity_align_degenerate():
    g = GravityDir([0, 0, -1.0])
    for sign in (1.0, -1.0):
        # camera z exactly (anti)parallel to gravity
        rz = sign * g.g_w
        rx = np.array([1.0, 0, 0])
        ry = np.cross(rz, rx)
        r = Rotation(np.column_stack([rx, ry, rz]))
        with pytest.raises(DegenerateGravityAlignment):
            geom.gravity_align(r, g)


def test_quaternion_round_trip():
    rng = np.random.default_rng(9)
    for _ in range(300):
        r = random_pose(rng).rotation.m
        q = geom.mat_to_quat(r)
        assert q[0] >= 0
        np.testing.assert_allclose(geom.quat_to_mat(q), r, atol=1e-12)


def test_wrap_angle():
    assert geom.wrap_angle(np.pi) == pytest.approx(-np.pi)
    assert geom.wrap_angle(-np.pi) == pytest.approx(-np.pi)
    assert geom.wrap_angle(0.3) == pytest.approx(0.3)
    assert geom.wrap_angle(2 * np.pi + 0.3) == pytest.approx(0.3)
