import numpy as np
import pytest

from egolift import camera, geom, obb
from egolift.obb import Box2, Obb3


def make_box(center, yaw, dims, score=1.0, k=3, cls=0):
    probs = np.full(k, 1e-9)
    probs[cls] = 1.0 - 1e-9 * (k - 1)
    return Obb3(center=center, yaw=yaw, dims=dims, class_probs=probs, score=score)


def mc_iou(a: Obb3, b: Obb3, n=200_000, seed=0):
    """Monte-Carlo IoU oracle: sample inside box a, count hits in b."""
    rng = np.random.default_rng(seed)
    local = rng.uniform(-0.5, 0.5, size=(n, 3)) * a.dims
    pts = local @ geom.Rotation.about_z(a.yaw).m.T + a.center
    q = (pts - b.center) @ geom.Rotation.about_z(b.yaw).m
    inside = (np.abs(q) <= b.dims / 2.0).all(axis=1)
    inter = a.volume() * inside.mean()
    union = a.volume() + b.volume() - inter
    return inter / union


def test_iou_identical_boxes():
    a = make_box([0.3, -0.2, 0.5], 0.4, [1.0, 2.0, 0.5])
    assert obb.iou3(a, a) == pytest.approx(1.0)


def test_iou_disjoint():
    a = make_box([0, 0, 0], 0.0, [1, 1, 1])
    b = make_box([5, 0, 0], 0.3, [1, 1, 1])
    assert obb.iou3(a, b) == 0.0


def test_iou_half_shifted_cubes():
    a = make_box([0, 0, 0], 0.0, [1, 1, 1])
    b = make_box([0.5, 0, 0], 0.0, [1, 1, 1])
    assert obb.iou3(a, b) == pytest.approx(0.5 / 1.5, abs=1e-12)


def test_iou_rotated_cube_monte_carlo():
    a = make_box([0, 0, 0], 0.0, [1, 1, 1])
    b = make_box([0, 0, 0], np.pi / 4, [1, 1, 1])
    got = obb.iou3(a, b)
    # analytic: octagon overlap area = 8 * (sqrt(2) - 1) / 2 ... use MC
    assert got == pytest.approx(mc_iou(a, b, n=10**6), abs=0.005)


def test_iou_symmetry_and_invariance():
    rng = np.random.default_rng(31)
    for _ in range(50):
        a = make_box(rng.uniform(-1, 1, 3), rng.uniform(-np.pi, np.pi),
                     rng.uniform(0.2, 2.0, 3))
        b = make_box(rng.uniform(-1, 1, 3), rng.uniform(-np.pi, np.pi),
                     rng.uniform(0.2, 2.0, 3))
        v = obb.iou3(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(obb.iou3(b, a), abs=1e-12)
        # shared yaw + translation leaves the overlap unchanged
        dyaw = rng.uniform(-np.pi, np.pi)
        shift = rng.uniform(-2, 2, 3)
        rot = geom.Rotation.about_z(dyaw)
        a2 = make_box(rot.apply(a.center) + shift, a.yaw + dyaw, a.dims)
        b2 = make_box(rot.apply(b.center) + shift, b.yaw + dyaw, b.dims)
        assert obb.iou3(a2, b2) == pytest.approx(v, abs=1e-9)


def test_iou_monte_carlo_agreement_batch():
    rng = np.random.default_rng(32)
    for trial in range(25):
        a = make_box(rng.uniform(-0.5, 0.5, 3), rng.uniform(-np.pi, np.pi),
                     rng.uniform(0.3, 1.5, 3))
        b = make_box(a.center + rng.normal(scale=0.3, size=3),
                     rng.uniform(-np.pi, np.pi), rng.uniform(0.3, 1.5, 3))
        got = obb.iou3(a, b)
        assert got == pytest.approx(mc_iou(a, b, seed=trial), abs=0.01)


def test_nms_single_detection():
    a = make_box([0, 0, 0], 0.0, [1, 1, 1], score=0.7)
    assert obb.nms3([a], voxel_size=0.0625) == [a]


def test_nms_identical_pair_keeps_higher_score():
    a = make_box([0, 0, 0], 0.0, [1, 1, 1], score=0.9)
    b = make_box([0, 0, 0], 0.0, [1, 1, 1], score=0.8)
    out = obb.nms3([b, a], voxel_size=0.0625)
    assert out == [a]


def test_nms_matches_brute_force_oracle():
    rng = np.random.default_rng(33)
    dets = [
        make_box(rng.uniform(-1.5, 1.5, 3) * [1, 1, 0.3], rng.uniform(-np.pi, np.pi),
                 rng.uniform(0.3, 1.2, 3), score=rng.uniform(0.1, 1.0))
        for _ in range(50)
    ]
    voxel_size, radius, iou_min = 0.0625, 2.0, 0.0
    got = obb.nms3(dets, voxel_size=voxel_size, radius_voxels=radius, iou_min=iou_min)

    # independent greedy suppression oracle
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept = []
    for i in order:
        ok = True
        for j in kept:
            close = np.linalg.norm(dets[i].center - dets[j].center) <= radius * voxel_size
            if close and obb.iou3(dets[i], dets[j]) > iou_min:
                ok = False
                break
        if ok:
            kept.append(i)
    want = [dets[i] for i in kept]
    assert got == want
    scores = [d.score for d in got]
    assert scores == sorted(scores, reverse=True)


def test_project_bbox2_centered_box():
    cam = camera.PinholeCamera(fx=150, fy=150, cx=120, cy=120, width=240, height=240)
    box = make_box([0, 0, 3.0], 0.2, [0.5, 0.5, 0.5])
    # camera at origin looking along +z
    b2 = obb.project_bbox2(box, cam, geom.Pose.identity())
    assert b2 is not None
    np.testing.assert_allclose(b2.center(), [120, 120], atol=1e-9)


def test_project_bbox2_behind_camera():
    cam = camera.PinholeCamera(fx=150, fy=150, cx=120, cy=120, width=240, height=240)
    box = make_box([0, 0, -3.0], 0.0, [0.5, 0.5, 0.5])
    assert obb.project_bbox2(box, cam, geom.Pose.identity()) is None


def test_project_bbox2_matches_corner_loop():
    cam = camera.PinholeCamera(fx=150, fy=150, cx=120, cy=120, width=240, height=240)
    rng = np.random.default_rng(34)
    for _ in range(50):
        box = make_box(rng.uniform(-1, 1, 3) + [0, 0, 4.0],
                       rng.uniform(-np.pi, np.pi), rng.uniform(0.2, 1.0, 3))
        got = obb.project_bbox2(box, cam, geom.Pose.identity())
        us, vs = [], []
        for corner in box.corners():
            px = camera.project(cam, corner)
            if px.valid:
                us.append(px.u)
                vs.append(px.v)
        if not us:
            assert got is None
            continue
        assert got is not None
        assert got.u0 == pytest.approx(max(0.0, min(us)))
        assert got.u1 == pytest.approx(min(240.0, max(us)))
        assert got.v0 == pytest.approx(max(0.0, min(vs)))
        assert got.v1 == pytest.approx(min(240.0, max(vs)))


def test_iou2_cases():
    a = Box2(0, 0, 2, 2)
    assert obb.iou2(a, a) == pytest.approx(1.0)
    assert obb.iou2(a, Box2(5, 5, 6, 6)) == 0.0
    # 2x2 boxes overlapping in a 1x2 strip
    b = Box2(1, 0, 3, 2)
    assert obb.iou2(a, b) == pytest.approx(2.0 / 6.0)


def test_obb_validation():
    with pytest.raises(ValueError):
        make_box([0, 0, 0], 0.0, [1, 0, 1])
    with pytest.raises(ValueError):
        Obb3([0, 0, 0], 0.0, [1, 1, 1], [0.5, 0.2])
    box = make_box([0, 0, 0], 3 * np.pi, [1, 1, 1])
    assert -np.pi <= box.yaw < np.pi
