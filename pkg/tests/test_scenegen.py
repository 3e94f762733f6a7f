import numpy as np
import pytest

from egolift import camera, geom, metrics, obb, scenegen
from egolift.errors import PlacementFailure
from egolift.scenegen import Scene, SceneSpec

PINHOLE = camera.PinholeCamera(fx=80.0, fy=80.0, cx=79.5, cy=59.5, width=160, height=120)


def small_spec(**kw):
    defaults = dict(seed=11, room=(4.0, 4.0, 3.0), n_boxes=(3, 5), n_points=800)
    defaults.update(kw)
    return SceneSpec(**defaults)


def test_scene_deterministic():
    a = scenegen.generate_scene(small_spec())
    b = scenegen.generate_scene(small_spec())
    assert len(a.obbs) == len(b.obbs)
    for ba, bb in zip(a.obbs, b.obbs):
        np.testing.assert_array_equal(ba.center, bb.center)
        np.testing.assert_array_equal(ba.dims, bb.dims)
        assert ba.yaw == bb.yaw


def test_scene_zero_boxes():
    scene = scenegen.generate_scene(small_spec(n_boxes=(0, 0)))
    assert scene.obbs == ()
    assert len(scene.room_mesh.faces) == 12


def test_scene_boxes_disjoint_and_on_floor():
    scene = scenegen.generate_scene(small_spec(seed=5, n_boxes=(6, 8)))
    boxes = scene.obbs
    for i, a in enumerate(boxes):
        assert a.center[2] == pytest.approx(a.dims[2] / 2)
        corners = a.corners()
        assert corners[:, 0].min() >= -scene.room[0] / 2
        assert corners[:, 0].max() <= scene.room[0] / 2
        assert corners[:, 1].min() >= -scene.room[1] / 2
        assert corners[:, 1].max() <= scene.room[1] / 2
        for b in boxes[i + 1:]:
            assert obb.iou3(a, b) == 0.0


def test_scene_placement_failure():
    # a room too small for the requested boxes
    with pytest.raises(PlacementFailure):
        scenegen.generate_scene(SceneSpec(seed=1, room=(1.2, 1.2, 3.0), n_boxes=(30, 30)))


def test_trajectory_count_and_bounds():
    scene = scenegen.generate_scene(small_spec())
    traj = scenegen.simulate_trajectory(scene, seed=3, duration=1.0, rate=10)
    assert len(traj) == 10
    for t, pose in traj:
        assert abs(pose.translation[0]) <= scene.room[0] / 2
        assert abs(pose.translation[1]) <= scene.room[1] / 2
        assert pose.translation[2] == pytest.approx(1.5)


def test_trajectory_bounded_velocity():
    scene = scenegen.generate_scene(small_spec())
    traj = scenegen.simulate_trajectory(scene, seed=4, duration=5.0, rate=10)
    pos = np.array([p.translation for _, p in traj])
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    assert steps.max() <= scenegen.MAX_SPEED / 10 + 1e-9


def test_trajectory_gravity_alignable():
    scene = scenegen.generate_scene(small_spec())
    traj = scenegen.simulate_trajectory(scene, seed=5, duration=3.0, rate=10)
    g = geom.GravityDir()
    for _, pose in traj:
        out = geom.gravity_align(pose.rotation, g)  # must not raise
        np.testing.assert_allclose(out.m[:, 0], g.g_w, atol=1e-9)


def test_render_wall_depth():
    scene = Scene(
        room_mesh=scenegen._mesh_from_rectangles(scenegen._room_rectangles((6.0, 6.0, 3.0))),
        obbs=(),
        room=(6.0, 6.0, 3.0),
    )
    # camera at x=0 looking along +x: wall at x=3
    pose = scenegen.pose_from_yaw_pitch([0.0, 0.0, 1.5], yaw=0.0, pitch=0.0)
    depth = scenegen.render_depth(scene, PINHOLE, pose)
    # center pixel is on the optical axis
    assert depth[60, 80] == pytest.approx(3.0, abs=1e-9)


def test_render_miss_is_nan():
    scene = Scene(
        room_mesh=scenegen._mesh_from_rectangles(
            [[(1, -1, 0.0), (1, 1, 0.0), (1, 1, 2.0), (1, -1, 2.0)]]
        ),
        obbs=(),
        room=(2.0, 2.0, 2.0),
    )
    pose = scenegen.pose_from_yaw_pitch([0.0, 0.0, 1.0], yaw=np.pi, pitch=0.0)
    depth = scenegen.render_depth(scene, PINHOLE, pose)
    assert np.isnan(depth).all()  # wall is behind the camera


def test_render_matches_brute_force():
    from egolift.bvh import raycast_brute

    spec = small_spec(seed=21, n_boxes=(2, 3))
    scene = scenegen.generate_scene(spec)
    pose = scenegen.pose_from_yaw_pitch([0.0, 0.0, 1.5], yaw=0.4, pitch=-0.1)
    cam = camera.PinholeCamera(fx=40.0, fy=40.0, cx=31.5, cy=31.5, width=64, height=64)
    depth = scenegen.render_depth(scene, cam, pose)

    us, vs = np.meshgrid(np.arange(64), np.arange(64))
    dirs = camera.unproject_rays(cam, np.stack([us, vs], -1).astype(float))
    world_dirs = dirs.reshape(-1, 3) @ pose.rotation.m.T
    tris = scenegen.scene_mesh(scene).triangles()
    t = raycast_brute(np.broadcast_to(pose.translation, world_dirs.shape), world_dirs, tris)
    want = (t.reshape(64, 64)) * dirs[..., 2]
    both = np.isfinite(depth) & np.isfinite(want)
    assert (np.isfinite(depth) == np.isfinite(want)).all()
    np.testing.assert_allclose(depth[both], want[both], atol=1e-9)


def test_remap_fisheye_depth_to_linear():
    """Undistorted fisheye depth of a plane matches the directly rendered
    linear-camera depth to within one fusion voxel."""
    scene = Scene(
        room_mesh=scenegen._mesh_from_rectangles(scenegen._room_rectangles((6.0, 6.0, 3.0))),
        obbs=(),
        room=(6.0, 6.0, 3.0),
    )
    pose = scenegen.pose_from_yaw_pitch([0.0, 0.0, 1.5], yaw=0.0, pitch=0.0)
    fe = camera.FisheyeCamera(fx=70.0, fy=70.0, cx=79.5, cy=79.5, k1=0.02, k2=-0.004,
                              k3=0.0, k4=0.0, width=160, height=160, valid_radius=78.0)
    lin = camera.max_linear(fe, (160, 160))
    fish_depth = scenegen.render_depth(scene, fe, pose)
    lin_depth = scenegen.render_depth(scene, lin, pose)
    remapped = camera.remap_depth(fe, fish_depth, lin)
    both = np.isfinite(remapped) & np.isfinite(lin_depth)
    assert both.mean() > 0.9
    assert np.abs(remapped[both] - lin_depth[both]).max() <= 0.04


def test_semidense_points_on_surface_at_zero_noise():
    spec = small_spec(seed=31, point_sigma=0.0, n_points=500)
    scene = scenegen.generate_scene(spec)
    traj = scenegen.simulate_trajectory(scene, seed=32, duration=3.0, rate=10)
    cloud = scenegen.sample_semidense(scene, traj, spec)
    assert len(cloud.points) > 100
    d = metrics.point_mesh_dist(cloud.points, scenegen.scene_mesh(scene))
    assert d.max() < 1e-6


def test_semidense_visibility():
    """Points on the far side of a wall from every camera are never kept."""
    spec = small_spec(seed=33, point_sigma=0.0, n_points=600)
    scene = scenegen.generate_scene(spec)
    traj = scenegen.simulate_trajectory(scene, seed=34, duration=2.0, rate=10)
    cloud = scenegen.sample_semidense(scene, traj, spec)
    tree_mesh = scenegen.scene_mesh(scene)
    from egolift.bvh import TriBvh

    tree = TriBvh(tree_mesh.triangles())
    for p, obs in zip(cloud.points[:200], cloud.observations[:200]):
        c = obs[0]
        d = p - c
        dist = np.linalg.norm(d)
        t = tree.raycast(c[None, :], (d / dist)[None, :])[0]
        assert abs(t - dist) < 1e-3


def test_semidense_noise_statistics():
    sigma = 0.02
    spec = small_spec(seed=35, point_sigma=sigma, n_points=6000, edge_fraction=0.0)
    scene = scenegen.generate_scene(spec)
    traj = scenegen.simulate_trajectory(scene, seed=36, duration=8.0, rate=10)
    cloud = scenegen.sample_semidense(scene, traj, spec)
    assert len(cloud.points) > 1000
    d = metrics.point_mesh_dist(cloud.points, scenegen.scene_mesh(scene))
    # distance to the locally planar surface folds the normal component:
    # E|N(0, sigma)| = sigma * sqrt(2/pi)
    expected = sigma * np.sqrt(2 / np.pi)
    assert d.mean() == pytest.approx(expected, rel=0.1)


def test_semidense_edge_bias():
    spec = small_spec(seed=37, point_sigma=0.0, n_points=2000, edge_fraction=0.7)
    scene = scenegen.generate_scene(spec)
    traj = scenegen.simulate_trajectory(scene, seed=38, duration=3.0, rate=10)
    cloud = scenegen.sample_semidense(scene, traj, spec)
    rects = scenegen._scene_rectangles(scene)
    # distance of each point to the nearest rectangle border
    def border_dist(p):
        best = np.inf
        for r in rects:
            a, b = r[1] - r[0], r[3] - r[0]
            la, lb = np.linalg.norm(a), np.linalg.norm(b)
            rel = p - r[0]
            u, v = rel @ (a / la), rel @ (b / lb)
            if -1e-6 <= u <= la + 1e-6 and -1e-6 <= v <= lb + 1e-6:
                normal_dist = abs(rel @ np.cross(a / la, b / lb))
                if normal_dist < 1e-6:
                    best = min(best, min(u, la - u, v, lb - v))
        return best

    near = np.array([border_dist(p) for p in cloud.points[:500]])
    assert (near <= scenegen._EDGE_BAND + 1e-6).mean() > 0.5


def test_jitter_detections():
    spec = small_spec(seed=39, det_center_sigma=0.1, det_false_positive_rate=0.5)
    scene = scenegen.generate_scene(spec)
    dets = scenegen.jitter_detections(scene, spec, seed=40)
    assert len(dets) >= len(scene.obbs)
    for det, gt in zip(dets[: len(scene.obbs)], scene.obbs):
        assert np.linalg.norm(det.center - gt.center) < 0.6
        assert det.class_id == gt.class_id
        assert 0.5 <= det.score <= 1.0
    # determinism
    again = scenegen.jitter_detections(scene, spec, seed=40)
    assert len(again) == len(dets)
    np.testing.assert_array_equal(dets[0].center, again[0].center)
