import numpy as np
import pytest

from egolift import geom, io as eio, obb
from egolift.camera import FisheyeCamera, PinholeCamera
from egolift.errors import ParseError, VersionMismatch
from egolift.fusion import TriangleMesh, TsdfVolume
from egolift.geom import Pose, Rotation
from egolift.voxel import PointCloudWithVisibility


def random_pose(rng):
    return Pose(Rotation(geom.so3_exp(rng.normal(size=3) * 0.8)), rng.normal(size=3))


def test_trajectory_round_trip(tmp_path):
    rng = np.random.default_rng(91)
    traj = [(0.1 * i, random_pose(rng)) for i in range(20)]
    p = tmp_path / "traj.csv"
    eio.write_trajectory(p, traj)
    back = eio.read_trajectory(p)
    assert len(back) == 20
    for (t0, p0), (t1, p1) in zip(traj, back):
        assert t0 == t1
        np.testing.assert_allclose(p0.matrix(), p1.matrix(), atol=1e-12)
    # writes are deterministic for identical inputs
    p2 = tmp_path / "traj2.csv"
    eio.write_trajectory(p2, traj)
    assert p.read_bytes() == p2.read_bytes()


def test_trajectory_rejects_bad_version(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# egolift-trajectory v99\nt_sec,tx,ty,tz,qw,qx,qy,qz\n")
    with pytest.raises(VersionMismatch):
        eio.read_trajectory(p)


def test_trajectory_rejects_short_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# egolift-trajectory v1\nt_sec,tx,ty,tz,qw,qx,qy,qz\n0.0,1.0\n")
    with pytest.raises(ParseError, match=":3"):
        eio.read_trajectory(p)


@pytest.mark.parametrize(
    "cam",
    [
        PinholeCamera(fx=150.5, fy=151.25, cx=120.0, cy=119.5, width=240, height=240),
        FisheyeCamera(fx=110.0, fy=110.0, cx=120.0, cy=120.0, k1=0.03, k2=-0.011,
                      k3=0.0021, k4=-0.0004, width=240, height=240, valid_radius=117.5),
    ],
)
def test_calibration_round_trip(tmp_path, cam):
    p = tmp_path / "calib.json"
    eio.write_calibration(p, cam)
    assert eio.read_calibration(p) == cam


def test_depth_round_trip(tmp_path):
    rng = np.random.default_rng(92)
    depth = rng.uniform(0.5, 5.0, size=(120, 160)).astype(np.float32).astype(np.float64)
    depth[rng.random((120, 160)) < 0.1] = np.nan
    p = tmp_path / "d.bin"
    eio.write_depth(p, depth)
    back = eio.read_depth(p)
    np.testing.assert_array_equal(np.isnan(back), np.isnan(depth))
    np.testing.assert_array_equal(back[~np.isnan(back)], depth[~np.isnan(depth)])
    assert p.stat().st_size == 16 + 4 * depth.size


def test_depth_truncated_raises(tmp_path):
    p = tmp_path / "d.bin"
    eio.write_depth(p, np.ones((8, 8)))
    data = p.read_bytes()
    p.write_bytes(data[:-7])
    with pytest.raises(ParseError):
        eio.read_depth(p)


def test_mesh_round_trip(tmp_path):
    rng = np.random.default_rng(93)
    verts = rng.normal(size=(30, 3))
    faces = rng.integers(0, 30, size=(50, 3))
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    mesh = TriangleMesh(verts, faces[keep])
    p = tmp_path / "m.ply"
    eio.write_mesh_ply(p, mesh)
    back = eio.read_mesh_ply(p)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)
    # write-read-write is byte stable
    p2 = tmp_path / "m2.ply"
    eio.write_mesh_ply(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_empty_mesh_round_trip(tmp_path):
    mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    p = tmp_path / "empty.ply"
    eio.write_mesh_ply(p, mesh)
    back = eio.read_mesh_ply(p)
    assert back.is_empty()


def test_mesh_truncated_raises(tmp_path):
    p = tmp_path / "m.ply"
    eio.write_mesh_ply(p, TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 2]])))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(ParseError):
        eio.read_mesh_ply(p)


def test_points_round_trip(tmp_path):
    rng = np.random.default_rng(94)
    n = 40
    points = rng.normal(size=(n, 3))
    obs = tuple(rng.normal(size=(rng.integers(1, 4), 3)) for _ in range(n))
    cloud = PointCloudWithVisibility(points, obs)
    p = tmp_path / "pts.ply"
    eio.write_points_ply(p, cloud)
    back = eio.read_points_ply(p)
    np.testing.assert_array_equal(back.points, cloud.points)
    assert len(back.observations) == n
    for a, b in zip(back.observations, cloud.observations):
        np.testing.assert_array_equal(a, b)


def test_obbs_round_trip(tmp_path):
    rng = np.random.default_rng(95)
    boxes = []
    for _ in range(10):
        probs = rng.dirichlet(np.ones(5))
        boxes.append(
            obb.Obb3(rng.normal(size=3), rng.uniform(-3, 3), rng.uniform(0.2, 2, 3),
                     probs, score=rng.uniform())
        )
    p = tmp_path / "boxes.jsonl"
    eio.write_obbs(p, boxes, classes=("a", "b", "c", "d", "e"),
                   timestamps=[0.1 * i for i in range(10)])
    back, ts, classes = eio.read_obbs(p)
    assert classes == ("a", "b", "c", "d", "e")
    assert ts == [pytest.approx(0.1 * i) for i in range(10)]
    for a, b in zip(back, boxes):
        np.testing.assert_allclose(a.center, b.center, atol=1e-12)
        np.testing.assert_allclose(a.class_probs, b.class_probs, atol=1e-12)
        assert a.yaw == pytest.approx(b.yaw, abs=1e-12)
        assert a.score == pytest.approx(b.score, abs=1e-12)


def test_obbs_bad_version(tmp_path):
    p = tmp_path / "boxes.jsonl"
    p.write_text('{"format": "egolift-obbs", "version": 2}\n')
    with pytest.raises(VersionMismatch):
        eio.read_obbs(p)


def test_obbs_truncated_line(tmp_path):
    p = tmp_path / "boxes.jsonl"
    p.write_text('{"format": "egolift-obbs", "version": 1}\n{"center": [0, 0\n')
    with pytest.raises(ParseError, match=":2"):
        eio.read_obbs(p)


def test_tsdf_volume_round_trip(tmp_path):
    rng = np.random.default_rng(96)
    vol = TsdfVolume.empty(random_pose(rng), (6, 5, 4), 0.05)
    vol.tsdf[:] = rng.uniform(-1, 1, size=vol.tsdf.shape)
    vol.weights[:] = rng.integers(0, 10, size=vol.weights.shape)
    p = tmp_path / "vol.bin"
    eio.write_tsdf(p, vol)
    back = eio.read_tsdf(p)
    np.testing.assert_array_equal(back.tsdf, vol.tsdf)
    np.testing.assert_array_equal(back.weights, vol.weights)
    assert back.truncation == vol.truncation
    assert back.grid.dims == vol.grid.dims
    np.testing.assert_allclose(back.grid.pose.matrix(), vol.grid.pose.matrix(), atol=1e-12)


def test_volume_truncated(tmp_path):
    rng = np.random.default_rng(97)
    vol = TsdfVolume.empty(Pose.identity(), (4, 4, 4), 0.1)
    p = tmp_path / "vol.bin"
    eio.write_tsdf(p, vol)
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(ParseError):
        eio.read_tsdf(p)


def test_manifest_missing_file(tmp_path):
    p = tmp_path / "manifest.json"
    eio.write_manifest(
        p,
        {
            "classes": ["a"],
            "trajectory": "traj.csv",
            "calibration": "calib.json",
            "depth_frames": [],
            "points": "pts.ply",
            "gt_mesh": "mesh.ply",
            "gt_obbs": "boxes.jsonl",
        },
    )
    with pytest.raises(ParseError, match="missing"):
        eio.read_manifest(p)
