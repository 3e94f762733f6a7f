import numpy as np

from egolift import camera, fusion, geom
from egolift.fusion import OccupancyVolume, TsdfVolume
from egolift.geom import Pose, Rotation
from egolift.voxel import VoxelGrid

CAM = camera.PinholeCamera(fx=100.0, fy=100.0, cx=63.5, cy=63.5, width=128, height=128)


def centered_volume(extent=3.2, res=32, center=(0, 0, 2.0)):
    return TsdfVolume.empty(Pose(Rotation.identity(), np.asarray(center, float)), (res, res, res), extent / res)


def test_integrate_plane_zero_crossing():
    vol = centered_volume()
    depth = np.full((128, 128), 2.0)
    fusion.integrate_depth(vol, depth, CAM, Pose.identity())
    # walk the on-axis column (world z axis = volume i axis here) and find
    # the sign change of the fused tsdf
    d, h, w = vol.grid.dims
    col = vol.tsdf[:, h // 2, w // 2]
    wts = vol.weights[:, h // 2, w // 2]
    centers = vol.grid.voxel_centers().reshape(d, h, w, 3)[:, h // 2, w // 2, 2]
    sign_change = np.nonzero(np.diff(np.sign(col)) != 0)[0]
    assert len(sign_change) >= 1
    i = sign_change[0]
    assert wts[i] > 0 and wts[i + 1] > 0
    # linear interpolation of the crossing
    z0, z1, v0, v1 = centers[i], centers[i + 1], col[i], col[i + 1]
    z_cross = z0 + (0.0 - v0) / (v1 - v0) * (z1 - z0)
    assert abs(z_cross - 2.0) <= vol.grid.voxel_size / 2


def test_integrate_twice_identical():
    depth = np.full((128, 128), 2.0)
    vol = centered_volume()
    fusion.integrate_depth(vol, depth, CAM, Pose.identity())
    once = vol.tsdf.copy()
    fusion.integrate_depth(vol, depth, CAM, Pose.identity())
    np.testing.assert_allclose(vol.tsdf, once, atol=1e-12)
    assert vol.weights.max() == 2.0


def test_integrate_empty_depth_noop():
    vol = centered_volume()
    before_t = vol.tsdf.copy()
    before_w = vol.weights.copy()
    fusion.integrate_depth(vol, np.full((128, 128), np.nan), CAM, Pose.identity())
    np.testing.assert_array_equal(vol.tsdf, before_t)
    np.testing.assert_array_equal(vol.weights, before_w)


def test_tsdf_stays_in_unit_range():
    rng = np.random.default_rng(71)
    vol = centered_volume()
    for _ in range(5):
        depth = rng.uniform(0.5, 3.5, size=(128, 128))
        depth[rng.random((128, 128)) < 0.2] = np.nan
        pose = Pose(Rotation(geom.so3_exp(rng.normal(scale=0.1, size=3))), rng.normal(scale=0.2, size=3))
        fusion.integrate_depth(vol, depth, CAM, pose)
    assert vol.tsdf.max() <= 1.0 + 1e-12
    assert vol.tsdf.min() >= -1.0 - 1e-12
    assert vol.weights.min() >= 0


def test_fusion_order_invariance():
    rng = np.random.default_rng(72)
    depths = [np.full((128, 128), float(d)) for d in (1.8, 2.0, 2.2, 2.4)]
    poses = [Pose(Rotation.identity(), [0, 0, -0.1 * i]) for i in range(4)]
    frames = list(zip(depths, poses))
    vols = []
    for order in (frames, frames[::-1]):
        vol = centered_volume()
        for depth, pose in order:
            fusion.integrate_depth(vol, depth, CAM, pose)
        vols.append(vol)
    np.testing.assert_allclose(vols[0].tsdf, vols[1].tsdf, atol=1e-6)
    np.testing.assert_array_equal(vols[0].weights, vols[1].weights)


def test_integrate_fisheye_depth_convention():
    fe = camera.FisheyeCamera(fx=60.0, fy=60.0, cx=63.5, cy=63.5, k1=0.0, k2=0.0,
                              k3=0.0, k4=0.0, width=128, height=128, valid_radius=62.0)
    vol = centered_volume()
    # render the plane z = 2 as ray lengths for the ideal fisheye
    us, vs = np.meshgrid(np.arange(128, dtype=float), np.arange(128, dtype=float))
    rays = camera.unproject_rays(fe, np.stack([us, vs], axis=-1))
    with np.errstate(divide="ignore"):
        depth = np.where(rays[..., 2] > 1e-6, 2.0 / rays[..., 2], np.nan)
    fusion.integrate_depth(vol, depth, fe, Pose.identity())
    d, h, w = vol.grid.dims
    col = vol.tsdf[:, h // 2, w // 2]
    centers = vol.grid.voxel_centers().reshape(d, h, w, 3)[:, h // 2, w // 2, 2]
    i = np.nonzero(np.diff(np.sign(col)) != 0)[0][0]
    z0, z1, v0, v1 = centers[i], centers[i + 1], col[i], col[i + 1]
    z_cross = z0 + (0.0 - v0) / (v1 - v0) * (z1 - z0)
    assert abs(z_cross - 2.0) <= vol.grid.voxel_size / 2


def occ_volume(res=16):
    return OccupancyVolume.empty(Pose.identity(), (res, res, res), 0.2)


def local_grid(res=16):
    return VoxelGrid(Pose.identity(), (res, res, res), 0.2)


def test_integrate_occupancy_constant():
    vol = occ_volume()
    fusion.integrate_occupancy(vol, np.full((16, 16, 16), 0.8), local_grid())
    inner = vol.counts > 0
    assert inner.any()
    np.testing.assert_allclose(vol.occ[inner], 0.8, atol=1e-12)
    assert set(np.unique(vol.counts)) <= {0, 1}
    fusion.integrate_occupancy(vol, np.full((16, 16, 16), 0.8), local_grid())
    np.testing.assert_allclose(vol.occ[inner], 0.8, atol=1e-12)


def test_integrate_occupancy_two_values_average():
    vol = occ_volume()
    fusion.integrate_occupancy(vol, np.full((16, 16, 16), 0.2), local_grid())
    fusion.integrate_occupancy(vol, np.full((16, 16, 16), 0.8), local_grid())
    inner = vol.counts == 2
    assert inner.any()
    np.testing.assert_allclose(vol.occ[inner], 0.5, atol=1e-12)


def test_marching_cubes_below_iso_empty():
    mesh = fusion.marching_cubes(
        np.full((8, 8, 8), -1.0), np.full((8, 8, 8), 10), 0.0, 2, Pose.identity(), 0.1
    )
    assert mesh.is_empty()


def test_marching_cubes_all_invalid_empty():
    values = np.ones((8, 8, 8))
    values[4:] = -1.0
    mesh = fusion.marching_cubes(values, np.zeros((8, 8, 8)), 0.0, 2, Pose.identity(), 0.1)
    assert mesh.is_empty()


def sphere_sdf(res, voxel_size, radius=1.0):
    grid = VoxelGrid(Pose.identity(), (res, res, res), voxel_size)
    c = grid.voxel_centers().reshape(res, res, res, 3)
    return np.linalg.norm(c, axis=-1) - radius, grid


def test_marching_cubes_sphere():
    values, grid = sphere_sdf(64, 0.04)
    mesh = fusion.marching_cubes(
        values, np.full(values.shape, 100), 0.0, 2, grid.pose, grid.voxel_size
    )
    assert not mesh.is_empty()
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(radii - 1.0).max() <= grid.voxel_size
    assert mesh.euler_characteristic() == 2


def test_marching_cubes_single_crossing_quad():
    # one interior cube straddling the iso level along one axis only
    values = np.full((2, 2, 2), -1.0)
    values[1, :, :] = 1.0
    mesh = fusion.marching_cubes(
        values, np.full((2, 2, 2), 10), 0.0, 2, Pose.identity(), 1.0
    )
    assert len(mesh.faces) == 2
    assert len(np.unique(mesh.faces)) == 4  # two triangles forming a quad
    # crossing plane sits midway between the two voxel layers
    np.testing.assert_allclose(mesh.vertices[:, 2], 0.0, atol=1e-12)


def test_marching_cubes_mask_semantics_pinned():
    """A single invalid voxel must remove exactly the cubes it touches."""
    values = np.zeros((6, 6, 6))
    values[3:, :, :] = 1.0
    full = fusion.marching_cubes(
        values, np.full((6, 6, 6), 10), 0.5, 2, Pose.identity(), 1.0
    )
    validity = np.full((6, 6, 6), 10)
    validity[3, 3, 3] = 0
    masked = fusion.marching_cubes(values, validity, 0.5, 2, Pose.identity(), 1.0)

    def crossing_cells(mesh):
        cells = set()
        for tri in mesh.triangles():
            cen = tri.mean(axis=0)
            # world (x, y, z) -> fractional voxel index (i, j, k), cube = floor
            i = int(np.floor(cen[2] / 1.0 + 3.0 - 0.5 - 1e-9))
            j = int(np.floor(cen[1] / 1.0 + 3.0 - 0.5 + 1e-9))
            k = int(np.floor(cen[0] / 1.0 + 3.0 - 0.5 + 1e-9))
            cells.add((i, j, k))
        return cells

    lost = crossing_cells(full) - crossing_cells(masked)
    # voxel (3,3,3) is a corner of four surface-crossing cubes (i=2, j,k in {2,3})
    assert len(crossing_cells(full)) == 25
    assert lost == {(2, 2, 2), (2, 2, 3), (2, 3, 2), (2, 3, 3)}


def test_mesh_vertices_near_valid_voxels():
    values, grid = sphere_sdf(32, 0.08)
    validity = np.full(values.shape, 10)
    mesh = fusion.marching_cubes(values, validity, 0.0, 2, grid.pose, grid.voxel_size)
    centers = grid.voxel_centers()
    from scipy.spatial import cKDTree

    d, _ = cKDTree(centers).query(mesh.vertices)
    assert d.max() <= grid.voxel_size


def test_degenerate_faces_dropped():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.5, 0.5, 0.0]])
    faces = np.array([[0, 1, 2], [0, 1, 1]])  # second face is degenerate
    mesh = fusion.mesh_from_arrays(verts, faces)
    assert len(mesh.faces) == 1
