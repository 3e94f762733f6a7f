"""Gravity-aligned local voxel grid and the volumes lifted over it.

Index order is (D, H, W) = (z, y, x) in the grid frame. For an anchored
grid the frame's x axis runs along gravity and z along the horizontal
projection of the camera's viewing direction, so D indexes "forward",
H sideways and W vertical. Voxel (i, j, k) is centered at grid-frame
coordinates ((k+0.5-W/2), (j+0.5-H/2), (i+0.5-D/2)) * voxel_size.

Grids and volumes are immutable after construction; every operation here
is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import camera as _camera
from . import geom
from .errors import MismatchedFeatureDims

DEFAULT_EXTENT_M = 4.0


@dataclass(frozen=True)
class VoxelGrid:
    pose: geom.Pose  # T_world_grid
    dims: tuple[int, int, int]  # (D, H, W)
    voxel_size: float

    def __post_init__(self):
        d = tuple(int(x) for x in self.dims)
        if len(d) != 3 or min(d) < 1:
            raise ValueError("dims must be three counts >= 1")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        object.__setattr__(self, "dims", d)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def voxel_centers(self) -> np.ndarray:
        """World-frame voxel centers, shape (D*H*W, 3), D-major order."""
        d, h, w = self.dims
        ii, jj, kk = np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij")
        pts = np.stack(
            [
                (kk + 0.5 - w / 2.0) * self.voxel_size,
                (jj + 0.5 - h / 2.0) * self.voxel_size,
                (ii + 0.5 - d / 2.0) * self.voxel_size,
            ],
            axis=-1,
        ).reshape(-1, 3)
        return self.pose.apply(pts)

    def world_to_index(self, pts_world) -> np.ndarray:
        """Continuous (i, j, k) index coordinates; integers at voxel centers."""
        p = self.pose.inverse().apply(np.asarray(pts_world, dtype=np.float64))
        d, h, w = self.dims
        return np.stack(
            [
                p[..., 2] / self.voxel_size + d / 2.0 - 0.5,
                p[..., 1] / self.voxel_size + h / 2.0 - 0.5,
                p[..., 0] / self.voxel_size + w / 2.0 - 0.5,
            ],
            axis=-1,
        )


@dataclass(frozen=True)
class FeatureVolume:
    """Aggregated lifted features, (2F, D, H, W): means then standard deviations."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4:
            raise ValueError("feature volume must be (C, D, H, W)")
        if not np.isfinite(v).all():
            raise ValueError("feature volume contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MaskVolume:
    values: np.ndarray  # (D, H, W) in {0, 1}

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.isin(v, (0, 1)).all():
            raise ValueError("mask must be binary")
        object.__setattr__(self, "values", v.astype(np.uint8))


@dataclass(frozen=True)
class PointCloudWithVisibility:
    """World points plus, per point, the camera centers that observed it."""

    points: np.ndarray  # (N, 3)
    observations: tuple  # N arrays of (M_i, 3) camera centers, each M_i >= 1

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        obs = tuple(np.asarray(o, dtype=np.float64).reshape(-1, 3) for o in self.observations)
        if len(obs) != len(pts):
            raise ValueError("need one observation list per point")
        if any(len(o) == 0 for o in obs):
            raise ValueError("every point needs at least one observation")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "observations", obs)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (point, observing camera center) pairs."""
        counts = [len(o) for o in self.observations]
        pts = np.repeat(self.points, counts, axis=0)
        cams = np.concatenate(self.observations, axis=0) if counts else np.zeros((0, 3))
        return pts, cams


@dataclass(frozen=True)
class FrameObservation:
    """One posed frame feeding the lift: features (F, h, w), its camera
    model and the camera-to-world pose."""

    feature_image: np.ndarray
    cam: _camera.Camera
    pose: geom.Pose  # T_world_cam


def anchor_grid(
    last_rgb_pose: geom.Pose,
    g: geom.GravityDir,
    extent_m: float = DEFAULT_EXTENT_M,
    resolution: int = 64,
) -> VoxelGrid:
    """Gravity-aligned cubic grid placed in front of the camera.

    The grid center sits half an extent along the horizontal projection of
    the viewing axis, so the camera looks into the volume from its face.
    """
    rot = geom.gravity_align(last_rgb_pose.rotation, g)
    forward = rot.m[:, 2]
    center = last_rgb_pose.translation + (extent_m / 2.0) * forward
    res = int(resolution)
    return VoxelGrid(
        pose=geom.Pose(rot, center),
        dims=(res, res, res),
        voxel_size=extent_m / res,
    )


def lift_features(grid: VoxelGrid, frames: list[FrameObservation]) -> FeatureVolume:
    """Mean/std aggregation of bilinear samples over all frames.

    Each voxel gathers one sample per frame whose projection is valid;
    channels 0..F hold the mean, F..2F the population standard deviation
    (zero with fewer than two samples). Unseen voxels stay all zero.
    """
    if not frames:
        raise MismatchedFeatureDims("need at least one frame")
    f = frames[0].feature_image.shape[0]
    for fr in frames:
        if fr.feature_image.ndim != 3 or fr.feature_image.shape[0] != f:
            raise MismatchedFeatureDims(
                f"all frames must share feature dim {f}, got {fr.feature_image.shape}"
            )
    centers = grid.voxel_centers()
    n = len(centers)
    acc = np.zeros((f, n))
    acc_sq = np.zeros((f, n))
    count = np.zeros(n)
    for fr in frames:
        p_cam = fr.pose.inverse().apply(centers)
        uv, valid = _camera.project_points(fr.cam, p_cam)
        if not valid.any():
            continue
        samples = _camera.bilinear_sample(
            np.asarray(fr.feature_image, dtype=np.float64), uv[valid, 0], uv[valid, 1]
        )
        acc[:, valid] += samples
        acc_sq[:, valid] += samples**2
        count[valid] += 1
    seen = count > 0
    mean = np.zeros((f, n))
    mean[:, seen] = acc[:, seen] / count[seen]
    var = np.zeros((f, n))
    var[:, seen] = np.maximum(acc_sq[:, seen] / count[seen] - mean[:, seen] ** 2, 0.0)
    std = np.sqrt(var)
    d, h, w = grid.dims
    return FeatureVolume(np.concatenate([mean, std], axis=0).reshape(2 * f, d, h, w))


def _indices_in_bounds(grid: VoxelGrid, pts_world) -> tuple[np.ndarray, np.ndarray]:
    """Integer voxel indices with the floor convention, plus in-bounds mask."""
    p = grid.pose.inverse().apply(np.asarray(pts_world, dtype=np.float64))
    d, h, w = grid.dims
    i = np.floor(p[..., 2] / grid.voxel_size + d / 2.0).astype(np.int64)
    j = np.floor(p[..., 1] / grid.voxel_size + h / 2.0).astype(np.int64)
    k = np.floor(p[..., 0] / grid.voxel_size + w / 2.0).astype(np.int64)
    ok = (i >= 0) & (i < d) & (j >= 0) & (j < h) & (k >= 0) & (k < w)
    return np.stack([i, j, k], axis=-1), ok


def rasterize_points(grid: VoxelGrid, pc: PointCloudWithVisibility) -> MaskVolume:
    """Binary occupancy of the voxels containing at least one point."""
    mask = np.zeros(grid.dims, dtype=np.uint8)
    if len(pc.points):
        idx, ok = _indices_in_bounds(grid, pc.points)
        idx = idx[ok]
        mask[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return MaskVolume(mask)


def rasterize_freespace(grid: VoxelGrid, pc: PointCloudWithVisibility, s: int = 64) -> MaskVolume:
    """Voxels crossed by camera-to-point segments.

    Each segment stops one voxel size short of its surface point, and any
    voxel holding a surface point is cleared afterwards, so the freespace
    and point masks are disjoint by construction (grazing segments would
    otherwise clip the corners of surface voxels).
    """
    if s < 2:
        raise ValueError("need at least 2 samples per ray")
    mask = np.zeros(grid.dims, dtype=np.uint8)
    pts, cams = pc.pairs()
    if len(pts) == 0:
        return MaskVolume(mask)
    delta = pts - cams
    length = np.linalg.norm(delta, axis=1)
    keep = length > grid.voxel_size
    if keep.any():
        pts_k, cams_k, delta_k, len_k = pts[keep], cams[keep], delta[keep], length[keep]
        ends = pts_k - delta_k / len_k[:, None] * grid.voxel_size
        t = np.linspace(0.0, 1.0, s)
        samples = cams_k[:, None, :] + (ends - cams_k)[:, None, :] * t[None, :, None]
        idx, ok = _indices_in_bounds(grid, samples.reshape(-1, 3))
        idx = idx[ok]
        mask[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    mask &= 1 - rasterize_points(grid, pc).values
    return MaskVolume(mask)


def trilinear_sample(vol: np.ndarray, grid: VoxelGrid, pts_world) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear interpolation of a (D, H, W) volume at world points.

    Returns (values, valid); points outside the interpolation region (half
    a voxel inside the outer voxel centers) get value 0 and valid False.
    """
    vol = np.asarray(vol)
    d, h, w = vol.shape
    f = grid.world_to_index(pts_world).reshape(-1, 3)
    valid = (
        (f[:, 0] >= 0.0) & (f[:, 0] <= d - 1)
        & (f[:, 1] >= 0.0) & (f[:, 1] <= h - 1)
        & (f[:, 2] >= 0.0) & (f[:, 2] <= w - 1)
    )
    out = np.zeros(len(f))
    if valid.any():
        out[valid] = _trilinear_at(vol, f[valid])
    return out, valid


def trilinear_weights(shape: tuple[int, int, int], f: np.ndarray):
    """Corner indices (n, 8, 3) and weights (n, 8) for index coordinates f.

    Exposed so gradients of sampled losses can scatter back to the volume
    with exactly the interpolation weights the forward pass used.
    """
    d, h, w = shape
    i0 = np.clip(np.floor(f[:, 0]).astype(np.int64), 0, d - 1)
    j0 = np.clip(np.floor(f[:, 1]).astype(np.int64), 0, h - 1)
    k0 = np.clip(np.floor(f[:, 2]).astype(np.int64), 0, w - 1)
    i1 = np.minimum(i0 + 1, d - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    k1 = np.minimum(k0 + 1, w - 1)
    ai = f[:, 0] - i0
    aj = f[:, 1] - j0
    ak = f[:, 2] - k0
    idx = np.empty((len(f), 8, 3), dtype=np.int64)
    wts = np.empty((len(f), 8))
    corner = 0
    for ii, wi in ((i0, 1 - ai), (i1, ai)):
        for jj, wj in ((j0, 1 - aj), (j1, aj)):
            for kk, wk in ((k0, 1 - ak), (k1, ak)):
                idx[:, corner, 0] = ii
                idx[:, corner, 1] = jj
                idx[:, corner, 2] = kk
                wts[:, corner] = wi * wj * wk
                corner += 1
    return idx, wts


def _trilinear_at(vol: np.ndarray, f: np.ndarray) -> np.ndarray:
    idx, wts = trilinear_weights(vol.shape, f)
    return (vol[idx[..., 0], idx[..., 1], idx[..., 2]] * wts).sum(axis=1)
