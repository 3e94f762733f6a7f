"""Training objectives as standalone, gradient-checked numerical functions.

Nothing here backpropagates through a network; the losses exist so the
detection and occupancy heads' objectives are pinned down numerically and
their gradients can be validated against finite differences. Gradients of
the box-overlap term are evaluated by running the (complex-safe) overlap
geometry with complex-step inputs, which yields the exact derivative of
the smooth branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom, obb, voxel
from . import camera as _camera
from .errors import NoValidSamples, ShapeMismatch, VolumeTooSmall

PROB_EPS = 1e-7
TV_EPS = 1e-8
_COMPLEX_STEP = 1e-100


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")


@dataclass(frozen=True)
class LossWeights:
    w_c: float = 100.0
    w_iou: float = 10.0
    w_cls: float = 1.0
    w_tv: float = 0.01
    delta: float = 0.0625  # surface sampling band; defaults to the voxel size

    def __post_init__(self):
        if min(self.w_c, self.w_iou, self.w_cls, self.w_tv) < 0 or self.delta <= 0:
            raise ValueError("loss weights must be >= 0 and delta > 0")


def focal_loss(p, y, fp: FocalParams = FocalParams()):
    """Binary focal loss generalized to soft targets y in [0, 1].

    Elementwise; p is clamped to [PROB_EPS, 1 - PROB_EPS].
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    pos = y * fp.alpha * (1.0 - p) ** fp.gamma * np.log(p)
    neg = (1.0 - y) * (1.0 - fp.alpha) * p**fp.gamma * np.log1p(-p)
    return -(pos + neg)


def focal_loss_grad(p, y, fp: FocalParams = FocalParams()):
    """d focal_loss / dp, elementwise (derivative of the clamped branch)."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    g = fp.gamma
    d_pos = -g * (1.0 - p) ** (g - 1.0) * np.log(p) + (1.0 - p) ** g / p
    d_neg = g * p ** (g - 1.0) * np.log1p(-p) - p**g / (1.0 - p)
    return -(y * fp.alpha * d_pos + (1.0 - y) * (1.0 - fp.alpha) * d_neg)


def encode_targets(
    gt_boxes: list[obb.Obb3], grid: voxel.VoxelGrid, n_classes: int | None = None
) -> obb.DetectionGrid:
    """Detection supervision grid: centerness one at each box's voxel, box
    parameters and log-probability class scores at those voxels.

    Boxes whose center falls outside the grid are dropped. When two boxes
    share a voxel the later one wins.
    """
    if n_classes is None:
        n_classes = len(gt_boxes[0].class_probs) if gt_boxes else 1
    d, h, w = grid.dims
    centerness = np.zeros((d, h, w))
    logits = np.zeros((n_classes, d, h, w))
    params = np.zeros((7, d, h, w))
    heading = obb.grid_heading(grid)
    r = grid.pose.rotation.m
    centers = grid.voxel_centers().reshape(d, h, w, 3)
    for box in gt_boxes:
        idx, ok = voxel._indices_in_bounds(grid, box.center[None, :])
        if not ok[0]:
            continue
        i, j, k = idx[0]
        centerness[i, j, k] = 1.0
        params[0:3, i, j, k] = box.dims
        params[3:6, i, j, k] = r.T @ (box.center - centers[i, j, k]) / grid.voxel_size
        params[6, i, j, k] = geom.wrap_angle(box.yaw - heading)
        logits[:, i, j, k] = np.log(np.clip(box.class_probs, PROB_EPS, 1.0))
    return obb.DetectionGrid(centerness=centerness, class_logits=logits, params=params)


def _positive_voxels(target: obb.DetectionGrid) -> np.ndarray:
    return np.argwhere(target.centerness > 0.5)


def _iou_at_voxel(pred_params, target_params, voxel_center, r_grid, voxel_size, heading):
    pc, pyaw, pd = obb.decode_voxel_box(pred_params, voxel_center, r_grid, voxel_size, heading)
    tc, tyaw, td = obb.decode_voxel_box(target_params, voxel_center, r_grid, voxel_size, heading)
    return obb.iou3_params(pc, pyaw, pd, tc, tyaw, td)


def detection_loss(
    pred: obb.DetectionGrid,
    target: obb.DetectionGrid,
    grid: voxel.VoxelGrid,
    w: LossWeights = LossWeights(),
    fp: FocalParams = FocalParams(),
) -> float:
    """Per-voxel mean of focal centerness loss everywhere plus overlap and
    class terms at the target-center voxels."""
    if pred.centerness.shape != target.centerness.shape or pred.class_logits.shape != target.class_logits.shape:
        raise ShapeMismatch("pred and target grids must share shapes")
    if pred.centerness.shape != tuple(grid.dims):
        raise ShapeMismatch("grids do not match the voxel grid dims")
    n_v = pred.centerness.size
    total = w.w_c * focal_loss(pred.centerness, target.centerness, fp).sum()

    pos = _positive_voxels(target)
    if len(pos):
        heading = obb.grid_heading(grid)
        r = grid.pose.rotation.m
        centers = grid.voxel_centers().reshape(tuple(grid.dims) + (3,))
        pred_probs = obb.softmax(pred.class_logits, axis=0)
        target_probs = obb.softmax(target.class_logits, axis=0)
        for i, j, k in pos:
            iou = _iou_at_voxel(
                pred.params[:, i, j, k], target.params[:, i, j, k],
                centers[i, j, k], r, grid.voxel_size, heading,
            )
            total += w.w_iou * (1.0 - float(np.real(iou)))
            total += w.w_cls * focal_loss(pred_probs[:, i, j, k], target_probs[:, i, j, k], fp).sum()
    return float(total / n_v)


def detection_loss_param_grad(
    pred: obb.DetectionGrid,
    target: obb.DetectionGrid,
    grid: voxel.VoxelGrid,
    w: LossWeights = LossWeights(),
    fp: FocalParams = FocalParams(),
) -> np.ndarray:
    """Gradient of detection_loss wrt the continuous box parameters,
    shaped like pred.params. Complex-step evaluation of the overlap term;
    exact away from clipping-topology changes."""
    n_v = pred.centerness.size
    out = np.zeros_like(pred.params)
    pos = _positive_voxels(target)
    if not len(pos):
        return out
    heading = obb.grid_heading(grid)
    r = grid.pose.rotation.m
    centers = grid.voxel_centers().reshape(tuple(grid.dims) + (3,))
    h = _COMPLEX_STEP
    for i, j, k in pos:
        base = pred.params[:, i, j, k].astype(np.complex128)
        for p_i in range(7):
            stepped = base.copy()
            stepped[p_i] += 1j * h
            iou = _iou_at_voxel(
                stepped, target.params[:, i, j, k],
                centers[i, j, k], r, grid.voxel_size, heading,
            )
            d_iou = np.imag(iou) / h
            out[p_i, i, j, k] = -w.w_iou * d_iou / n_v
    return out


def _occupancy_sample_points(grid, depth, cam, t_w_cam, delta, seed):
    depth = np.asarray(depth, dtype=np.float64)
    vs, us = np.nonzero(np.isfinite(depth) & (depth > 0))
    if len(vs) == 0:
        raise NoValidSamples("depth map has no valid pixels")
    d = depth[vs, us]
    uv = np.stack([us, vs], axis=-1).astype(np.float64)
    p_surf = t_w_cam.apply(_camera.unproject(cam, uv, d))
    c = t_w_cam.translation
    ray = p_surf - c
    length = np.linalg.norm(ray, axis=1)
    dirs = ray / length[:, None]
    rng = np.random.default_rng(seed)
    u_free = rng.uniform(0.0, delta, size=len(d))
    u_occ = rng.uniform(0.0, delta, size=len(d))
    p_free = c + dirs * (length - u_free)[:, None]
    p_occ = c + dirs * (length + u_occ)[:, None]
    return p_free, p_surf, p_occ


def occupancy_loss(
    pred_occ: np.ndarray,
    grid: voxel.VoxelGrid,
    depth: np.ndarray,
    cam,
    t_w_cam: geom.Pose,
    w: LossWeights = LossWeights(),
    fp: FocalParams = FocalParams(),
    seed: int = 0,
) -> float:
    """Focal supervision of an occupancy volume from one depth map.

    Every valid depth pixel contributes a free point (target 0), its
    surface point (target 0.5) and an occupied point (target 1), the free
    and occupied ones drawn uniformly within delta of the surface along
    the ray. Out-of-grid sample points are dropped; the mean is taken over
    pixels with at least one in-grid sample.
    """
    pred_occ = np.asarray(pred_occ, dtype=np.float64)
    pts = _occupancy_sample_points(grid, depth, cam, t_w_cam, w.delta, seed)
    targets = (0.0, 0.5, 1.0)
    per_pixel = np.zeros(len(pts[0]))
    any_valid = np.zeros(len(pts[0]), dtype=bool)
    for p, y in zip(pts, targets):
        vals, ok = voxel.trilinear_sample(pred_occ, grid, p)
        fl = focal_loss(vals[ok], y, fp)
        per_pixel[ok] += fl
        any_valid |= ok
    n = int(any_valid.sum())
    if n == 0:
        raise NoValidSamples("no occupancy samples fall inside the grid")
    return float(per_pixel.sum() / n)


def occupancy_loss_grad(
    pred_occ: np.ndarray,
    grid: voxel.VoxelGrid,
    depth: np.ndarray,
    cam,
    t_w_cam: geom.Pose,
    w: LossWeights = LossWeights(),
    fp: FocalParams = FocalParams(),
    seed: int = 0,
) -> np.ndarray:
    """Gradient of occupancy_loss wrt the occupancy volume."""
    pred_occ = np.asarray(pred_occ, dtype=np.float64)
    pts = _occupancy_sample_points(grid, depth, cam, t_w_cam, w.delta, seed)
    out = np.zeros_like(pred_occ)
    any_valid = np.zeros(len(pts[0]), dtype=bool)
    scatter = []
    for p, y in zip(pts, (0.0, 0.5, 1.0)):
        f = grid.world_to_index(p).reshape(-1, 3)
        d, h, wd = pred_occ.shape
        ok = (
            (f[:, 0] >= 0) & (f[:, 0] <= d - 1)
            & (f[:, 1] >= 0) & (f[:, 1] <= h - 1)
            & (f[:, 2] >= 0) & (f[:, 2] <= wd - 1)
        )
        idx, wts = voxel.trilinear_weights(pred_occ.shape, f[ok])
        vals = (pred_occ[idx[..., 0], idx[..., 1], idx[..., 2]] * wts).sum(axis=1)
        g = focal_loss_grad(vals, y, fp)
        scatter.append((idx, wts * g[:, None]))
        any_valid |= ok
    n = int(any_valid.sum())
    if n == 0:
        raise NoValidSamples("no occupancy samples fall inside the grid")
    for idx, contrib in scatter:
        np.add.at(out, (idx[..., 0], idx[..., 1], idx[..., 2]), contrib)
    return out / n


def tv_loss(vol: np.ndarray) -> float:
    """Sum over axes of the mean smoothed |forward difference|."""
    vol = np.asarray(vol, dtype=np.float64)
    if vol.ndim != 3 or min(vol.shape) < 2:
        raise VolumeTooSmall("tv_loss needs a (D, H, W) volume with every dim >= 2")
    total = 0.0
    for axis in range(3):
        d = np.diff(vol, axis=axis)
        total += np.sqrt(d * d + TV_EPS**2).mean()
    return float(total)


def tv_loss_grad(vol: np.ndarray) -> np.ndarray:
    vol = np.asarray(vol, dtype=np.float64)
    if vol.ndim != 3 or min(vol.shape) < 2:
        raise VolumeTooSmall("tv_loss needs a (D, H, W) volume with every dim >= 2")
    out = np.zeros_like(vol)
    for axis in range(3):
        d = np.diff(vol, axis=axis)
        g = d / np.sqrt(d * d + TV_EPS**2) / d.size
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        out[tuple(hi)] += g
        out[tuple(lo)] -= g
    return out
