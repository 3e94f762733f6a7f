"""Central finite-difference validation of every loss gradient.

Used by the test suite and exposed as the `gradcheck` CLI subcommand.
Each check evaluates the analytic gradient at randomly drawn points and
compares against a central difference with step h; configurations on
non-smooth loci (clipping topology changes, the focal clamp) are avoided
by construction of the random draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import camera, geom, losses, obb, voxel

_FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def _rel_err(analytic, fd):
    denom = max(abs(analytic), abs(fd), 1e-6)
    return abs(analytic - fd) / denom


def check_focal(seed=0, n=100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    fp = losses.FocalParams()
    for _ in range(n):
        p = rng.uniform(0.05, 0.95)
        y = rng.uniform(0.0, 1.0)
        g = float(losses.focal_loss_grad(p, y, fp))
        fd = float(
            (losses.focal_loss(p + _FD_STEP, y, fp) - losses.focal_loss(p - _FD_STEP, y, fp))
            / (2 * _FD_STEP)
        )
        worst = max(worst, _rel_err(g, fd))
    return CheckResult("focal_loss", worst, 1e-4)


def check_tv(seed=0, n=100) -> CheckResult:
    rng = np.random.default_rng(seed + 1)
    vol = rng.normal(size=(6, 7, 5))
    grad = losses.tv_loss_grad(vol)
    worst = 0.0
    flat = [(i, j, k) for i in range(6) for j in range(7) for k in range(5)]
    picks = rng.choice(len(flat), size=n, replace=False)
    for pi in picks:
        i, j, k = flat[pi]
        vp = vol.copy()
        vp[i, j, k] += _FD_STEP
        vm = vol.copy()
        vm[i, j, k] -= _FD_STEP
        fd = (losses.tv_loss(vp) - losses.tv_loss(vm)) / (2 * _FD_STEP)
        worst = max(worst, _rel_err(grad[i, j, k], fd))
    return CheckResult("tv_loss", worst, 1e-4)


def _level_pose(position, yaw=0.0):
    rz = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    rx = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    ry = np.cross(rz, rx)
    return geom.Pose(geom.Rotation(np.column_stack([rx, ry, rz])), position)


def _random_target_pred(rng, grid, n_classes=4):
    """A GT box plus a perturbed prediction that overlaps it generically."""
    d, h, w = grid.dims
    lo = grid.voxel_size * np.array([w, h, d]) * -0.3
    hi = -lo
    center = grid.pose.apply(rng.uniform(lo, hi))
    dims = rng.uniform(0.4, 1.2, size=3)
    yaw = rng.uniform(-np.pi, np.pi)
    probs = np.full(n_classes, 0.05 / (n_classes - 1))
    probs[rng.integers(n_classes)] = 0.95
    gt = obb.Obb3(center, yaw, dims, probs)
    target = losses.encode_targets([gt], grid, n_classes)
    pred = obb.DetectionGrid(
        centerness=np.clip(target.centerness * rng.uniform(0.7, 0.95) + 0.02, 0, 1),
        class_logits=target.class_logits + rng.normal(scale=0.3, size=target.class_logits.shape),
        params=target.params.copy(),
    )
    pos = np.argwhere(target.centerness > 0.5)
    for i, j, k in pos:
        pred.params[0:3, i, j, k] *= rng.uniform(0.8, 1.2, size=3)
        pred.params[3:6, i, j, k] += rng.uniform(-0.3, 0.3, size=3)
        pred.params[6, i, j, k] += rng.uniform(0.05, 0.4) * rng.choice([-1, 1])
    return pred, target


def check_detection(seed=0, n=100) -> CheckResult:
    rng = np.random.default_rng(seed + 2)
    grid = voxel.anchor_grid(_level_pose(np.zeros(3)), geom.GravityDir(), 4.0, 8)
    worst = 0.0
    checked = 0
    while checked < n:
        pred, target = _random_target_pred(rng, grid)
        grad = losses.detection_loss_param_grad(pred, target, grid)
        pos = np.argwhere(target.centerness > 0.5)
        i, j, k = pos[0]
        for p_i in range(7):
            plus = obb.DetectionGrid(pred.centerness, pred.class_logits, pred.params.copy())
            plus.params[p_i, i, j, k] += _FD_STEP
            minus = obb.DetectionGrid(pred.centerness, pred.class_logits, pred.params.copy())
            minus.params[p_i, i, j, k] -= _FD_STEP
            fd = (
                losses.detection_loss(plus, target, grid)
                - losses.detection_loss(minus, target, grid)
            ) / (2 * _FD_STEP)
            if abs(fd) < 1e-7 and abs(grad[p_i, i, j, k]) < 1e-7:
                continue
            worst = max(worst, _rel_err(grad[p_i, i, j, k], fd))
            checked += 1
    return CheckResult("detection_loss", worst, 1e-3)


def check_occupancy(seed=0, n=100) -> CheckResult:
    rng = np.random.default_rng(seed + 3)
    grid = voxel.anchor_grid(_level_pose(np.zeros(3)), geom.GravityDir(), 4.0, 12)
    cam = camera.PinholeCamera(fx=20.0, fy=20.0, cx=7.5, cy=7.5, width=16, height=16)
    pose = _level_pose(np.array([0.2, 0.1, 0.0]), yaw=0.1)
    depth = rng.uniform(1.0, 3.0, size=(16, 16))
    pred = rng.uniform(0.2, 0.8, size=grid.dims)
    w = losses.LossWeights(delta=grid.voxel_size)
    grad = losses.occupancy_loss_grad(pred, grid, depth, cam, pose, w, seed=seed)
    touched = np.argwhere(np.abs(grad) > 1e-9)
    picks = rng.choice(len(touched), size=min(n, len(touched)), replace=False)
    worst = 0.0
    for pi in picks:
        i, j, k = touched[pi]
        vp = pred.copy()
        vp[i, j, k] += _FD_STEP
        vm = pred.copy()
        vm[i, j, k] -= _FD_STEP
        fd = (
            losses.occupancy_loss(vp, grid, depth, cam, pose, w, seed=seed)
            - losses.occupancy_loss(vm, grid, depth, cam, pose, w, seed=seed)
        ) / (2 * _FD_STEP)
        worst = max(worst, _rel_err(grad[i, j, k], fd))
    return CheckResult("occupancy_loss", worst, 1e-3)


def run_all(seed: int = 0, n: int = 100) -> list[CheckResult]:
    return [
        check_focal(seed, n),
        check_tv(seed, n),
        check_detection(seed, n),
        check_occupancy(seed, n),
    ]
