"""Gravity-aligned oriented bounding boxes.

Boxes carry a yaw about the world vertical (z) axis, so pairwise geometry
reduces to a rotated-rectangle footprint problem plus a 1-D vertical
overlap. Decoding from a detection grid assumes the grid was anchored with
gravity along the world z axis (the only configuration the scene tooling
produces), so the grid heading composes with the per-voxel yaw as a plain
angle sum.

The footprint clipping is written to run on complex arrays as well as
floats: evaluating it with complex-step inputs yields exact derivatives of
the smooth branch, which the loss module uses for gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from .errors import ShapeMismatch
from .voxel import VoxelGrid


@dataclass(frozen=True)
class Obb3:
    """Oriented box: center (m, world), yaw about the vertical axis (rad),
    dims (m, full extents), class probabilities and a detection score."""

    center: np.ndarray
    yaw: float
    dims: np.ndarray
    class_probs: np.ndarray
    score: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3).copy()
        d = np.asarray(self.dims, dtype=np.float64).reshape(3).copy()
        p = np.asarray(self.class_probs, dtype=np.float64).reshape(-1).copy()
        if (d <= 0).any():
            raise ValueError("box dims must be positive")
        if abs(p.sum() - 1.0) > 1e-6:
            raise ValueError(f"class_probs must sum to 1, got {p.sum()!r}")
        for a in (c, d, p):
            a.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "dims", d)
        object.__setattr__(self, "class_probs", p)
        object.__setattr__(self, "yaw", float(geom.wrap_angle(self.yaw)))
        object.__setattr__(self, "score", float(self.score))

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.class_probs))

    def volume(self) -> float:
        return float(np.prod(self.dims))

    def corners(self) -> np.ndarray:
        """The 8 world-frame corners, shape (8, 3)."""
        sx, sy, sz = self.dims / 2.0
        local = np.array(
            [
                [sx, sy, sz], [sx, sy, -sz], [sx, -sy, sz], [sx, -sy, -sz],
                [-sx, sy, sz], [-sx, sy, -sz], [-sx, -sy, sz], [-sx, -sy, -sz],
            ]
        )
        return local @ geom.Rotation.about_z(self.yaw).m.T + self.center


@dataclass
class DetectionGrid:
    """Per-voxel detection head output over one voxel grid.

    centerness: (D, H, W) probabilities in [0, 1]
    class_logits: (k, D, H, W) raw class scores (softmax at decode time)
    params: (7, D, H, W) box parameters: full dims in meters (3), center
        offset from the voxel center in voxel units (3), yaw relative to
        the grid heading (1)
    """

    centerness: np.ndarray
    class_logits: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        self.centerness = np.asarray(self.centerness, dtype=np.float64)
        self.class_logits = np.asarray(self.class_logits, dtype=np.float64)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.centerness.ndim != 3:
            raise ShapeMismatch("centerness must be (D, H, W)")
        if self.class_logits.shape[1:] != self.centerness.shape:
            raise ShapeMismatch("class_logits must be (k, D, H, W)")
        if self.params.shape != (7,) + self.centerness.shape:
            raise ShapeMismatch("params must be (7, D, H, W)")


def softmax(x: np.ndarray, axis=0) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def grid_heading(grid: VoxelGrid) -> float:
    """Yaw of the grid's horizontal axis about the world z axis.

    Requires the grid's gravity axis (rotation column 0) to be world +-z.
    """
    r = grid.pose.rotation.m
    if abs(abs(r[2, 0]) - 1.0) > 1e-6:
        raise ValueError("grid gravity axis must be aligned with world z for box decoding")
    # column 2 is the horizontal viewing direction
    return float(np.arctan2(r[1, 2], r[0, 2]))


def decode_voxel_box(params7, voxel_center_w, r_grid, voxel_size, heading):
    """Box geometry (center, yaw, dims) for one voxel's 7 parameters.

    Works on float or complex inputs; shared by decode() and the detection
    loss so the two paths cannot drift apart.
    """
    dims = params7[0:3]
    offset = params7[3:6] * voxel_size
    center = voxel_center_w + r_grid @ offset
    yaw = params7[6] + heading
    return center, yaw, dims


def decode(det: DetectionGrid, grid: VoxelGrid, tau_center: float = 0.2) -> list[Obb3]:
    """One box per voxel whose centerness clears the threshold."""
    if not 0.0 < tau_center < 1.0:
        raise ValueError("tau_center must be in (0, 1)")
    if det.centerness.shape != tuple(grid.dims):
        raise ShapeMismatch("detection grid does not match the voxel grid dims")
    heading = grid_heading(grid)
    r = grid.pose.rotation.m
    sel = np.argwhere(det.centerness >= tau_center)
    centers = grid.voxel_centers().reshape(tuple(grid.dims) + (3,))
    probs = softmax(det.class_logits, axis=0)
    out = []
    for i, j, k in sel:
        center, yaw, dims = decode_voxel_box(
            det.params[:, i, j, k], centers[i, j, k], r, grid.voxel_size, heading
        )
        out.append(
            Obb3(
                center=center,
                yaw=float(geom.wrap_angle(yaw)),
                dims=dims,
                class_probs=probs[:, i, j, k],
                score=float(det.centerness[i, j, k]),
            )
        )
    return out


def _footprint_corners(cx, cy, yaw, sx, sy):
    """Counter-clockwise footprint rectangle corners; complex-safe."""
    c = np.cos(yaw)
    s = np.sin(yaw)
    hx, hy = sx / 2.0, sy / 2.0
    local = [(hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy)]
    return [(cx + c * lx - s * ly, cy + s * lx + c * ly) for lx, ly in local]


def _real(x):
    # every numeric type (float, complex, numpy scalars) exposes .real
    return x.real


def _clip_polygon(subject, clip):
    """Sutherland-Hodgman clip of a polygon against a convex CCW window.

    Vertices are (x, y) tuples of floats or complex numbers; branch
    decisions use only real parts so complex-step derivatives stay exact.
    """
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            return []
        ex0, ey0 = clip[i]
        ex1, ey1 = clip[(i + 1) % n]
        dx, dy = ex1 - ex0, ey1 - ey0
        inp = output
        output = []
        prev = inp[-1]
        prev_side = _real(dx * (prev[1] - ey0) - dy * (prev[0] - ex0))
        for cur in inp:
            cur_side = _real(dx * (cur[1] - ey0) - dy * (cur[0] - ex0))
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_edge_intersect(prev, cur, ex0, ey0, dx, dy))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_edge_intersect(prev, cur, ex0, ey0, dx, dy))
            prev, prev_side = cur, cur_side
    return output


def _edge_intersect(p, q, ex, ey, dx, dy):
    dp = dx * (p[1] - ey) - dy * (p[0] - ex)
    dq = dx * (q[1] - ey) - dy * (q[0] - ex)
    t = dp / (dp - dq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    area = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    return area / 2.0


def intersection_volume(ca, yawa, da, cb, yawb, db):
    """Overlap volume of two vertical-axis boxes given raw parameters.

    Complex-safe; used directly by the detection loss gradient path.
    """
    fa = _footprint_corners(ca[0], ca[1], yawa, da[0], da[1])
    fb = _footprint_corners(cb[0], cb[1], yawb, db[0], db[1])
    inter2d = _polygon_area(_clip_polygon(fa, fb))
    lo = ca[2] - da[2] / 2.0, cb[2] - db[2] / 2.0
    hi = ca[2] + da[2] / 2.0, cb[2] + db[2] / 2.0
    dz = (hi[0] if _real(hi[0]) < _real(hi[1]) else hi[1]) - (
        lo[0] if _real(lo[0]) > _real(lo[1]) else lo[1]
    )
    if _real(dz) <= 0.0 or _real(inter2d) <= 0.0:
        return 0.0
    return inter2d * dz


def iou3_params(ca, yawa, da, cb, yawb, db):
    inter = intersection_volume(ca, yawa, da, cb, yawb, db)
    vol_a = da[0] * da[1] * da[2]
    vol_b = db[0] * db[1] * db[2]
    return inter / (vol_a + vol_b - inter)


def iou3(a: Obb3, b: Obb3) -> float:
    """Exact IoU of two gravity-aligned boxes (polygon clipping x 1-D overlap)."""
    return float(iou3_params(a.center, a.yaw, a.dims, b.center, b.yaw, b.dims))


def nms3(
    dets: list[Obb3],
    voxel_size: float | None = None,
    radius_voxels: float | None = 2.0,
    iou_min: float = 0.0,
) -> list[Obb3]:
    """Greedy score-descending suppression.

    A candidate is dropped when a kept box is both within the center-distance
    radius (when a radius is configured) and overlaps with IoU above iou_min.
    Passing radius_voxels=None disables the distance gate and suppresses on
    IoU alone (used for scene-level deduplication).
    """
    if radius_voxels is not None and radius_voxels < 0:
        raise ValueError("radius_voxels must be >= 0")
    if radius_voxels is not None and voxel_size is None:
        raise ValueError("voxel_size is required when radius_voxels is set")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[Obb3] = []
    for i in order:
        cand = dets[i]
        suppressed = False
        for k in kept:
            if radius_voxels is not None:
                dist = np.linalg.norm(cand.center - k.center)
                if dist > radius_voxels * voxel_size:
                    continue
            if iou3(cand, k) > iou_min:
                suppressed = True
                break
        if not suppressed:
            kept.append(cand)
    return kept


@dataclass(frozen=True)
class Box2:
    """Axis-aligned pixel rectangle [u0, u1] x [v0, v1]."""

    u0: float
    v0: float
    u1: float
    v1: float

    def center(self) -> np.ndarray:
        return np.array([(self.u0 + self.u1) / 2.0, (self.v0 + self.v1) / 2.0])

    def area(self) -> float:
        return max(0.0, self.u1 - self.u0) * max(0.0, self.v1 - self.v0)


def project_bbox2(obb: Obb3, cam, t_w_cam: geom.Pose) -> Box2 | None:
    """Axis-aligned hull of the validly projected box corners, clipped to
    the image; None when no corner projects validly."""
    from . import camera as _camera

    p_cam = t_w_cam.inverse().apply(obb.corners())
    uv, valid = _camera.project_points(cam, p_cam)
    if not valid.any():
        return None
    uv = uv[valid]
    u0, v0 = uv.min(axis=0)
    u1, v1 = uv.max(axis=0)
    return Box2(
        max(0.0, float(u0)),
        max(0.0, float(v0)),
        min(float(cam.width), float(u1)),
        min(float(cam.height), float(v1)),
    )


def iou2(a: Box2, b: Box2) -> float:
    iw = min(a.u1, b.u1) - max(a.u0, b.u0)
    ih = min(a.v1, b.v1) - max(a.v0, b.v0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area() + b.area() - inter
    return float(inter / union) if union > 0 else 0.0
