"""Pinhole and fisheye (Kannala-Brandt) camera models.

Conventions:
  - Pixel centers sit on integer coordinates; a coordinate is in bounds
    when 0 <= u < width and 0 <= v < height.
  - Pinhole depth is the z coordinate in the camera frame; fisheye depth
    is the Euclidean ray length. This matches how each model is rendered.
  - Camera objects are immutable and hashable; all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NoConvergence

# Cap for the max-linear construction: half field of view of 85 degrees
# (170 degrees full) keeps the focal length finite.
MAX_LINEAR_HALF_FOV = np.deg2rad(85.0)

_NEWTON_ITERS = 20
_NEWTON_TOL = 1e-10


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")


@dataclass(frozen=True)
class FisheyeCamera:
    """Kannala-Brandt model: r(theta) = theta + k1 th^3 + k2 th^5 + k3 th^7 + k4 th^9."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float
    k2: float
    k3: float
    k4: float
    width: int
    height: int
    valid_radius: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        limit = np.hypot(self.width, self.height) / 2.0 + max(abs(self.cx), abs(self.cy))
        if not 0 < self.valid_radius <= limit:
            raise ValueError(f"valid_radius {self.valid_radius!r} outside (0, {limit!r}]")

    @property
    def ks(self):
        return (self.k1, self.k2, self.k3, self.k4)


Camera = PinholeCamera | FisheyeCamera


@dataclass(frozen=True)
class Pixel:
    u: float
    v: float
    valid: bool


# The de-facto 640x480 intrinsics used by RGB-D scanning pipelines; only
# affects comparative field-of-view experiments.
SCANNET_LINEAR = PinholeCamera(fx=577.87, fy=577.87, cx=319.5, cy=239.5, width=640, height=480)


def _kb_forward(theta, ks):
    t2 = theta * theta
    return theta * (1.0 + t2 * (ks[0] + t2 * (ks[1] + t2 * (ks[2] + t2 * ks[3]))))


def _kb_forward_deriv(theta, ks):
    t2 = theta * theta
    return 1.0 + t2 * (3.0 * ks[0] + t2 * (5.0 * ks[1] + t2 * (7.0 * ks[2] + t2 * 9.0 * ks[3])))


@lru_cache(maxsize=64)
def _theta_max(cam: "FisheyeCamera") -> float:
    return float(_invert_kb(np.asarray(cam.valid_radius / cam.fx), cam.ks))


def project_points(cam: Camera, p_cam) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points to pixels.

    Returns (uv, valid) with uv shaped (..., 2). Invalid points (behind a
    pinhole, out of bounds, or outside the fisheye valid radius) keep their
    computed coordinates where finite but are flagged False.
    """
    p = np.asarray(p_cam, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if isinstance(cam, PinholeCamera):
        with np.errstate(divide="ignore", invalid="ignore"):
            u = cam.fx * x / z + cam.cx
            v = cam.fy * y / z + cam.cy
        valid = z > 1e-6
    else:
        rxy = np.hypot(x, y)
        theta = np.arctan2(rxy, z)
        r = _kb_forward(theta, cam.ks)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(rxy > 0, r / np.where(rxy > 0, rxy, 1.0), 0.0)
        u = cam.fx * scale * x + cam.cx
        v = cam.fy * scale * y + cam.cy
        rad = np.hypot(u - cam.cx, v - cam.cy)
        # the angle gate also rejects on-axis points behind the camera,
        # whose pixel radius degenerates to zero
        valid = (
            (rad <= cam.valid_radius)
            & (theta <= _theta_max(cam))
            & (np.sqrt(x * x + y * y + z * z) > 1e-6)
        )
    # tolerate round-off at the low edge, then clip so that valid pixels
    # always satisfy 0 <= u < width, 0 <= v < height
    valid = (
        valid
        & np.isfinite(u)
        & np.isfinite(v)
        & (u > -1e-6)
        & (u < cam.width)
        & (v > -1e-6)
        & (v < cam.height)
    )
    u = np.where(np.isfinite(u), np.maximum(u, 0.0), -1.0)
    v = np.where(np.isfinite(v), np.maximum(v, 0.0), -1.0)
    return np.stack([u, v], axis=-1), valid


def project(cam: Camera, p_cam) -> Pixel:
    uv, valid = project_points(cam, np.asarray(p_cam, dtype=np.float64).reshape(3))
    return Pixel(float(uv[0]), float(uv[1]), bool(valid))


def unproject_rays(cam: Camera, uv) -> np.ndarray:
    """Unit ray directions in the camera frame for pixel coordinates (..., 2).

    The fisheye polynomial is inverted with a damped Newton iteration;
    NoConvergence signals a calibration whose r(theta) cannot be inverted.
    """
    uv = np.asarray(uv, dtype=np.float64)
    xn = (uv[..., 0] - cam.cx) / cam.fx
    yn = (uv[..., 1] - cam.cy) / cam.fy
    if isinstance(cam, PinholeCamera):
        d = np.stack([xn, yn, np.ones_like(xn)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)
    r = np.hypot(xn, yn)
    theta = _invert_kb(r, cam.ks)
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(r > 0, sin_t / np.where(r > 0, r, 1.0), 0.0)
    return np.stack([ratio * xn, ratio * yn, cos_t], axis=-1)


def _invert_kb(r, ks) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    theta = r.copy()
    for _ in range(_NEWTON_ITERS):
        f = _kb_forward(theta, ks) - r
        if np.all(np.abs(f) < _NEWTON_TOL):
            break
        df = _kb_forward_deriv(theta, ks)
        step = np.where(np.abs(df) > 1e-12, f / np.where(np.abs(df) > 1e-12, df, 1.0), 0.0)
        # damp large steps so bad high-order coefficients cannot explode
        step = np.clip(step, -0.5, 0.5)
        theta = np.clip(theta - step, 0.0, np.pi)
    err = np.abs(_kb_forward(theta, ks) - r)
    if np.any(err > 1e-6):
        raise NoConvergence(
            f"fisheye polynomial inverse did not converge (max residual {err.max():g})"
        )
    return theta


def unproject(cam: Camera, px: Pixel | tuple, depth) -> np.ndarray:
    """Camera-frame point(s) for pixel(s) at the given depth.

    Depth is z for pinhole cameras and Euclidean ray length for fisheye,
    matching each model's rendering convention.
    """
    if isinstance(px, Pixel):
        uv = np.array([px.u, px.v])
    else:
        uv = np.asarray(px, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    d = unproject_rays(cam, uv)
    if isinstance(cam, PinholeCamera):
        scale = depth / d[..., 2]
    else:
        scale = depth
    return d * scale[..., None]


def fov_half_angle(cam: Camera) -> float:
    """Half field of view at the camera's outermost usable radius."""
    if isinstance(cam, PinholeCamera):
        corner = max(
            np.hypot(cam.cx, cam.cy),
            np.hypot(cam.width - 1 - cam.cx, cam.cy),
            np.hypot(cam.cx, cam.height - 1 - cam.cy),
            np.hypot(cam.width - 1 - cam.cx, cam.height - 1 - cam.cy),
        )
        return float(np.arctan2(corner, np.sqrt(cam.fx * cam.fy)))
    r_norm = cam.valid_radius / cam.fx
    return float(_invert_kb(np.asarray(r_norm), cam.ks))


def max_linear(fe: FisheyeCamera, target_wh: tuple[int, int]) -> PinholeCamera:
    """Largest pinhole camera of the target size whose diagonal field of view
    matches the fisheye's at its valid radius, capped at 170 degrees total."""
    w, h = int(target_wh[0]), int(target_wh[1])
    theta = min(fov_half_angle(fe), MAX_LINEAR_HALF_FOV)
    half_diag = np.hypot(w, h) / 2.0
    f = half_diag / np.tan(theta)
    return PinholeCamera(fx=f, fy=f, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, width=w, height=h)


def rectify_map(src: Camera, dst: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Source pixel coordinates for every destination pixel.

    Returns (grid, valid) with grid shaped (h, w, 2) holding continuous
    (u, v) source coordinates; destination pixels whose ray falls outside
    the source image (or its valid radius) are flagged False.
    """
    us, vs = np.meshgrid(np.arange(dst.width), np.arange(dst.height))
    uv = np.stack([us, vs], axis=-1).astype(np.float64)
    rays = unproject_rays(dst, uv)
    grid, valid = project_points(src, rays)
    return grid, valid


def remap_bilinear(image: np.ndarray, grid: np.ndarray, valid: np.ndarray, fill=np.nan):
    """Sample a (h, w) or (c, h, w) image at the rectify_map grid."""
    single = image.ndim == 2
    img = image[None] if single else image
    out = np.full((img.shape[0],) + grid.shape[:2], fill, dtype=np.float64)
    u = grid[..., 0][valid]
    v = grid[..., 1][valid]
    sampled = bilinear_sample(img, u, v)
    for c in range(img.shape[0]):
        out[c][valid] = sampled[c]
    return out[0] if single else out


def remap_depth(src: Camera, src_depth: np.ndarray, dst: Camera) -> np.ndarray:
    """Resample a depth map into another camera sharing the same pose.

    Handles the per-model depth conventions: samples are converted to ray
    lengths in the source and back to the destination's convention (z for
    pinhole, ray length for fisheye). Unmapped pixels are NaN.
    """
    grid, valid = rectify_map(src, dst)
    sampled = remap_bilinear(np.asarray(src_depth, dtype=np.float64), grid, valid)
    us, vs = np.meshgrid(np.arange(dst.width), np.arange(dst.height))
    dst_rays = unproject_rays(dst, np.stack([us, vs], axis=-1).astype(np.float64))
    if isinstance(src, PinholeCamera):
        # source depth is z along the (shared) ray: ray length = z / cos
        src_rays = unproject_rays(src, grid)
        with np.errstate(invalid="ignore", divide="ignore"):
            ray_len = sampled / src_rays[..., 2]
    else:
        ray_len = sampled
    if isinstance(dst, PinholeCamera):
        return ray_len * dst_rays[..., 2]
    return ray_len


def bilinear_sample(images: np.ndarray, u, v) -> np.ndarray:
    """Bilinear sample a stack of (c, h, w) images at continuous coordinates.

    Coordinates are clamped to the image border (edge replication), so any
    in-bounds coordinate per the camera convention is samplable.
    """
    c, h, w = images.shape
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, w - 1.0)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, h - 1.0)
    u0 = np.clip(np.floor(u).astype(np.int64), 0, w - 1)
    v0 = np.clip(np.floor(v).astype(np.int64), 0, h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    au = u - u0
    av = v - v0
    top = images[:, v0, u0] * (1 - au) + images[:, v0, u1] * au
    bot = images[:, v1, u0] * (1 - au) + images[:, v1, u1] * au
    return top * (1 - av) + bot * av
