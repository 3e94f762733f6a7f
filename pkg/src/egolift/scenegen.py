"""Deterministic synthetic scenes: a shoebox room with gravity-aligned
boxes on the floor, eye-height trajectories, ray-cast depth rendering and
noisy surface point sampling with per-point visibility.

Everything is a pure function of its seeds, which is what makes the
downstream fusion / tracking / metric stages testable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import camera as _camera
from . import geom, obb
from .bvh import TriBvh
from .errors import PlacementFailure
from .fusion import TriangleMesh, mesh_from_arrays
from .voxel import PointCloudWithVisibility

EYE_HEIGHT = 1.5
MAX_SPEED = 0.8  # m/s
MAX_PITCH = np.deg2rad(30.0)
_PLACEMENT_ATTEMPTS = 1000
_EDGE_BAND = 0.1  # m; "near an edge" band for biased sampling
_MAX_OBSERVERS = 6


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    room: tuple = (5.0, 4.0, 3.0)  # extents in meters (x, y, z), floor at z=0
    n_boxes: tuple = (4, 8)  # inclusive range
    box_dims_min: tuple = (0.4, 0.4, 0.4)
    box_dims_max: tuple = (1.2, 1.2, 1.5)
    classes: tuple = ("chair", "table", "sofa", "lamp", "shelf")
    n_points: int = 4000
    point_sigma: float = 0.01
    edge_fraction: float = 0.7
    det_center_sigma: float = 0.1
    det_dim_sigma: float = 0.0
    det_yaw_sigma: float = np.deg2rad(10.0)
    det_false_positive_rate: float = 0.1
    det_score_range: tuple = (0.5, 1.0)

    def __post_init__(self):
        if min(self.room) <= 0:
            raise ValueError("room extents must be positive")
        if len(self.classes) < 1:
            raise ValueError("need at least one class")


@dataclass(frozen=True)
class Scene:
    room_mesh: TriangleMesh
    obbs: tuple
    room: tuple  # extents, same convention as SceneSpec.room


def _rect_tris(corners):
    """Two triangles for a rectangle given as 4 corners in order."""
    return [(corners[0], corners[1], corners[2]), (corners[0], corners[2], corners[3])]


def _room_rectangles(room):
    ex, ey, ez = room
    x0, x1 = -ex / 2.0, ex / 2.0
    y0, y1 = -ey / 2.0, ey / 2.0
    z0, z1 = 0.0, ez
    return [
        [(x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0)],  # floor
        [(x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)],  # ceiling
        [(x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1)],  # y = y0 wall
        [(x0, y1, z0), (x1, y1, z0), (x1, y1, z1), (x0, y1, z1)],  # y = y1 wall
        [(x0, y0, z0), (x0, y1, z0), (x0, y1, z1), (x0, y0, z1)],  # x = x0 wall
        [(x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1)],  # x = x1 wall
    ]


def _mesh_from_rectangles(rects) -> TriangleMesh:
    verts = []
    faces = []
    for rect in rects:
        base = len(verts)
        verts.extend(rect)
        faces.append([base, base + 1, base + 2])
        faces.append([base, base + 2, base + 3])
    return mesh_from_arrays(np.asarray(verts, dtype=np.float64), np.asarray(faces))


def box_rectangles(box: obb.Obb3):
    """The six rectangular faces of a box, each as 4 ordered corners."""
    c = box.corners()
    # corners() ordering: (+++, ++-, +-+, +--, -++, -+-, --+, ---)
    idx = [
        (0, 2, 3, 1),  # +x face
        (4, 5, 7, 6),  # -x face
        (0, 1, 5, 4),  # +y face
        (2, 6, 7, 3),  # -y face
        (0, 4, 6, 2),  # +z face
        (1, 3, 7, 5),  # -z face
    ]
    return [[c[a], c[b], c[d], c[e]] for a, b, d, e in idx]


def box_mesh(box: obb.Obb3) -> TriangleMesh:
    return _mesh_from_rectangles(box_rectangles(box))


def scene_mesh(scene: Scene) -> TriangleMesh:
    """The stored room mesh plus all box surfaces, merged into one mesh."""
    verts = [scene.room_mesh.vertices]
    faces = [scene.room_mesh.faces]
    offset = len(scene.room_mesh.vertices)
    for box in scene.obbs:
        m = box_mesh(box)
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return mesh_from_arrays(np.concatenate(verts), np.concatenate(faces))


def generate_scene(spec: SceneSpec) -> Scene:
    """Boxes on the floor with pairwise zero overlap, inside the room."""
    rng = np.random.default_rng(spec.seed)
    ex, ey, _ = spec.room
    n = int(rng.integers(spec.n_boxes[0], spec.n_boxes[1] + 1))
    boxes: list[obb.Obb3] = []
    for _ in range(n):
        placed = False
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            dims = rng.uniform(spec.box_dims_min, spec.box_dims_max)
            yaw = rng.uniform(-np.pi, np.pi)
            half_diag = np.hypot(dims[0], dims[1]) / 2.0
            margin_x = ex / 2.0 - half_diag - 0.1
            margin_y = ey / 2.0 - half_diag - 0.1
            if margin_x <= 0 or margin_y <= 0:
                continue
            center = np.array(
                [rng.uniform(-margin_x, margin_x), rng.uniform(-margin_y, margin_y), dims[2] / 2.0]
            )
            probs = np.zeros(len(spec.classes))
            probs[rng.integers(len(spec.classes))] = 1.0
            cand = obb.Obb3(center, yaw, dims, probs, score=1.0)
            if all(obb.iou3(cand, other) == 0.0 for other in boxes):
                # keep a small clearance so adjacent boxes stay resolvable
                grown = obb.Obb3(center, yaw, dims + 0.04, probs)
                if all(obb.iou3(grown, other) == 0.0 for other in boxes):
                    boxes.append(cand)
                    placed = True
                    break
        if not placed:
            raise PlacementFailure(
                f"could not place box {len(boxes) + 1} of {n} in {_PLACEMENT_ATTEMPTS} attempts"
            )
    return Scene(
        room_mesh=_mesh_from_rectangles(_room_rectangles(spec.room)),
        obbs=tuple(boxes),
        room=tuple(spec.room),
    )


def pose_from_yaw_pitch(position, yaw, pitch) -> geom.Pose:
    """Camera-to-world pose: optical axis from yaw/pitch, y roughly down."""
    rz = np.array(
        [np.cos(pitch) * np.cos(yaw), np.cos(pitch) * np.sin(yaw), np.sin(pitch)]
    )
    rx = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    ry = np.cross(rz, rx)
    return geom.Pose(geom.Rotation(np.column_stack([rx, ry, rz])), np.asarray(position, float))


def simulate_trajectory(
    scene: Scene, seed: int, duration: float, rate: float = 10.0
) -> list[tuple[float, geom.Pose]]:
    """Smooth eye-height random walk with yaw-dominant rotation.

    Pitch stays within MAX_PITCH so gravity alignment is well defined for
    every pose; positions keep a margin to the walls.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    ex, ey, ez = scene.room
    margin = 0.4
    n = int(round(duration * rate))
    pos = np.array(
        [
            rng.uniform(-ex / 2 + margin, ex / 2 - margin),
            rng.uniform(-ey / 2 + margin, ey / 2 - margin),
            min(EYE_HEIGHT, ez - 0.3),
        ]
    )
    yaw = rng.uniform(-np.pi, np.pi)
    pitch = 0.0
    vel = np.zeros(2)
    out = []
    for i in range(n):
        out.append((i / rate, pose_from_yaw_pitch(pos, yaw, pitch)))
        vel = 0.85 * vel + rng.normal(scale=0.12, size=2)
        speed = np.linalg.norm(vel)
        if speed > MAX_SPEED:
            vel *= MAX_SPEED / speed
        pos = pos + np.array([vel[0], vel[1], 0.0]) / rate
        for axis, lim in ((0, ex / 2 - margin), (1, ey / 2 - margin)):
            if pos[axis] > lim:
                pos[axis] = lim
                vel[axis] = -abs(vel[axis])
            elif pos[axis] < -lim:
                pos[axis] = -lim
                vel[axis] = abs(vel[axis])
        yaw = geom.wrap_angle(yaw + np.clip(rng.normal(scale=0.12), -0.3, 0.3))
        pitch = np.clip(pitch + rng.normal(scale=0.04), -MAX_PITCH, MAX_PITCH)
    return out


class DepthRenderer:
    """Caches the scene's triangle tree and per-camera ray grids."""

    def __init__(self, scene: Scene):
        self.tree = TriBvh(scene_mesh(scene).triangles())
        self._ray_cache: dict = {}

    def _rays(self, cam):
        if cam not in self._ray_cache:
            us, vs = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
            uv = np.stack([us, vs], axis=-1).astype(np.float64)
            dirs = _camera.unproject_rays(cam, uv)
            if isinstance(cam, _camera.FisheyeCamera):
                rad = np.hypot(uv[..., 0] - cam.cx, uv[..., 1] - cam.cy)
                usable = rad <= cam.valid_radius
            else:
                usable = np.ones(dirs.shape[:2], dtype=bool)
            self._ray_cache[cam] = (dirs, usable)
        return self._ray_cache[cam]

    def render(self, cam, t_w_cam: geom.Pose) -> np.ndarray:
        """Depth map with NaN at pixels that miss all geometry or sit
        outside the fisheye valid radius. Pinhole depth is z, fisheye
        depth is ray length."""
        dirs, usable = self._rays(cam)
        world_dirs = dirs.reshape(-1, 3) @ t_w_cam.rotation.m.T
        origins = np.broadcast_to(t_w_cam.translation, world_dirs.shape)
        t = self.tree.raycast(origins, world_dirs).reshape(dirs.shape[:2])
        if isinstance(cam, _camera.PinholeCamera):
            depth = t * dirs[..., 2]
        else:
            depth = t.copy()
        depth[~usable] = np.nan
        depth[~np.isfinite(depth)] = np.nan
        return depth


def render_depth(scene: Scene, cam, t_w_cam: geom.Pose) -> np.ndarray:
    return DepthRenderer(scene).render(cam, t_w_cam)


def _scene_rectangles(scene: Scene):
    rects = _room_rectangles(scene.room)
    for box in scene.obbs:
        rects.extend(box_rectangles(box))
    return [np.asarray(r, dtype=np.float64) for r in rects]


def _sample_on_rectangles(rng, rects, n, edge_band=None):
    """Uniform area-weighted samples; with edge_band, samples stay within
    that distance of the rectangle boundary."""
    sides = [(r[1] - r[0], r[3] - r[0]) for r in rects]
    lens = np.array([(np.linalg.norm(a), np.linalg.norm(b)) for a, b in sides])
    if edge_band is None:
        areas = lens[:, 0] * lens[:, 1]
    else:
        inner = np.maximum(lens - 2 * edge_band, 0.0)
        areas = lens[:, 0] * lens[:, 1] - inner[:, 0] * inner[:, 1]
    probs = areas / areas.sum()
    picks = rng.choice(len(rects), size=n, p=probs)
    out = np.empty((n, 3))
    for i, ri in enumerate(picks):
        la, lb = lens[ri]
        if edge_band is None:
            u, v = rng.uniform(0, la), rng.uniform(0, lb)
        else:
            while True:
                u, v = rng.uniform(0, la), rng.uniform(0, lb)
                border = min(u, la - u, v, lb - v)
                if border <= edge_band:
                    break
        a, b = sides[ri]
        out[i] = rects[ri][0] + a / la * u + b / lb * v
    return out


def sample_semidense(
    scene: Scene, trajectory: list[tuple[float, geom.Pose]], spec: SceneSpec
) -> PointCloudWithVisibility:
    """Noisy surface points with the camera centers that can see them.

    Candidates are drawn on the scene surfaces, biased toward geometric
    edges; visibility is established by casting rays from a subset of the
    trajectory's camera centers. Points nobody sees are dropped, then
    isotropic Gaussian noise is applied.
    """
    if not trajectory:
        raise ValueError("trajectory must not be empty")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7]))
    rects = _scene_rectangles(scene)
    n_edge = int(round(spec.n_points * spec.edge_fraction))
    candidates = np.concatenate(
        [
            _sample_on_rectangles(rng, rects, n_edge, edge_band=_EDGE_BAND),
            _sample_on_rectangles(rng, rects, spec.n_points - n_edge),
        ]
    )
    tree = TriBvh(scene_mesh(scene).triangles())
    stride = max(1, len(trajectory) // 40)
    poses = trajectory[::stride]
    observers: list[list[np.ndarray]] = [[] for _ in range(len(candidates))]
    for _, pose in poses:
        c = pose.translation
        delta = candidates - c
        dist = np.linalg.norm(delta, axis=1)
        ok = dist > 1e-6
        dirs = np.where(ok[:, None], delta / np.maximum(dist, 1e-12)[:, None], 0.0)
        # in front of the camera and inside the image
        p_cam = pose.inverse().apply(candidates)
        _, img_ok = _camera.project_points(_VIS_CAMERA, p_cam)
        cast = ok & img_ok
        if not cast.any():
            continue
        t = tree.raycast(np.broadcast_to(c, dirs[cast].shape), dirs[cast])
        visible = np.abs(t - dist[cast]) < 1e-4
        for idx, vis in zip(np.nonzero(cast)[0], visible):
            if vis and len(observers[idx]) < _MAX_OBSERVERS:
                observers[idx].append(c.copy())
    keep = [i for i, obs in enumerate(observers) if obs]
    points = candidates[keep]
    if spec.point_sigma > 0:
        points = points + rng.normal(scale=spec.point_sigma, size=points.shape)
    return PointCloudWithVisibility(
        points=points, observations=tuple(np.asarray(observers[i]) for i in keep)
    )


# wide synthetic camera used only to decide what a wearer could plausibly
# see during semi-dense point generation
_VIS_CAMERA = _camera.FisheyeCamera(
    fx=110.0, fy=110.0, cx=120.0, cy=120.0, k1=0.0, k2=0.0, k3=0.0, k4=0.0,
    width=240, height=240, valid_radius=118.0,
)


def jitter_detections(
    scene: Scene, spec: SceneSpec, seed: int, class_confidence: float = 0.9
) -> list[obb.Obb3]:
    """One noisy detection per scene box plus Poisson false positives.

    Centers, dims and yaw are Gaussian-jittered per the spec parameters;
    scores are uniform in det_score_range. False-positive count is Poisson
    with mean det_false_positive_rate * n_boxes.
    """
    rng = np.random.default_rng(seed)
    k = len(spec.classes)
    out = []
    for box in scene.obbs:
        center = box.center + rng.normal(scale=spec.det_center_sigma, size=3)
        dims = np.maximum(box.dims + rng.normal(scale=spec.det_dim_sigma, size=3), 0.05)
        yaw = box.yaw + rng.normal(scale=spec.det_yaw_sigma)
        probs = np.full(k, (1.0 - class_confidence) / max(k - 1, 1))
        probs[box.class_id] = class_confidence if k > 1 else 1.0
        out.append(
            obb.Obb3(center, yaw, dims, probs, score=float(rng.uniform(*spec.det_score_range)))
        )
    lam = spec.det_false_positive_rate * max(len(scene.obbs), 1)
    for _ in range(rng.poisson(lam)):
        ex, ey, ez = scene.room
        center = np.array(
            [rng.uniform(-ex / 2, ex / 2), rng.uniform(-ey / 2, ey / 2), rng.uniform(0.2, ez - 0.5)]
        )
        dims = rng.uniform(0.3, 1.0, size=3)
        probs = np.full(k, (1.0 - class_confidence) / max(k - 1, 1))
        probs[rng.integers(k)] = class_confidence if k > 1 else 1.0
        out.append(
            obb.Obb3(center, rng.uniform(-np.pi, np.pi), dims, probs,
                     score=float(rng.uniform(*spec.det_score_range)))
        )
    return out
