"""Handle objects owning mutable core state (scenes and fusion volumes).

A handle is single-writer and becomes unusable after close(); closing
twice raises ClosedHandleError rather than silently passing, so resource
bugs in the host pipeline surface immediately.
"""

from __future__ import annotations

import functools

from egolift import fusion, tracker, voxel
from egolift.errors import EgoliftError

from .errors import ClosedHandleError, CoreError, ShapeError
from .records import (
    box_from_record, box_to_record, camera_from_record, pose_from_record, require_array,
)


def _core_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EgoliftError as e:
            raise CoreError(str(e)) from e

    return wrapper


class _Handle:
    _closed = False

    def _check_open(self):
        if self._closed:
            raise ClosedHandleError(f"{type(self).__name__} handle is closed")

    def close(self) -> None:
        self._check_open()
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if not self._closed:
            self.close()


class TrackerSession(_Handle):
    """Owns one tracked scene; feed detection records per snippet."""

    def __init__(self, config: dict | None = None):
        cfg = dict(config or {})
        if "weights" in cfg:
            cfg["weights"] = tuple(float(w) for w in cfg["weights"])
        try:
            self._cfg = tracker.TrackerConfig(**cfg)
        except TypeError as e:
            raise ShapeError(f"bad tracker config: {e}")
        self._state = tracker.SceneState()

    @_core_errors
    def step(self, detections: list[dict], t: float,
             camera: dict | None = None, pose: dict | None = None) -> int:
        """Advance one snippet; returns the current track count."""
        self._check_open()
        boxes = [box_from_record(r) for r in detections]
        cam = camera_from_record(camera) if camera is not None else None
        t_w_cam = pose_from_record(pose) if pose is not None else None
        self._state = tracker.step(self._state, boxes, float(t), cam, t_w_cam, self._cfg)
        return len(self._state.tracks)

    def scene_boxes(self, confirmed_only: bool = True) -> list[dict]:
        """Current scene as box records (final-output view by default)."""
        self._check_open()
        if confirmed_only:
            boxes = self._state.confirmed_boxes(self._cfg.n_min)
        else:
            boxes = self._state.boxes()
        return [box_to_record(b, t=self._state.time) for b in boxes]


class TsdfFusion(_Handle):
    """Owns a truncated-signed-distance volume fed by depth maps."""

    def __init__(self, dims, voxel_size: float, pose: dict, truncation: float | None = None):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3:
            raise ShapeError("dims must be (D, H, W)")
        try:
            self._vol = fusion.TsdfVolume.empty(
                pose_from_record(pose), dims, float(voxel_size), truncation
            )
        except ValueError as e:
            raise ShapeError(str(e))

    @_core_errors
    def integrate_depth(self, depth, camera: dict, pose: dict) -> None:
        self._check_open()
        depth = require_array(depth, (), "depth")
        if depth.ndim != 2:
            raise ShapeError(f"depth must be 2-D, got shape {depth.shape}")
        fusion.integrate_depth(self._vol, depth, camera_from_record(camera),
                               pose_from_record(pose))

    @_core_errors
    def extract_mesh(self, iso: float = 0.0, min_obs: float = 2.0):
        """Returns (vertices (V, 3) float64, faces (F, 3) int64)."""
        self._check_open()
        mesh = fusion.marching_cubes(
            self._vol.tsdf, self._vol.weights, iso, min_obs,
            self._vol.grid.pose, self._vol.grid.voxel_size,
        )
        return mesh.vertices, mesh.faces

    def arrays(self) -> dict:
        self._check_open()
        return {"tsdf": self._vol.tsdf.copy(), "weights": self._vol.weights.copy()}


class OccupancyFusion(_Handle):
    """Owns a global occupancy volume fed by local occupancy grids."""

    def __init__(self, dims, voxel_size: float, pose: dict):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3:
            raise ShapeError("dims must be (D, H, W)")
        try:
            self._vol = fusion.OccupancyVolume.empty(
                pose_from_record(pose), dims, float(voxel_size)
            )
        except ValueError as e:
            raise ShapeError(str(e))

    @_core_errors
    def integrate(self, local_occ, local_pose: dict, local_voxel_size: float) -> None:
        self._check_open()
        local_occ = require_array(local_occ, (), "local_occ")
        if local_occ.ndim != 3:
            raise ShapeError(f"local_occ must be 3-D, got shape {local_occ.shape}")
        grid = voxel.VoxelGrid(
            pose_from_record(local_pose), local_occ.shape, float(local_voxel_size)
        )
        fusion.integrate_occupancy(self._vol, local_occ, grid)

    @_core_errors
    def extract_mesh(self, iso: float = 0.5, min_obs: float = 5.0):
        self._check_open()
        mesh = fusion.marching_cubes(
            self._vol.occ, self._vol.counts, iso, min_obs,
            self._vol.grid.pose, self._vol.grid.voxel_size,
        )
        return mesh.vertices, mesh.faces

    def arrays(self) -> dict:
        self._check_open()
        return {"occ": self._vol.occ.copy(), "counts": self._vol.counts.copy()}
