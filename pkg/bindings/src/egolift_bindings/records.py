"""Conversions between plain records (the core's JSON schemas) and core types.

Records use the same field names and conventions as the core's files:
boxes follow the JSON-lines box schema, cameras the calibration schema,
poses the translation + wxyz-quaternion form used in volume headers.
"""

from __future__ import annotations

import numpy as np

from egolift import geom, obb
from egolift.camera import FisheyeCamera, PinholeCamera

from .errors import ShapeError


def require_array(value, shape_suffix, name, dtype=np.float64):
    arr = np.asarray(value)
    if arr.dtype.kind not in "fiu":
        raise ShapeError(f"{name} must be numeric, got dtype {arr.dtype}")
    if shape_suffix and arr.shape[-len(shape_suffix):] != shape_suffix:
        raise ShapeError(f"{name} must have trailing shape {shape_suffix}, got {arr.shape}")
    return np.ascontiguousarray(arr, dtype=dtype)


def require_matrix(value, ncols, name, dtype=np.float64):
    arr = require_array(value, (), name, dtype)
    if arr.ndim != 2 or arr.shape[1] != ncols:
        raise ShapeError(f"{name} must be (n, {ncols}), got {arr.shape}")
    return arr


def pose_from_record(rec) -> geom.Pose:
    """{"translation": [x, y, z], "quaternion_wxyz": [w, x, y, z]}"""
    try:
        t = require_array(rec["translation"], (3,), "translation").reshape(3)
        q = require_array(rec["quaternion_wxyz"], (4,), "quaternion_wxyz").reshape(4)
    except (KeyError, TypeError) as e:
        raise ShapeError(f"pose record must carry translation and quaternion_wxyz: {e}")
    return geom.Pose(geom.Rotation(geom.quat_to_mat(q)), t)


def pose_to_record(pose: geom.Pose) -> dict:
    return {
        "translation": [float(v) for v in pose.translation],
        "quaternion_wxyz": [float(v) for v in geom.mat_to_quat(pose.rotation.m)],
    }


def camera_from_record(rec):
    """Calibration-schema record: {"model": "pinhole" | "kannala_brandt", ...}"""
    try:
        model = rec["model"]
        if model == "pinhole":
            return PinholeCamera(
                fx=rec["fx"], fy=rec["fy"], cx=rec["cx"], cy=rec["cy"],
                width=rec["width"], height=rec["height"],
            )
        if model == "kannala_brandt":
            return FisheyeCamera(
                fx=rec["fx"], fy=rec["fy"], cx=rec["cx"], cy=rec["cy"],
                k1=rec["k1"], k2=rec["k2"], k3=rec["k3"], k4=rec["k4"],
                width=rec["width"], height=rec["height"],
                valid_radius=rec["valid_radius"],
            )
    except (KeyError, TypeError) as e:
        raise ShapeError(f"camera record missing field: {e}")
    raise ShapeError(f"unknown camera model {model!r}")


def box_from_record(rec) -> obb.Obb3:
    try:
        return obb.Obb3(
            center=require_array(rec["center"], (3,), "center").reshape(3),
            yaw=float(rec["yaw"]),
            dims=require_array(rec["dims"], (3,), "dims").reshape(3),
            class_probs=require_array(rec["class_probs"], (), "class_probs").reshape(-1),
            score=float(rec.get("score", 1.0)),
        )
    except (KeyError, TypeError) as e:
        raise ShapeError(f"box record missing field: {e}")
    except ValueError as e:
        raise ShapeError(str(e))


def box_to_record(box: obb.Obb3, t: float | None = None) -> dict:
    return {
        "center": [float(v) for v in box.center],
        "yaw": float(box.yaw),
        "dims": [float(v) for v in box.dims],
        "class": box.class_id,
        "class_probs": [float(v) for v in box.class_probs],
        "score": float(box.score),
        "t": t,
    }
