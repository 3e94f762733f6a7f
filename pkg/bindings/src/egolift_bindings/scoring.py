"""Stateless metric entry points over plain arrays and records."""

from __future__ import annotations

import numpy as np

from egolift import metrics
from egolift.errors import EgoliftError
from egolift.fusion import TriangleMesh

from .errors import CoreError, ShapeError
from .records import box_from_record, require_matrix


def _mesh(vertices, faces, name) -> TriangleMesh:
    v = require_matrix(vertices, 3, f"{name} vertices")
    f = require_matrix(faces, 3, f"{name} faces", dtype=np.int64)
    try:
        return TriangleMesh(v, f)
    except ValueError as e:
        raise ShapeError(f"{name}: {e}")


def surface_metrics(
    pred_vertices, pred_faces, gt_vertices, gt_faces,
    n: int = 10_000, tau: float = 0.05, seed: int = 0,
) -> dict:
    """Accuracy / completeness / precision / recall between two meshes."""
    pred = _mesh(pred_vertices, pred_faces, "pred")
    gt = _mesh(gt_vertices, gt_faces, "gt")
    try:
        return metrics.surface_metrics(pred, gt, n=n, tau=tau, seed=seed).as_dict()
    except EgoliftError as e:
        raise CoreError(str(e)) from e


def average_precision(detections: list[dict], references: list[dict],
                      iou_thresholds=None) -> dict:
    """Detection mAP over box records (the JSON-lines schema)."""
    dets = [box_from_record(r) for r in detections]
    gts = [box_from_record(r) for r in references]
    try:
        if iou_thresholds is None:
            m = metrics.average_precision(dets, gts)
        else:
            m = metrics.average_precision(dets, gts, tuple(iou_thresholds))
    except EgoliftError as e:
        raise CoreError(str(e)) from e
    return m.as_dict()
