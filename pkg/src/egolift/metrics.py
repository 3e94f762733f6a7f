"""Benchmark scoring: mesh-to-mesh surface metrics and detection mAP.

Surface quality compares meshes properly (sampled points against the
closest reference *face*, not vertex); detections are scored per class
with greedy matching over a sweep of overlap thresholds. All sampling is
seeded so reported numbers are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import obb as _obb
from .bvh import TriBvh, point_tri_dist_brute
from .errors import EmptyMesh
from .fusion import TriangleMesh

DEFAULT_SAMPLES = 10_000
DEFAULT_TAU = 0.05
# overlap threshold 0.0 means "any strictly positive overlap"; a literal
# >= 0 would match fully disjoint boxes
DEFAULT_IOU_THRESHOLDS = tuple(np.round(np.arange(0.0, 0.501, 0.05), 2))


@dataclass(frozen=True)
class SurfaceMetrics:
    acc: float  # mean predicted-to-reference distance (m)
    comp: float  # mean reference-to-predicted distance (m)
    prec: float  # fraction of predicted samples within tau
    recal: float  # fraction of reference samples within tau

    def as_dict(self) -> dict:
        return {"acc": self.acc, "comp": self.comp, "prec": self.prec, "recal": self.recal}


@dataclass(frozen=True)
class DetectionMetrics:
    map: float
    per_class_ap: dict  # class id -> list of AP per threshold
    iou_thresholds: tuple

    def as_dict(self) -> dict:
        return {
            "map": self.map,
            "iou_thresholds": list(self.iou_thresholds),
            "per_class_ap": {str(k): list(v) for k, v in self.per_class_ap.items()},
        }


def sample_mesh(mesh: TriangleMesh, n: int = DEFAULT_SAMPLES, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform surface samples via barycentric coordinates."""
    if mesh.is_empty():
        raise EmptyMesh("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    probs = areas / areas.sum()
    faces = rng.choice(len(areas), size=n, p=probs)
    tri = mesh.triangles()[faces]
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])


def point_mesh_dist(points: np.ndarray, mesh: TriangleMesh, brute_force: bool = False) -> np.ndarray:
    """Exact distance from each point to the closest mesh face."""
    if mesh.is_empty():
        raise EmptyMesh("cannot measure distance to an empty mesh")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if brute_force:
        return point_tri_dist_brute(pts, mesh.triangles())
    return TriBvh(mesh.triangles()).point_distances(pts)


def surface_metrics(
    pred: TriangleMesh,
    gt: TriangleMesh,
    n: int = DEFAULT_SAMPLES,
    tau: float = DEFAULT_TAU,
    seed: int = 0,
) -> SurfaceMetrics:
    """Accuracy/completeness and their within-tau fractions."""
    d_pred = point_mesh_dist(sample_mesh(pred, n, seed), gt)
    d_gt = point_mesh_dist(sample_mesh(gt, n, seed + 1), pred)
    return SurfaceMetrics(
        acc=float(d_pred.mean()),
        comp=float(d_gt.mean()),
        prec=float((d_pred < tau).mean()),
        recal=float((d_gt < tau).mean()),
    )


def point_accuracy(points: np.ndarray, gt: TriangleMesh, tau: float = DEFAULT_TAU):
    """Accuracy-only evaluation for point-cloud inputs (no completeness)."""
    d = point_mesh_dist(points, gt)
    return float(d.mean()), float((d < tau).mean())


def _ap_from_pr(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """Area under the precision envelope (all-points interpolation)."""
    mrec = np.concatenate([[0.0], recalls, [1.0]])
    mpre = np.concatenate([[0.0], precisions, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def _class_ap(dets: list[_obb.Obb3], gts: list[_obb.Obb3], threshold: float) -> float:
    if not gts:
        raise ValueError("per-class AP needs at least one reference box")
    if not dets:
        return 0.0
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    matched = [False] * len(gts)
    tp = np.zeros(len(order))
    for rank, di in enumerate(order):
        best_iou = 0.0
        best_gi = -1
        for gi, g in enumerate(gts):
            if matched[gi]:
                continue
            iou = _obb.iou3(dets[di], g)
            if iou > best_iou:
                best_iou = iou
                best_gi = gi
        hit = best_iou >= threshold if threshold > 0.0 else best_iou > 0.0
        if hit and best_gi >= 0:
            matched[best_gi] = True
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(order) + 1)
    return _ap_from_pr(cum_tp / len(gts), cum_tp / ranks)


def average_precision(
    dets: list[_obb.Obb3],
    gts: list[_obb.Obb3],
    iou_thresholds=DEFAULT_IOU_THRESHOLDS,
) -> DetectionMetrics:
    """Mean AP over overlap thresholds and classes.

    Boxes carry their own score and class distribution; a detection counts
    for the class of its probability argmax. Classes without any reference
    instance are excluded from the mean.
    """
    thresholds = tuple(float(t) for t in iou_thresholds)
    if sorted(thresholds) != list(thresholds):
        raise ValueError("iou_thresholds must be sorted ascending")
    classes = sorted({g.class_id for g in gts})
    per_class: dict[int, list[float]] = {}
    for c in classes:
        class_dets = [d for d in dets if d.class_id == c]
        class_gts = [g for g in gts if g.class_id == c]
        per_class[c] = [_class_ap(class_dets, class_gts, t) for t in thresholds]
    if per_class:
        mean_ap = float(np.mean([np.mean(aps) for aps in per_class.values()]))
    else:
        mean_ap = 0.0
    return DetectionMetrics(map=mean_ap, per_class_ap=per_class, iou_thresholds=thresholds)
