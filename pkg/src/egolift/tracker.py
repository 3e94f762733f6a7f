"""Sequence-level persistence of box detections.

Each step associates incoming detections to tracked boxes with Hungarian
matching over a weighted cost, folds matches into running averages (poses
averaged on the SE(3) manifold), instantiates confident leftovers, prunes
tracks that never got confirmed, and deduplicates the scene.

A scene state is single-writer: call step serially per scene. Distinct
scenes are independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import geom, obb
from .errors import NearPiRotation, NonMonotonicTime


@dataclass(frozen=True)
class TrackerConfig:
    weights: tuple = (8.0, 0.0, 1.0, 2.0, 0.0)  # class, bbox2, bbox3, iou2d, iou3d
    p_inst: float = 0.5
    p_assoc: float | None = None  # defaults to p_inst - 0.05
    iou_gate: float = 0.2
    n_min: int = 2
    t_inst: float = 1.0
    dedup_iou3: float = 0.1
    dedup_iou2: float = 0.5

    def __post_init__(self):
        if self.p_assoc is None:
            object.__setattr__(self, "p_assoc", max(0.0, self.p_inst - 0.05))
        if not (0.0 <= self.p_assoc <= self.p_inst <= 1.0):
            raise ValueError("need 0 <= p_assoc <= p_inst <= 1")
        for v in (self.iou_gate, self.dedup_iou3, self.dedup_iou2):
            if not 0.0 <= v <= 1.0:
                raise ValueError("thresholds must be in [0, 1]")


@dataclass(frozen=True)
class TrackedObject:
    obb: obb.Obb3
    n: int
    t_created: float
    t_last: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("observation count must be >= 1")
        if self.t_last < self.t_created:
            raise ValueError("t_last must be >= t_created")

    def pose(self) -> geom.Pose:
        return geom.Pose(geom.Rotation.about_z(self.obb.yaw), self.obb.center)


@dataclass(frozen=True)
class SceneState:
    tracks: tuple = ()
    time: float = float("-inf")

    def boxes(self) -> list[obb.Obb3]:
        return [t.obb for t in self.tracks]

    def confirmed_boxes(self, n_min: int = 2) -> list[obb.Obb3]:
        """Final-output view: only tracks observed at least n_min times.

        During a sequence young tracks get a grace period before removal;
        once the stream ends they can never be confirmed, so sequence-level
        consumers read this instead of boxes().
        """
        return [t.obb for t in self.tracks if t.n >= n_min]


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment of size min(M, N) on an M x N matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if not np.isfinite(cost).all():
        raise ValueError("assignment costs must be finite")
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def assoc_cost(
    track: TrackedObject,
    det: obb.Obb3,
    cam=None,
    t_w_cam: geom.Pose | None = None,
    weights=(8.0, 0.0, 1.0, 2.0, 0.0),
) -> float:
    """Weighted sum of class, 2D-center, 3D-center, 2D-IoU and 3D-IoU costs.

    When either box fails to project (or no camera is given), the 2D terms
    contribute zero so purely 3D evidence can still match.
    """
    w1, w2, w3, w4, w5 = weights
    c_class = 1.0 - float(det.class_probs[track.obb.class_id])
    c_bbox3 = float(np.linalg.norm(track.obb.center - det.center))
    c_iou3 = 1.0 - obb.iou3(track.obb, det)
    c_bbox2 = 0.0
    c_iou2 = 0.0
    if cam is not None and t_w_cam is not None and (w2 != 0.0 or w4 != 0.0):
        bt = obb.project_bbox2(track.obb, cam, t_w_cam)
        bd = obb.project_bbox2(det, cam, t_w_cam)
        if bt is not None and bd is not None:
            c_bbox2 = float(np.linalg.norm(bt.center() - bd.center()))
            c_iou2 = 1.0 - obb.iou2(bt, bd)
    return w1 * c_class + w2 * c_bbox2 + w3 * c_bbox3 + w4 * c_iou2 + w5 * c_iou3


def update_track(track: TrackedObject, det: obb.Obb3, t: float | None = None) -> TrackedObject:
    """Running average of dims, class distribution, score and pose.

    The pose moves along the manifold by 1/n' of its difference to the
    detection; when that difference sits on the rotation branch cut the
    pose is kept and only the linear quantities are averaged.
    """
    n_new = track.n + 1
    dims = (track.obb.dims * track.n + det.dims) / n_new
    probs = (track.obb.class_probs * track.n + det.class_probs) / n_new
    score = (track.obb.score * track.n + det.score) / n_new
    pose = track.pose()
    det_pose = geom.Pose(geom.Rotation.about_z(det.yaw), det.center)
    try:
        delta = geom.pose_boxminus(pose, det_pose)
        pose = pose.compose(geom.se3_exp(delta.scaled(1.0 / n_new)))
    except NearPiRotation:
        pass
    r = pose.rotation.m
    merged = obb.Obb3(
        center=pose.translation,
        yaw=float(np.arctan2(r[1, 0], r[0, 0])),
        dims=dims,
        class_probs=probs,
        score=score,
    )
    return TrackedObject(
        obb=merged,
        n=n_new,
        t_created=track.t_created,
        t_last=track.t_last if t is None else t,
    )


def _dedup(tracks: list[TrackedObject], cfg: TrackerConfig, cam, t_w_cam) -> list[TrackedObject]:
    # a well-observed track must never be displaced by a fresh duplicate,
    # so observation count outranks score
    order = sorted(range(len(tracks)), key=lambda i: (-tracks[i].n, -tracks[i].obb.score, i))
    kept: list[int] = []
    boxes2 = {}
    if cam is not None and t_w_cam is not None:
        boxes2 = {i: obb.project_bbox2(tracks[i].obb, cam, t_w_cam) for i in order}
    for i in order:
        dup = False
        for j in kept:
            if obb.iou3(tracks[i].obb, tracks[j].obb) > cfg.dedup_iou3:
                dup = True
                break
            bi, bj = boxes2.get(i), boxes2.get(j)
            if bi is not None and bj is not None and obb.iou2(bi, bj) > cfg.dedup_iou2:
                dup = True
                break
        if not dup:
            kept.append(i)
    kept.sort()
    return [tracks[i] for i in kept]


def step(
    scene: SceneState,
    dets: list[obb.Obb3],
    t: float,
    cam=None,
    t_w_cam: geom.Pose | None = None,
    cfg: TrackerConfig = TrackerConfig(),
) -> SceneState:
    """One association / update / removal round; returns the new state."""
    if t < scene.time:
        raise NonMonotonicTime(f"step time {t!r} is before scene time {scene.time!r}")
    survivors = [d for d in dets if d.score >= cfg.p_assoc]
    tracks = list(scene.tracks)

    matched_dets: set[int] = set()
    if tracks and survivors:
        cost = np.array(
            [[assoc_cost(tr, d, cam, t_w_cam, cfg.weights) for d in survivors] for tr in tracks]
        )
        for ti, di in hungarian(cost):
            tr, d = tracks[ti], survivors[di]
            ok3 = obb.iou3(tr.obb, d) >= cfg.iou_gate
            ok2 = False
            if not ok3 and cam is not None and t_w_cam is not None:
                bt = obb.project_bbox2(tr.obb, cam, t_w_cam)
                bd = obb.project_bbox2(d, cam, t_w_cam)
                ok2 = bt is not None and bd is not None and obb.iou2(bt, bd) >= cfg.iou_gate
            if ok3 or ok2:
                tracks[ti] = update_track(tr, d, t)
                matched_dets.add(di)

    for di, d in enumerate(survivors):
        if di not in matched_dets and d.score >= cfg.p_inst:
            tracks.append(TrackedObject(obb=d, n=1, t_created=t, t_last=t))

    tracks = [
        tr for tr in tracks if not (t - tr.t_created > cfg.t_inst and tr.n < cfg.n_min)
    ]
    tracks = _dedup(tracks, cfg, cam, t_w_cam)
    return SceneState(tracks=tuple(tracks), time=t)
