"""Command-line entry points.

One binary, subcommand style. Every run is a pure function of its flags,
input files and seeds; metrics are emitted both as flat text on stdout
and as a versioned JSON report.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import camera as _camera
from . import fusion, geom, gradcheck, io as eio, metrics, scenegen, tracker, voxel
from .errors import EgoliftError

# defaults shared across subcommands
DETECTION_VOXEL_SIZE = 0.0625
DETECTION_RESOLUTION = 64
SURFACE_VOXEL_SIZE = 0.04
SURFACE_RESOLUTION = 96
GRID_EXTENT = 4.0
CENTERNESS_TAU = 0.2
METRIC_TAU = 0.05
METRIC_SAMPLES = 10_000

DEFAULT_FISHEYE = _camera.FisheyeCamera(
    fx=110.0, fy=110.0, cx=119.5, cy=119.5, k1=0.02, k2=-0.006, k3=0.001, k4=-0.0002,
    width=240, height=240, valid_radius=118.0,
)


def _parse_floats(text, n, name):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"{name} needs {n} comma-separated values")
    return tuple(parts)


def _camera_from_flag(kind: str, width: int, height: int):
    scale = width / 240.0
    if kind == "fisheye":
        return _camera.FisheyeCamera(
            fx=DEFAULT_FISHEYE.fx * scale, fy=DEFAULT_FISHEYE.fx * scale,
            cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
            k1=DEFAULT_FISHEYE.k1, k2=DEFAULT_FISHEYE.k2,
            k3=DEFAULT_FISHEYE.k3, k4=DEFAULT_FISHEYE.k4,
            width=width, height=height,
            valid_radius=min(width, height) / 2.0 - 2.0 * scale,
        )
    if kind == "max-linear":
        fe = _camera_from_flag("fisheye", width, height)
        return _camera.max_linear(fe, (width, height))
    if kind == "scannet":
        return _camera.SCANNET_LINEAR
    raise argparse.ArgumentTypeError(f"unknown camera kind {kind!r}")


def cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    os.makedirs(os.path.join(args.out, "depth"), exist_ok=True)
    classes = tuple(args.classes.split(","))
    spec = scenegen.SceneSpec(
        seed=args.seed,
        room=_parse_floats(args.room, 3, "--room"),
        n_boxes=tuple(int(x) for x in args.boxes.split(",")),
        classes=classes,
        n_points=args.points,
        point_sigma=args.point_sigma,
        edge_fraction=args.edge_fraction,
        det_center_sigma=args.det_center_sigma,
        det_dim_sigma=args.det_dim_sigma,
        det_yaw_sigma=np.deg2rad(args.det_yaw_sigma_deg),
        det_false_positive_rate=args.det_fp_rate,
    )
    scene = scenegen.generate_scene(spec)
    traj = scenegen.simulate_trajectory(scene, seed=args.seed + 1, duration=args.duration,
                                        rate=args.rate)
    cam = _camera_from_flag(args.camera, args.width, args.height)

    eio.write_trajectory(os.path.join(args.out, "trajectory.csv"), traj)
    eio.write_calibration(os.path.join(args.out, "calibration.json"), cam)
    eio.write_mesh_ply(os.path.join(args.out, "gt_mesh.ply"), scenegen.scene_mesh(scene))
    eio.write_obbs(os.path.join(args.out, "gt_obbs.jsonl"), scene.obbs, classes=classes)

    renderer = scenegen.DepthRenderer(scene)
    frames = []
    for i, (t, pose) in enumerate(traj):
        rel = os.path.join("depth", f"{i:06d}.bin")
        eio.write_depth(os.path.join(args.out, rel), renderer.render(cam, pose))
        frames.append({"t": t, "path": rel})

    cloud = scenegen.sample_semidense(scene, traj, spec)
    eio.write_points_ply(os.path.join(args.out, "points.ply"), cloud)

    # one noisy detection set per 1-second snippet, stamped at snippet end
    snippet = max(1, int(round(args.rate)))
    det_boxes, det_ts = [], []
    for si, end in enumerate(range(snippet - 1, len(traj), snippet)):
        t = traj[end][0]
        for box in scenegen.jitter_detections(scene, spec, seed=args.seed + 1000 + si):
            det_boxes.append(box)
            det_ts.append(t)
    eio.write_obbs(os.path.join(args.out, "detections.jsonl"), det_boxes,
                   classes=classes, timestamps=det_ts)

    eio.write_manifest(
        os.path.join(args.out, "manifest.json"),
        {
            "classes": list(classes),
            "seed": args.seed,
            "trajectory": "trajectory.csv",
            "calibration": "calibration.json",
            "depth_frames": frames,
            "points": "points.ply",
            "gt_mesh": "gt_mesh.ply",
            "gt_obbs": "gt_obbs.jsonl",
            "detections": "detections.jsonl",
        },
    )
    print(f"simulate: wrote sequence with {len(traj)} frames, "
          f"{len(scene.obbs)} boxes, {len(cloud.points)} points to {args.out}")
    return 0


def _global_grid_from_mesh(mesh_path, voxel_size, extent=None, center=None):
    mesh = eio.read_mesh_ply(mesh_path)
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    if center is None:
        center = (lo + hi) / 2.0
    if extent is None:
        extent = tuple(hi - lo + 4 * voxel_size)
    dims_whd = [max(1, int(np.ceil(e / voxel_size))) for e in extent]
    dims = (dims_whd[2], dims_whd[1], dims_whd[0])  # (D, H, W) = (z, y, x)
    return geom.Pose(geom.Rotation.identity(), center), dims


def cmd_fuse(args) -> int:
    manifest = eio.read_manifest(args.manifest)
    cam = eio.read_calibration(manifest.calibration)
    traj = eio.read_trajectory(manifest.trajectory)
    pose_by_t = {t: p for t, p in traj}
    extent = _parse_floats(args.extent, 3, "--extent") if args.extent else None
    center = _parse_floats(args.center, 3, "--center") if args.center else None
    pose, dims = _global_grid_from_mesh(manifest.gt_mesh, args.voxel_size, extent, center)
    frames = manifest.depth_frames[:: args.every]

    if args.mode == "tsdf":
        vol = fusion.TsdfVolume.empty(
            pose, dims, args.voxel_size, truncation=args.truncation_voxels * args.voxel_size
        )
        for t, path in frames:
            fusion.integrate_depth(vol, eio.read_depth(path), cam, pose_by_t[t])
        min_obs = args.min_obs if args.min_obs is not None else 2
        iso = args.iso if args.iso is not None else 0.0
        mesh = fusion.marching_cubes(vol.tsdf, vol.weights, iso, min_obs, pose, args.voxel_size)
        if args.volume_out:
            eio.write_tsdf(args.volume_out, vol)
    else:
        vol = fusion.OccupancyVolume.empty(pose, dims, args.voxel_size)
        snippet = []
        groups = []
        for t, path in frames:
            if snippet and t - snippet[0][0] >= 1.0:
                groups.append(snippet)
                snippet = []
            snippet.append((t, path))
        if snippet:
            groups.append(snippet)
        g = geom.GravityDir()
        for group in groups:
            local = _local_occupancy_from_depth(
                group, pose_by_t, cam, g, args.local_extent, args.local_resolution
            )
            if local is not None:
                fusion.integrate_occupancy(vol, local[0], local[1])
        min_obs = args.min_obs if args.min_obs is not None else 5
        iso = args.iso if args.iso is not None else 0.5
        mesh = fusion.marching_cubes(vol.occ, vol.counts, iso, min_obs, pose, args.voxel_size)
        if args.volume_out:
            eio.write_occupancy(args.volume_out, vol)

    eio.write_mesh_ply(args.out, mesh)
    print(f"fuse[{args.mode}]: {len(frames)} frames -> {len(mesh.faces)} triangles ({args.out})")
    return 0


def _local_occupancy_from_depth(group, pose_by_t, cam, g, extent, resolution):
    """Occupancy values for one snippet from its depth maps.

    A local truncated distance field is fused from the snippet frames and
    converted to the free/surface/occupied profile (0 / 0.5 / 1 across a
    one-voxel band); voxels the snippet never observed read as free.
    """
    t_last, _ = group[-1]
    try:
        local = fusion.TsdfVolume.empty(
            voxel.anchor_grid(pose_by_t[t_last], g, extent, resolution).pose,
            (resolution,) * 3,
            extent / resolution,
        )
    except EgoliftError:
        return None
    for t, path in group:
        fusion.integrate_depth(local, eio.read_depth(path), cam, pose_by_t[t])
    delta = local.grid.voxel_size
    occ = np.clip(0.5 - local.tsdf * local.truncation / (2.0 * delta), 0.0, 1.0)
    return occ, local.grid


def _nearest_pose(traj, t):
    times = np.array([tt for tt, _ in traj])
    return traj[int(np.argmin(np.abs(times - t)))][1]


def cmd_track(args) -> int:
    manifest = eio.read_manifest(args.manifest)
    det_path = args.detections or manifest.detections
    if det_path is None:
        print("track: no detections file given and none in the manifest", file=sys.stderr)
        return 1
    boxes, times, classes = eio.read_obbs(det_path)
    cam = eio.read_calibration(manifest.calibration)
    traj = eio.read_trajectory(manifest.trajectory)
    cfg = tracker.TrackerConfig(
        weights=_parse_floats(args.weights, 5, "--weights"),
        p_inst=args.p_inst,
        p_assoc=args.p_assoc,
        iou_gate=args.iou_gate,
        n_min=args.n_min,
        t_inst=args.t_inst,
        dedup_iou3=args.dedup_iou3,
        dedup_iou2=args.dedup_iou2,
    )
    by_time: dict[float, list] = {}
    for box, t in zip(boxes, times):
        if t is None:
            print("track: detections must carry timestamps", file=sys.stderr)
            return 1
        by_time.setdefault(float(t), []).append(box)
    scene = tracker.SceneState()
    for t in sorted(by_time):
        scene = tracker.step(scene, by_time[t], t, cam, _nearest_pose(traj, t), cfg)
    final = scene.confirmed_boxes(cfg.n_min)
    eio.write_obbs(args.out, final, classes=classes,
                   timestamps=[scene.time] * len(final))
    print(f"track: {len(boxes)} detections over {len(by_time)} steps -> {len(final)} tracks")
    return 0


def _write_report(path, payload: dict) -> None:
    obj = {"format": "egolift-metrics", "version": 1, **payload}
    with open(path, "w") as f:
        json.dump(obj, f, indent=1)
        f.write("\n")


def cmd_eval_obb(args) -> int:
    pred, _, _ = eio.read_obbs(args.pred)
    gt, _, _ = eio.read_obbs(args.gt)
    lo, hi, step = _parse_floats(args.thresholds, 3, "--thresholds")
    thresholds = tuple(np.round(np.arange(lo, hi + step / 2, step), 6))
    m = metrics.average_precision(pred, gt, thresholds)
    print(f"map {m.map!r}")
    for cls, aps in m.per_class_ap.items():
        print(f"ap_class_{cls} {float(np.mean(aps))!r}")
    if args.out:
        _write_report(args.out, {"task": "detection", **m.as_dict()})
    return 0


def cmd_eval_surface(args) -> int:
    pred = eio.read_mesh_ply(args.pred)
    gt = eio.read_mesh_ply(args.gt)
    m = metrics.surface_metrics(pred, gt, n=args.n, tau=args.tau, seed=args.seed)
    for key, val in m.as_dict().items():
        print(f"{key} {val!r}")
    if args.out:
        _write_report(args.out, {"task": "surface", "n": args.n, "tau": args.tau,
                                 "seed": args.seed, **m.as_dict()})
    return 0


def cmd_lift(args) -> int:
    manifest = eio.read_manifest(args.manifest)
    cam = eio.read_calibration(manifest.calibration)
    traj = eio.read_trajectory(manifest.trajectory)
    frames = [(t, p) for t, p in manifest.depth_frames if args.time - 1.0 < t <= args.time]
    if not frames:
        print(f"lift: no frames in ({args.time - 1.0}, {args.time}]", file=sys.stderr)
        return 1
    pose_by_t = {t: p for t, p in traj}
    grid = voxel.anchor_grid(
        pose_by_t[frames[-1][0]], geom.GravityDir(), args.extent, args.resolution
    )
    # rendered depth doubles as the per-frame feature channel; invalid
    # (NaN) pixels read as zero
    observations = [
        voxel.FrameObservation(
            np.nan_to_num(eio.read_depth(path), nan=0.0)[None, :, :], cam, pose_by_t[t]
        )
        for t, path in frames
    ]
    feat = voxel.lift_features(grid, observations)
    cloud = eio.read_points_ply(manifest.points)
    pts_mask = voxel.rasterize_points(grid, cloud)
    free_mask = voxel.rasterize_freespace(grid, cloud, s=args.samples_per_ray)

    os.makedirs(args.out_dir, exist_ok=True)
    eio.write_volume(
        os.path.join(args.out_dir, "features.vol"),
        {f"c{i}": feat.values[i] for i in range(feat.channels)},
        grid, "features",
    )
    eio.write_volume(os.path.join(args.out_dir, "point_mask.vol"),
                     {"mask": pts_mask.values}, grid, "mask")
    eio.write_volume(os.path.join(args.out_dir, "free_mask.vol"),
                     {"mask": free_mask.values}, grid, "mask")
    print(f"lift: {len(frames)} frames -> {feat.channels} feature channels, "
          f"{int(pts_mask.values.sum())} point voxels, {int(free_mask.values.sum())} free voxels")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed, n=args.n)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} max_rel_err={r.max_rel_err:.3e} tol={r.tol:g}")
        ok &= r.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="egolift",
        description=__doc__,
        epilog="Thread count for the fusion/render kernels follows the "
               "NUMBA_NUM_THREADS environment variable.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(
            name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter
        )

    s = add("simulate", "generate a synthetic sequence directory")
    s.add_argument("--out", required=True, help="output sequence directory")
    s.add_argument("--seed", type=int, default=0, help="master seed for the whole sequence")
    s.add_argument("--duration", type=float, default=10.0, help="seconds")
    s.add_argument("--rate", type=float, default=10.0, help="frames per second (snippet cadence)")
    s.add_argument("--room", default="5,4,3", help="room extents in meters, x,y,z")
    s.add_argument("--boxes", default="4,8", help="min,max box count")
    s.add_argument("--classes", default="chair,table,sofa,lamp,shelf", help="semantic taxonomy")
    s.add_argument("--camera", default="fisheye", choices=["fisheye", "max-linear", "scannet"], help="camera model preset")
    s.add_argument("--width", type=int, default=240, help="image width in pixels")
    s.add_argument("--height", type=int, default=240, help="image height in pixels")
    s.add_argument("--points", type=int, default=4000, help="surface point candidates to draw")
    s.add_argument("--point-sigma", type=float, default=0.01, help="point noise in meters")
    s.add_argument("--edge-fraction", type=float, default=0.7, help="fraction of points biased near edges")
    s.add_argument("--det-center-sigma", type=float, default=0.1, help="meters")
    s.add_argument("--det-dim-sigma", type=float, default=0.0, help="meters")
    s.add_argument("--det-yaw-sigma-deg", type=float, default=10.0, help="detection yaw jitter in degrees")
    s.add_argument("--det-fp-rate", type=float, default=0.1,
                   help="expected false positives per true box per snippet")
    s.set_defaults(func=cmd_simulate)

    f = add("fuse", "fuse a sequence's depth into a mesh")
    f.add_argument("--manifest", required=True, help="sequence manifest.json")
    f.add_argument("--mode", choices=["tsdf", "occupancy"], default="tsdf", help="fusion representation")
    f.add_argument("--out", required=True, help="output mesh (.ply)")
    f.add_argument("--voxel-size", type=float, default=SURFACE_VOXEL_SIZE, help="global volume voxel size in meters")
    f.add_argument("--extent", default=None, help="global volume extents x,y,z (default: mesh bounds)")
    f.add_argument("--center", default=None, help="global volume center x,y,z")
    f.add_argument("--truncation-voxels", type=float, default=fusion.TRUNCATION_VOXELS, help="signed-distance truncation in voxels")
    f.add_argument("--min-obs", type=float, default=None,
                   help="min observations per voxel (default 2 tsdf / 5 occupancy)")
    f.add_argument("--iso", type=float, default=None, help="iso level (default 0 tsdf / 0.5 occupancy)")
    f.add_argument("--every", type=int, default=1, help="use every n-th frame")
    f.add_argument("--volume-out", default=None, help="also write the fused volume")
    f.add_argument("--local-extent", type=float, default=GRID_EXTENT, help="per-snippet local grid extent in meters")
    f.add_argument("--local-resolution", type=int, default=SURFACE_RESOLUTION, help="per-snippet local grid resolution")
    f.set_defaults(func=cmd_fuse)

    t = add("track", "run the box tracker over a detection stream")
    t.add_argument("--manifest", required=True, help="sequence manifest.json (camera + trajectory)")
    t.add_argument("--detections", default=None, help="default: the manifest's stream")
    t.add_argument("--out", required=True, help="output tracked boxes (.jsonl)")
    t.add_argument("--weights", default="8,0,1,2,0", help="association cost weights: class,center2d,center3d,iou2d,iou3d")
    t.add_argument("--p-inst", type=float, default=0.5, help="score needed to instantiate a track")
    t.add_argument("--p-assoc", type=float, default=None, help="score needed to associate (default p_inst - 0.05)")
    t.add_argument("--iou-gate", type=float, default=0.2, help="min overlap for accepting a match")
    t.add_argument("--n-min", type=int, default=2, help="observations needed to confirm a track")
    t.add_argument("--t-inst", type=float, default=1.0, help="grace period in seconds before unconfirmed tracks drop")
    t.add_argument("--dedup-iou3", type=float, default=0.1, help="3d overlap above which scene boxes deduplicate")
    t.add_argument("--dedup-iou2", type=float, default=0.5, help="2d overlap above which scene boxes deduplicate")
    t.set_defaults(func=cmd_track)

    eo = add("eval-obb", "detection mAP against reference boxes")
    eo.add_argument("--pred", required=True, help="predicted boxes (.jsonl)")
    eo.add_argument("--gt", required=True, help="reference boxes (.jsonl)")
    eo.add_argument("--out", default=None, help="JSON report path")
    eo.add_argument("--thresholds", default="0.0,0.5,0.05", help="lo,hi,step overlap sweep")
    eo.set_defaults(func=cmd_eval_obb)

    es = add("eval-surface", "mesh-to-mesh surface metrics")
    es.add_argument("--pred", required=True, help="predicted mesh (.ply)")
    es.add_argument("--gt", required=True, help="reference mesh (.ply)")
    es.add_argument("--out", default=None, help="JSON report path")
    es.add_argument("--n", type=int, default=METRIC_SAMPLES, help="surface samples per mesh")
    es.add_argument("--tau", type=float, default=METRIC_TAU, help="distance threshold in meters")
    es.add_argument("--seed", type=int, default=0, help="sampling seed")
    es.set_defaults(func=cmd_eval_surface)

    li = add("lift", "lift one snippet into feature/mask volumes")
    li.add_argument("--manifest", required=True, help="sequence manifest.json")
    li.add_argument("--time", type=float, required=True, help="snippet end time (seconds)")
    li.add_argument("--out-dir", required=True, help="directory for the volume files")
    li.add_argument("--extent", type=float, default=GRID_EXTENT, help="grid extent in meters")
    li.add_argument("--resolution", type=int, default=DETECTION_RESOLUTION, help="voxels per side")
    li.add_argument("--samples-per-ray", type=int, default=64, help="freespace samples per observation ray")
    li.set_defaults(func=cmd_lift)

    g = add("gradcheck", "finite-difference checks of every loss gradient")
    g.add_argument("--seed", type=int, default=0, help="seed for the random evaluation points")
    g.add_argument("--n", type=int, default=100, help="points checked per loss")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EgoliftError, OSError) as e:
        print(f"egolift {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
