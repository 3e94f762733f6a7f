"""File formats for every artifact the pipeline exchanges.

All formats are versioned and deterministic: fixed key order, shortest
round-trip float formatting, little-endian binary payloads. Readers reject
unknown versions (VersionMismatch) and truncated or malformed files
(ParseError) without returning partial objects.

Formats:
  trajectory   CSV: t_sec, tx, ty, tz, qw, qx, qy, qz
  calibration  JSON: camera model tag plus parameters
  depth        16-byte text header (magic+version, width, height) then
               float32 little-endian pixels, NaN marking invalid
  mesh/points  binary little-endian PLY (double positions; faces as index
               lists; point clouds carry a camera table and per-point
               observation lists)
  boxes        JSON lines: one header record, then one box per line
  volumes      one JSON header line, then named raw little-endian tensors
  manifest     JSON tying together the files of one sequence
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import geom, obb
from .errors import ParseError, VersionMismatch
from .fusion import OccupancyVolume, TriangleMesh, TsdfVolume
from .camera import FisheyeCamera, PinholeCamera
from .voxel import PointCloudWithVisibility, VoxelGrid

TRAJECTORY_MAGIC = "egolift-trajectory"
CALIBRATION_MAGIC = "egolift-calibration"
OBBS_MAGIC = "egolift-obbs"
VOLUME_MAGIC = "egolift-volume"
MANIFEST_MAGIC = "egolift-manifest"
DEPTH_MAGIC = b"EDP1"
FORMAT_VERSION = 1


def _fmt(x: float) -> str:
    return repr(float(x))


def _check_version(obj: dict, magic: str, path) -> None:
    if obj.get("format") != magic:
        raise ParseError(f"{path}: expected format {magic!r}, got {obj.get('format')!r}")
    if obj.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: unsupported {magic} version {obj.get('version')!r}")


# ---------------------------------------------------------------------------
# trajectory


def write_trajectory(path, trajectory: list[tuple[float, geom.Pose]]) -> None:
    lines = [f"# {TRAJECTORY_MAGIC} v{FORMAT_VERSION}", "t_sec,tx,ty,tz,qw,qx,qy,qz"]
    for t, pose in trajectory:
        q = geom.mat_to_quat(pose.rotation.m)
        tx, ty, tz = pose.translation
        lines.append(
            ",".join([_fmt(t), _fmt(tx), _fmt(ty), _fmt(tz)] + [_fmt(v) for v in q])
        )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_trajectory(path) -> list[tuple[float, geom.Pose]]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith(f"# {TRAJECTORY_MAGIC} v"):
        raise ParseError(f"{path}:1: missing trajectory magic")
    if lines[0] != f"# {TRAJECTORY_MAGIC} v{FORMAT_VERSION}":
        raise VersionMismatch(f"{path}:1: unsupported trajectory version")
    if len(lines) < 2 or lines[1] != "t_sec,tx,ty,tz,qw,qx,qy,qz":
        raise ParseError(f"{path}:2: bad column header")
    out = []
    for ln, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise ParseError(f"{path}:{ln}: expected 8 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(f"{path}:{ln}: {e}") from None
        if out and vals[0] <= out[-1][0]:
            raise ParseError(f"{path}:{ln}: timestamps must be strictly increasing")
        pose = geom.Pose(geom.Rotation(geom.quat_to_mat(vals[4:8])), vals[1:4])
        out.append((vals[0], pose))
    return out


# ---------------------------------------------------------------------------
# calibration


def write_calibration(path, cam) -> None:
    if isinstance(cam, PinholeCamera):
        body = {
            "model": "pinhole",
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
        }
    elif isinstance(cam, FisheyeCamera):
        body = {
            "model": "kannala_brandt",
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "k1": cam.k1, "k2": cam.k2, "k3": cam.k3, "k4": cam.k4,
            "width": cam.width, "height": cam.height,
            "valid_radius": cam.valid_radius,
        }
    else:
        raise TypeError(f"unsupported camera type {type(cam).__name__}")
    obj = {"format": CALIBRATION_MAGIC, "version": FORMAT_VERSION, **body}
    with open(path, "w") as f:
        json.dump(obj, f, indent=1)
        f.write("\n")


def read_calibration(path):
    with open(path) as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from None
    _check_version(obj, CALIBRATION_MAGIC, path)
    try:
        if obj["model"] == "pinhole":
            return PinholeCamera(
                fx=obj["fx"], fy=obj["fy"], cx=obj["cx"], cy=obj["cy"],
                width=obj["width"], height=obj["height"],
            )
        if obj["model"] == "kannala_brandt":
            return FisheyeCamera(
                fx=obj["fx"], fy=obj["fy"], cx=obj["cx"], cy=obj["cy"],
                k1=obj["k1"], k2=obj["k2"], k3=obj["k3"], k4=obj["k4"],
                width=obj["width"], height=obj["height"],
                valid_radius=obj["valid_radius"],
            )
    except KeyError as e:
        raise ParseError(f"{path}: missing calibration field {e}") from None
    raise ParseError(f"{path}: unknown camera model {obj['model']!r}")


# ---------------------------------------------------------------------------
# depth maps


def write_depth(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2 or depth.shape[0] > 99999 or depth.shape[1] > 99999:
        raise ValueError("depth must be 2-D with sides < 100000")
    header = b"%s %05d %05d" % (DEPTH_MAGIC, depth.shape[1], depth.shape[0])
    assert len(header) == 16
    with open(path, "wb") as f:
        f.write(header)
        f.write(depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16:
            raise ParseError(f"{path}: truncated header")
        if not header.startswith(DEPTH_MAGIC + b" "):
            raise VersionMismatch(f"{path}: bad depth magic {header[:4]!r}")
        try:
            w, h = int(header[5:10]), int(header[11:16])
        except ValueError:
            raise ParseError(f"{path}: malformed depth header") from None
        data = f.read()
    if len(data) != 4 * w * h:
        raise ParseError(f"{path}: expected {4 * w * h} payload bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(h, w).astype(np.float64)


# ---------------------------------------------------------------------------
# PLY meshes and point clouds


def write_mesh_ply(path, mesh: TriangleMesh) -> None:
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"comment egolift mesh v{FORMAT_VERSION}",
            f"element vertex {len(mesh.vertices)}",
            "property double x",
            "property double y",
            "property double z",
            f"element face {len(mesh.faces)}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
    )
    with open(path, "wb") as f:
        f.write(header.encode() + b"\n")
        f.write(mesh.vertices.astype("<f8").tobytes())
        if len(mesh.faces):
            rec = np.empty(len(mesh.faces), dtype=[("n", "u1"), ("v", "<i4", 3)])
            rec["n"] = 3
            rec["v"] = mesh.faces
            f.write(rec.tobytes())


def _read_ply_header(f, path):
    lines = []
    while True:
        raw = f.readline()
        if not raw:
            raise ParseError(f"{path}: unterminated ply header")
        line = raw.decode("ascii", errors="replace").strip()
        lines.append(line)
        if line == "end_header":
            break
        if len(lines) > 100:
            raise ParseError(f"{path}: oversized ply header")
    if lines[0] != "ply" or lines[1] != "format binary_little_endian 1.0":
        raise ParseError(f"{path}: not a binary little-endian ply file")
    elements = []
    for line in lines[2:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property" and elements:
            elements[-1][2].append(tuple(parts[1:]))
    return elements


def read_mesh_ply(path) -> TriangleMesh:
    with open(path, "rb") as f:
        elements = _read_ply_header(f, path)
        data = f.read()
    try:
        (vname, nv, vprops), (fname, nf, fprops) = elements
    except ValueError:
        raise ParseError(f"{path}: expected vertex and face elements") from None
    if vname != "vertex" or fname != "face" or len(vprops) != 3:
        raise ParseError(f"{path}: unexpected ply layout")
    need = 24 * nv + 13 * nf
    if len(data) != need:
        raise ParseError(f"{path}: expected {need} payload bytes, got {len(data)}")
    verts = np.frombuffer(data[: 24 * nv], dtype="<f8").reshape(nv, 3)
    faces = np.zeros((nf, 3), dtype=np.int64)
    if nf:
        rec = np.frombuffer(data[24 * nv :], dtype=[("n", "u1"), ("v", "<i4", 3)])
        if not (rec["n"] == 3).all():
            raise ParseError(f"{path}: only triangle faces are supported")
        faces = rec["v"].astype(np.int64)
    return TriangleMesh(verts.copy(), faces)


def write_points_ply(path, cloud: PointCloudWithVisibility) -> None:
    """Point cloud with per-point observing camera centers.

    Camera centers are deduplicated into a table; each vertex stores a
    list of indices into it.
    """
    cams: list[tuple] = []
    cam_index: dict[tuple, int] = {}
    obs_idx = []
    for obs in cloud.observations:
        row = []
        for c in obs:
            key = (float(c[0]), float(c[1]), float(c[2]))
            if key not in cam_index:
                cam_index[key] = len(cams)
                cams.append(key)
            row.append(cam_index[key])
        obs_idx.append(row)
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"comment egolift points v{FORMAT_VERSION}",
            f"element camera {len(cams)}",
            "property double x",
            "property double y",
            "property double z",
            f"element vertex {len(cloud.points)}",
            "property double x",
            "property double y",
            "property double z",
            "property list uchar uint obs",
            "end_header",
        ]
    )
    with open(path, "wb") as f:
        f.write(header.encode() + b"\n")
        f.write(np.asarray(cams, dtype="<f8").reshape(-1, 3).tobytes())
        for p, row in zip(cloud.points, obs_idx):
            if len(row) > 255:
                raise ValueError("more than 255 observations per point")
            f.write(np.asarray(p, dtype="<f8").tobytes())
            f.write(bytes([len(row)]))
            f.write(np.asarray(row, dtype="<u4").tobytes())


def read_points_ply(path) -> PointCloudWithVisibility:
    with open(path, "rb") as f:
        elements = _read_ply_header(f, path)
        data = f.read()
    try:
        (cname, nc, _), (vname, nv, _) = elements
    except ValueError:
        raise ParseError(f"{path}: expected camera and vertex elements") from None
    if cname != "camera" or vname != "vertex":
        raise ParseError(f"{path}: unexpected points layout")
    off = 24 * nc
    if len(data) < off:
        raise ParseError(f"{path}: truncated camera table")
    cams = np.frombuffer(data[:off], dtype="<f8").reshape(nc, 3)
    points = np.empty((nv, 3))
    observations = []
    for i in range(nv):
        if off + 25 > len(data):
            raise ParseError(f"{path}: truncated at vertex {i}")
        points[i] = np.frombuffer(data[off : off + 24], dtype="<f8")
        n_obs = data[off + 24]
        off += 25
        if off + 4 * n_obs > len(data):
            raise ParseError(f"{path}: truncated observation list at vertex {i}")
        idx = np.frombuffer(data[off : off + 4 * n_obs], dtype="<u4")
        if n_obs and idx.max() >= nc:
            raise ParseError(f"{path}: observation index out of range at vertex {i}")
        off += 4 * n_obs
        observations.append(cams[idx].copy())
    if off != len(data):
        raise ParseError(f"{path}: {len(data) - off} trailing bytes")
    return PointCloudWithVisibility(points=points, observations=tuple(observations))


# ---------------------------------------------------------------------------
# boxes (JSON lines)


def _box_record(box: obb.Obb3, t: float | None) -> dict:
    rec = {
        "center": [float(v) for v in box.center],
        "yaw": float(box.yaw),
        "dims": [float(v) for v in box.dims],
        "class": box.class_id,
        "class_probs": [float(v) for v in box.class_probs],
        "score": float(box.score),
        "t": None if t is None else float(t),
    }
    return rec


def write_obbs(path, boxes, classes: tuple | None = None, timestamps=None) -> None:
    """JSON-lines box file: a header record then one box per line.

    timestamps may be None (static ground truth) or one value per box.
    """
    if timestamps is None:
        timestamps = [None] * len(boxes)
    if len(timestamps) != len(boxes):
        raise ValueError("need one timestamp per box")
    with open(path, "w") as f:
        header = {"format": OBBS_MAGIC, "version": FORMAT_VERSION}
        if classes is not None:
            header["classes"] = list(classes)
        f.write(json.dumps(header) + "\n")
        for box, t in zip(boxes, timestamps):
            f.write(json.dumps(_box_record(box, t)) + "\n")


def read_obbs(path):
    """Returns (boxes, timestamps, classes)."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError(f"{path}:1: empty box file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:1: {e}") from None
    _check_version(header, OBBS_MAGIC, path)
    classes = tuple(header.get("classes", ())) or None
    boxes, timestamps = [], []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            rec = json.loads(line)
            box = obb.Obb3(
                center=rec["center"], yaw=rec["yaw"], dims=rec["dims"],
                class_probs=rec["class_probs"], score=rec["score"],
            )
            if rec["class"] != box.class_id:
                raise ParseError(f"{path}:{ln}: class tag disagrees with probabilities")
        except ParseError:
            raise
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
            raise ParseError(f"{path}:{ln}: {e}") from None
        boxes.append(box)
        timestamps.append(rec.get("t"))
    return boxes, timestamps, classes


# ---------------------------------------------------------------------------
# volumes (raw tensors with a JSON header line)


def _pose_record(pose: geom.Pose) -> dict:
    q = geom.mat_to_quat(pose.rotation.m)
    return {
        "translation": [float(v) for v in pose.translation],
        "quaternion_wxyz": [float(v) for v in q],
    }


def _pose_from_record(rec) -> geom.Pose:
    return geom.Pose(
        geom.Rotation(geom.quat_to_mat(rec["quaternion_wxyz"])), rec["translation"]
    )


def write_volume(path, arrays: dict, grid: VoxelGrid, kind: str, extra: dict | None = None):
    """Named raw tensors sharing one grid; header first line, then the
    concatenated little-endian payloads in header order."""
    names = list(arrays)
    header = {
        "format": VOLUME_MAGIC,
        "version": FORMAT_VERSION,
        "kind": kind,
        "dims": list(grid.dims),
        "voxel_size": float(grid.voxel_size),
        "pose": _pose_record(grid.pose),
        "arrays": [
            {"name": n, "dtype": np.asarray(arrays[n]).dtype.str} for n in names
        ],
    }
    if extra:
        header.update(extra)
    for n in names:
        if tuple(np.asarray(arrays[n]).shape) != grid.dims:
            raise ValueError(f"array {n!r} does not match grid dims")
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        for n in names:
            a = np.asarray(arrays[n])
            f.write(np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes())


def read_volume(path):
    """Returns (arrays dict, grid, header dict)."""
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: bad volume header: {e}") from None
        _check_version(header, VOLUME_MAGIC, path)
        grid = VoxelGrid(
            _pose_from_record(header["pose"]), tuple(header["dims"]), header["voxel_size"]
        )
        n_items = int(np.prod(grid.dims))
        arrays = {}
        for spec in header["arrays"]:
            dt = np.dtype(spec["dtype"])
            buf = f.read(n_items * dt.itemsize)
            if len(buf) != n_items * dt.itemsize:
                raise ParseError(f"{path}: truncated array {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dt).reshape(grid.dims).copy()
        if f.read(1):
            raise ParseError(f"{path}: trailing bytes after last array")
    return arrays, grid, header


def write_tsdf(path, vol: TsdfVolume) -> None:
    write_volume(
        path, {"tsdf": vol.tsdf, "weights": vol.weights}, vol.grid, "tsdf",
        extra={"truncation": float(vol.truncation)},
    )


def read_tsdf(path) -> TsdfVolume:
    arrays, grid, header = read_volume(path)
    if header["kind"] != "tsdf":
        raise ParseError(f"{path}: expected a tsdf volume, got {header['kind']!r}")
    return TsdfVolume(
        grid=grid, truncation=header["truncation"],
        tsdf=arrays["tsdf"], weights=arrays["weights"],
    )


def write_occupancy(path, vol: OccupancyVolume) -> None:
    write_volume(path, {"occ": vol.occ, "counts": vol.counts}, vol.grid, "occupancy")


def read_occupancy(path) -> OccupancyVolume:
    arrays, grid, header = read_volume(path)
    if header["kind"] != "occupancy":
        raise ParseError(f"{path}: expected an occupancy volume, got {header['kind']!r}")
    return OccupancyVolume(grid=grid, occ=arrays["occ"], counts=arrays["counts"])


# ---------------------------------------------------------------------------
# sequence manifest


@dataclass(frozen=True)
class SequenceManifest:
    """Paths (absolute, resolved) and metadata for one captured sequence."""

    root: str
    classes: tuple
    trajectory: str
    calibration: str
    depth_frames: tuple  # of (t, path)
    points: str
    gt_mesh: str
    gt_obbs: str
    detections: str | None = None
    seed: int | None = None


def write_manifest(path, manifest: dict) -> None:
    obj = {"format": MANIFEST_MAGIC, "version": FORMAT_VERSION, **manifest}
    with open(path, "w") as f:
        json.dump(obj, f, indent=1)
        f.write("\n")


def read_manifest(path) -> SequenceManifest:
    root = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from None
    _check_version(obj, MANIFEST_MAGIC, path)

    def resolve(rel):
        p = os.path.join(root, rel)
        if not os.path.exists(p):
            raise ParseError(f"{path}: referenced file missing: {rel}")
        return p

    try:
        frames = []
        last_t = -np.inf
        for rec in obj["depth_frames"]:
            t = float(rec["t"])
            if t <= last_t:
                raise ParseError(f"{path}: depth timestamps not strictly increasing at t={t}")
            last_t = t
            frames.append((t, resolve(rec["path"])))
        detections = obj.get("detections")
        return SequenceManifest(
            root=root,
            classes=tuple(obj["classes"]),
            trajectory=resolve(obj["trajectory"]),
            calibration=resolve(obj["calibration"]),
            depth_frames=tuple(frames),
            points=resolve(obj["points"]),
            gt_mesh=resolve(obj["gt_mesh"]),
            gt_obbs=resolve(obj["gt_obbs"]),
            detections=resolve(detections) if detections else None,
            seed=obj.get("seed"),
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: malformed manifest: {e}") from None
