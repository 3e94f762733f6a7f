"""Axis-aligned bounding-box tree over triangles.

Backs the exact point-to-mesh distance queries and the per-pixel ray casts.
Built once in numpy, traversed in numba kernels. Queries are read-only and
safe to run from multiple threads.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_LEAF_SIZE = 8


class TriBvh:
    """Median-split AABB tree over a (T, 3, 3) triangle array."""

    def __init__(self, tri_verts: np.ndarray):
        tris = np.ascontiguousarray(tri_verts, dtype=np.float64)
        if tris.ndim != 3 or tris.shape[1:] != (3, 3):
            raise ValueError("triangles must have shape (T, 3, 3)")
        if len(tris) == 0:
            raise ValueError("cannot build a tree over zero triangles")
        self.tris = tris
        lo = tris.min(axis=1)
        hi = tris.max(axis=1)
        centroids = tris.mean(axis=1)

        order = np.arange(len(tris))
        node_min, node_max, node_left, node_right, node_start, node_count = [], [], [], [], [], []

        spans = [(0, len(order))]
        node_min.append(None)
        node_max.append(None)
        node_left.append(-1)
        node_right.append(-1)
        node_start.append(-1)
        node_count.append(-1)
        todo = [0]
        while todo:
            ni = todo.pop()
            s, e = spans[ni]
            idx = order[s:e]
            bmin = lo[idx].min(axis=0)
            bmax = hi[idx].max(axis=0)
            node_min[ni] = bmin
            node_max[ni] = bmax
            if e - s <= _LEAF_SIZE:
                node_start[ni] = s
                node_count[ni] = e - s
                continue
            axis = int(np.argmax(bmax - bmin))
            key = centroids[idx, axis]
            half = (e - s) // 2
            part = np.argpartition(key, half)
            order[s:e] = idx[part]
            mid = s + half
            for child_span in ((s, mid), (mid, e)):
                node_min.append(None)
                node_max.append(None)
                node_left.append(-1)
                node_right.append(-1)
                node_start.append(-1)
                node_count.append(-1)
                spans.append(child_span)
            node_left[ni] = len(spans) - 2
            node_right[ni] = len(spans) - 1
            todo.append(node_left[ni])
            todo.append(node_right[ni])

        self.node_min = np.array(node_min, dtype=np.float64)
        self.node_max = np.array(node_max, dtype=np.float64)
        self.node_left = np.array(node_left, dtype=np.int64)
        self.node_right = np.array(node_right, dtype=np.int64)
        self.node_start = np.array(node_start, dtype=np.int64)
        self.node_count = np.array(node_count, dtype=np.int64)
        self.order = np.ascontiguousarray(order, dtype=np.int64)
        self.depth = self._max_depth()

    def _max_depth(self) -> int:
        depth = 0
        stack = [(0, 1)]
        while stack:
            ni, d = stack.pop()
            depth = max(depth, d)
            if self.node_left[ni] >= 0:
                stack.append((self.node_left[ni], d + 1))
                stack.append((self.node_right[ni], d + 1))
        return depth

    def point_distances(self, points: np.ndarray) -> np.ndarray:
        """Exact min distance from each point to any triangle."""
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        return _point_query(
            pts, self.tris, self.order, self.node_min, self.node_max,
            self.node_left, self.node_right, self.node_start, self.node_count,
        )

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Nearest hit parameter t per ray (inf where the ray misses)."""
        o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        d = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        return _ray_query(
            o, d, self.tris, self.order, self.node_min, self.node_max,
            self.node_left, self.node_right, self.node_start, self.node_count,
        )


@njit(cache=True, inline="always")
def _point_tri_sqdist(px, py, pz, tri):
    """Squared distance point-triangle (closest-point region tests)."""
    ax, ay, az = tri[0, 0], tri[0, 1], tri[0, 2]
    bx, by, bz = tri[1, 0], tri[1, 1], tri[1, 2]
    cx, cy, cz = tri[2, 0], tri[2, 1], tri[2, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        v = d1 / denom if denom != 0.0 else 0.0
        qx = ax + v * abx - px
        qy = ay + v * aby - py
        qz = az + v * abz - pz
        return qx * qx + qy * qy + qz * qz

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        w = d2 / denom if denom != 0.0 else 0.0
        qx = ax + w * acx - px
        qy = ay + w * acy - py
        qz = az + w * acz - pz
        return qx * qx + qy * qy + qz * qz

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / denom if denom != 0.0 else 0.0
        qx = bx + w * (cx - bx) - px
        qy = by + w * (cy - by) - py
        qz = bz + w * (cz - bz) - pz
        return qx * qx + qy * qy + qz * qz

    denom = va + vb + vc
    v = vb / denom
    w = vc / denom
    qx = ax + abx * v + acx * w - px
    qy = ay + aby * v + acy * w - py
    qz = az + abz * v + acz * w - pz
    return qx * qx + qy * qy + qz * qz


@njit(cache=True, inline="always")
def _aabb_sqdist(px, py, pz, bmin, bmax):
    d = 0.0
    t = bmin[0] - px
    if t > 0.0:
        d += t * t
    t = px - bmax[0]
    if t > 0.0:
        d += t * t
    t = bmin[1] - py
    if t > 0.0:
        d += t * t
    t = py - bmax[1]
    if t > 0.0:
        d += t * t
    t = bmin[2] - pz
    if t > 0.0:
        d += t * t
    t = pz - bmax[2]
    if t > 0.0:
        d += t * t
    return d


@njit(cache=True, parallel=True)
def _point_query(points, tris, order, nmin, nmax, nleft, nright, nstart, ncount):
    n = points.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in prange(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = np.inf
        stack = np.empty(128, dtype=np.int64)
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            ni = stack[top]
            if _aabb_sqdist(px, py, pz, nmin[ni], nmax[ni]) >= best:
                continue
            if ncount[ni] >= 0:
                s = nstart[ni]
                for j in range(ncount[ni]):
                    d = _point_tri_sqdist(px, py, pz, tris[order[s + j]])
                    if d < best:
                        best = d
            else:
                l, r = nleft[ni], nright[ni]
                dl = _aabb_sqdist(px, py, pz, nmin[l], nmax[l])
                dr = _aabb_sqdist(px, py, pz, nmin[r], nmax[r])
                # push the farther child first so the nearer is visited next
                if dl <= dr:
                    stack[top] = r
                    top += 1
                    stack[top] = l
                    top += 1
                else:
                    stack[top] = l
                    top += 1
                    stack[top] = r
                    top += 1
        out[i] = np.sqrt(best)
    return out


@njit(cache=True, inline="always")
def _ray_tri(ox, oy, oz, dx, dy, dz, tri):
    """Moller-Trumbore; returns hit parameter t or inf."""
    e1x = tri[1, 0] - tri[0, 0]
    e1y = tri[1, 1] - tri[0, 1]
    e1z = tri[1, 2] - tri[0, 2]
    e2x = tri[2, 0] - tri[0, 0]
    e2y = tri[2, 1] - tri[0, 1]
    e2z = tri[2, 2] - tri[0, 2]
    hx = dy * e2z - dz * e2y
    hy = dz * e2x - dx * e2z
    hz = dx * e2y - dy * e2x
    a = e1x * hx + e1y * hy + e1z * hz
    if -1e-12 < a < 1e-12:
        return np.inf
    f = 1.0 / a
    sx = ox - tri[0, 0]
    sy = oy - tri[0, 1]
    sz = oz - tri[0, 2]
    u = f * (sx * hx + sy * hy + sz * hz)
    if u < -1e-12 or u > 1.0 + 1e-12:
        return np.inf
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = f * (dx * qx + dy * qy + dz * qz)
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return np.inf
    t = f * (e2x * qx + e2y * qy + e2z * qz)
    if t <= 1e-9:
        return np.inf
    return t


@njit(cache=True, inline="always")
def _ray_aabb(ox, oy, oz, idx, idy, idz, bmin, bmax, t_best):
    t0 = 0.0
    t1 = t_best
    tx0 = (bmin[0] - ox) * idx
    tx1 = (bmax[0] - ox) * idx
    if tx0 > tx1:
        tx0, tx1 = tx1, tx0
    t0 = max(t0, tx0)
    t1 = min(t1, tx1)
    ty0 = (bmin[1] - oy) * idy
    ty1 = (bmax[1] - oy) * idy
    if ty0 > ty1:
        ty0, ty1 = ty1, ty0
    t0 = max(t0, ty0)
    t1 = min(t1, ty1)
    tz0 = (bmin[2] - oz) * idz
    tz1 = (bmax[2] - oz) * idz
    if tz0 > tz1:
        tz0, tz1 = tz1, tz0
    t0 = max(t0, tz0)
    t1 = min(t1, tz1)
    return t0 <= t1


@njit(cache=True, parallel=True)
def _ray_query(origins, dirs, tris, order, nmin, nmax, nleft, nright, nstart, ncount):
    n = origins.shape[0]
    out = np.full(n, np.inf, dtype=np.float64)
    for i in prange(n):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        idx = 1.0 / dx if dx != 0.0 else np.inf
        idy = 1.0 / dy if dy != 0.0 else np.inf
        idz = 1.0 / dz if dz != 0.0 else np.inf
        best = np.inf
        stack = np.empty(128, dtype=np.int64)
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            ni = stack[top]
            if not _ray_aabb(ox, oy, oz, idx, idy, idz, nmin[ni], nmax[ni], best):
                continue
            if ncount[ni] >= 0:
                s = nstart[ni]
                for j in range(ncount[ni]):
                    t = _ray_tri(ox, oy, oz, dx, dy, dz, tris[order[s + j]])
                    if t < best:
                        best = t
            else:
                stack[top] = nleft[ni]
                top += 1
                stack[top] = nright[ni]
                top += 1
        out[i] = best
    return out


def point_tri_dist_brute(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Vectorized all-pairs point-to-triangle minimum distance.

    Independent of the tree code path; used as the oracle in tests and for
    small reference meshes.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 1, 3)
    a = np.asarray(tris, dtype=np.float64)[np.newaxis, :, 0, :]
    b = np.asarray(tris, dtype=np.float64)[np.newaxis, :, 1, :]
    c = np.asarray(tris, dtype=np.float64)[np.newaxis, :, 2, :]
    ab = b - a
    ac = c - a
    ap = p - a

    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    d3 = (ab * (p - b)).sum(-1)
    d4 = (ac * (p - b)).sum(-1)
    d5 = (ab * (p - c)).sum(-1)
    d6 = (ac * (p - c)).sum(-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.clip(np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0), 0.0, 1.0)
        w_ac = np.clip(np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0), 0.0, 1.0)
        den_bc = (d4 - d3) + (d5 - d6)
        w_bc = np.clip(np.where(den_bc != 0, (d4 - d3) / den_bc, 0.0), 0.0, 1.0)
        den = va + vb + vc
        v_in = np.where(den != 0, vb / den, 0.0)
        w_in = np.where(den != 0, vc / den, 0.0)

    interior = a + v_in[..., None] * ab + w_in[..., None] * ac
    # the interior projection is only a valid candidate when it actually
    # falls inside the triangle; fall back to a vertex otherwise
    inside = (va >= 0) & (vb >= 0) & (vc >= 0) & (den != 0)
    interior = np.where(inside[..., None], interior, a)
    candidates = (
        a,
        b,
        c,
        a + v_ab[..., None] * ab,
        a + w_ac[..., None] * ac,
        b + w_bc[..., None] * (c - b),
        interior,
    )
    best = None
    for cand in candidates:
        d = np.linalg.norm(cand - p, axis=-1).min(axis=1)
        best = d if best is None else np.minimum(best, d)
    return best


def raycast_brute(origins: np.ndarray, dirs: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Vectorized all-pairs Moller-Trumbore; oracle for the tree ray casts."""
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 1, 3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 1, 3)
    tris = np.asarray(tris, dtype=np.float64)
    a = tris[np.newaxis, :, 0, :]
    e1 = tris[np.newaxis, :, 1, :] - a
    e2 = tris[np.newaxis, :, 2, :] - a
    h = np.cross(d, e2)
    det = (e1 * h).sum(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(np.abs(det) > 1e-12, 1.0 / np.where(det != 0, det, 1.0), np.nan)
    s = o - a
    u = f * (s * h).sum(-1)
    q = np.cross(s, e1)
    v = f * (d * q).sum(-1)
    t = f * (e2 * q).sum(-1)
    ok = (
        np.isfinite(t)
        & (u >= -1e-12)
        & (u <= 1 + 1e-12)
        & (v >= -1e-12)
        & (u + v <= 1 + 1e-12)
        & (t > 1e-9)
    )
    t = np.where(ok, t, np.inf)
    return t.min(axis=1)
