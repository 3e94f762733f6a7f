import numpy as np

from egolift.bvh import TriBvh, point_tri_dist_brute, raycast_brute


def random_tris(rng, n, scale=1.0):
    base = rng.uniform(-2, 2, size=(n, 1, 3))
    return base + rng.normal(scale=scale, size=(n, 3, 3))


def test_point_query_matches_brute_force():
    rng = np.random.default_rng(21)
    tris = random_tris(rng, 500, scale=0.4)
    pts = rng.uniform(-3, 3, size=(1000, 3))
    tree = TriBvh(tris)
    got = tree.point_distances(pts)
    want = point_tri_dist_brute(pts, tris)
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_point_on_face_distance_zero():
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], dtype=np.float64)
    tree = TriBvh(tri)
    p = np.array([[0.2, 0.3, 0.0]])
    assert tree.point_distances(p)[0] < 1e-12
    assert point_tri_dist_brute(p, tri)[0] < 1e-12


def test_point_above_interior():
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], dtype=np.float64)
    p = np.array([[0.2, 0.3, 0.7]])
    assert abs(TriBvh(tri).point_distances(p)[0] - 0.7) < 1e-12
    assert abs(point_tri_dist_brute(p, tri)[0] - 0.7) < 1e-12


def test_point_outside_projection_uses_edge():
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], dtype=np.float64)
    p = np.array([[2.0, -1.0, 0.0]])  # closest to vertex b
    want = np.linalg.norm(p[0] - [1, 0, 0])
    assert abs(TriBvh(tri).point_distances(p)[0] - want) < 1e-12
    assert abs(point_tri_dist_brute(p, tri)[0] - want) < 1e-12


def test_raycast_matches_brute_force():
    rng = np.random.default_rng(22)
    tris = random_tris(rng, 200, scale=0.5)
    origins = rng.uniform(-3, 3, size=(500, 3))
    dirs = rng.normal(size=(500, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    got = TriBvh(tris).raycast(origins, dirs)
    want = raycast_brute(origins, dirs, tris)
    both_hit = np.isfinite(got) & np.isfinite(want)
    assert (np.isfinite(got) == np.isfinite(want)).all()
    np.testing.assert_allclose(got[both_hit], want[both_hit], atol=1e-9)


def test_raycast_miss_is_inf():
    tri = np.array([[[0, 0, 1.0], [1, 0, 1.0], [0, 1, 1.0]]])
    t = TriBvh(tri).raycast(np.array([[0.2, 0.2, 0.0]]), np.array([[0.0, 0.0, -1.0]]))
    assert np.isinf(t[0])


def test_raycast_hit_distance():
    tri = np.array([[[-5, -5, 2.0], [5, -5, 2.0], [0, 5, 2.0]]])
    t = TriBvh(tri).raycast(np.array([[0.0, 0.0, 0.0]]), np.array([[0.0, 0.0, 1.0]]))
    assert abs(t[0] - 2.0) < 1e-12
