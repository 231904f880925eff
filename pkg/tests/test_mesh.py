import numpy as np
import pytest
from numpy.testing import assert_allclose

from sasvolt.mesh import (Mesh, build_bvh, first_hit, load_obj,
                          make_icosphere, make_mesh, make_notched_sphere,
                          make_plate, sample_surface, save_obj)


def test_icosphere_vertices_on_sphere():
    m = make_icosphere(0.07, 3)
    radii = np.linalg.norm(m.vertices, axis=1)
    assert_allclose(radii, 0.07, rtol=1e-12)
    # area converges to 4 pi r^2 from below
    area = m.face_areas().sum()
    assert 0.985 * 4 * np.pi * 0.07 ** 2 < area < 4 * np.pi * 0.07 ** 2


def test_icosphere_subdivision_face_count():
    # each subdivision splits every face in four
    for s in range(3):
        assert make_icosphere(1.0, s).n_triangles == 20 * 4 ** s


def test_icosphere_outward_normals():
    m = make_icosphere(1.0, 2)
    centers = m.vertices[m.triangles].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", m.normals, centers) > 0)


def test_plate_geometry():
    m = make_plate((1.0, 2.0, 3.0), (0.0, 0.0, 1.0), 0.5)
    assert m.n_triangles == 2
    assert m.face_areas().sum() == pytest.approx(1.0)
    assert_allclose(m.vertices[:, 2], 3.0)
    assert_allclose(np.abs(m.normals[:, 2]), 1.0)


def test_notched_sphere_carves_plane():
    r, depth = 1.0, 0.35
    m = make_notched_sphere(r, 3, notch_axis=(1, 0, 0),
                            notch_angle_rad=0.55, notch_depth=depth)
    radii = np.linalg.norm(m.vertices, axis=1)
    flat = m.vertices[radii < r - 1e-9]
    assert len(flat) > 0
    # pulled vertices all sit on the x = (1-depth) r plane
    assert_allclose(flat[:, 0], (1 - depth) * r, atol=1e-12)
    # everything else still on the sphere
    assert_allclose(radii[radii >= r - 1e-9], r, rtol=1e-12)


def test_mesh_bounds_and_transformed():
    m = make_plate((0, 0, 0), (0, 0, 1), 1.0)
    b = m.bounds()
    assert_allclose(b[0], [-1, -1, 0])
    assert_allclose(b[1], [1, 1, 0])
    t = m.transformed(scale=2.0, offset=(1.0, 0.0, 0.0))
    assert_allclose(t.bounds()[1], [3, 2, 0])


def test_obj_round_trip(tmp_path, small_sphere):
    path = tmp_path / "s.obj"
    save_obj(small_sphere, path)
    back = load_obj(path)
    assert_allclose(back.vertices, small_sphere.vertices, atol=1e-6)
    assert np.array_equal(back.triangles, small_sphere.triangles)


def test_load_obj_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_obj(tmp_path / "nope.obj")


def test_make_mesh_validates():
    with pytest.raises(ValueError):
        make_mesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))


def test_sample_surface_counts_and_membership():
    m = make_plate((0, 0, 0), (0, 0, 1), 1.0)
    pts = sample_surface(m, 5000, seed=1)
    assert pts.shape == (5000, 3)
    assert_allclose(pts[:, 2], 0.0, atol=1e-12)
    assert np.all(np.abs(pts[:, :2]) <= 1.0 + 1e-12)
    # uniform over the square: quadrant counts within 5 sigma
    quad = (pts[:, 0] > 0) & (pts[:, 1] > 0)
    assert abs(quad.sum() - 1250) < 5 * np.sqrt(5000 * 0.25 * 0.75)


def test_sample_surface_area_weighted():
    # two triangles of area ratio 4:1 -> sample ratio ~4:1
    verts = np.array([[0, 0, 0], [2, 0, 0], [0, 2, 0],
                      [5, 0, 0], [6, 0, 0], [5, 1, 0]], dtype=float)
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    m = make_mesh(verts, tris)
    pts = sample_surface(m, 20000, seed=0)
    frac_big = np.mean(pts[:, 0] < 4.0)
    assert abs(frac_big - 0.8) < 0.02


def test_first_hit_matches_brute_force(small_sphere):
    rng = np.random.default_rng(7)
    bvh = build_bvh(small_sphere)
    n = 500
    origins = rng.uniform(-0.3, 0.3, (n, 3))
    origins[:, 2] = 0.4
    dirs = np.tile([0.0, 0.0, -1.0], (n, 1))
    jitter = rng.uniform(-0.3, 0.3, (n, 3))
    dirs = jitter - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t_bvh, tri_bvh = first_hit(bvh, origins, dirs)

    # oracle: Moller-Trumbore against every triangle
    v = small_sphere.vertices[small_sphere.triangles]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    for i in range(n):
        o, d = origins[i], dirs[i]
        pvec = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, pvec)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = o - v[:, 0]
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        vv = np.einsum("j,ij->i", d, qvec) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
        hit = ok & (u >= -1e-12) & (vv >= -1e-12) & (u + vv <= 1 + 1e-12) \
            & (t > 1e-9)
        t_best = t[hit].min() if hit.any() else np.inf
        if np.isinf(t_best):
            assert np.isinf(t_bvh[i])
        else:
            assert t_bvh[i] == pytest.approx(t_best, abs=1e-9)


def test_first_hit_miss_is_inf(small_sphere):
    bvh = build_bvh(small_sphere)
    t, tri = first_hit(bvh, np.array([[0.0, 0.0, 1.0]]),
                       np.array([[0.0, 0.0, 1.0]]))
    assert np.isinf(t[0]) and tri[0] == -1
