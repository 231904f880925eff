import numpy as np
import pytest
from numpy.testing import assert_allclose

from sasvolt.ellipsoid import (EllipsoidFrame, expected_point, implicit_value,
                               make_frame, ray_ellipsoid_depth,
                               ray_ellipsoid_roots, semi_axes, transmittance)
from sasvolt.errors import (DegenerateEllipsoid, NoIntersection,
                            NonMonotoneDepths)


def test_semi_axes_formulas():
    a, b, c = semi_axes(2.0, 2.0)
    assert a == pytest.approx(2.0)
    assert b == c == pytest.approx(np.sqrt(4.0 - 1.0))
    a, b, c = semi_axes(1.5, 0.0)  # monostatic: a sphere
    assert a == b == c == pytest.approx(1.5)
    with pytest.raises(DegenerateEllipsoid):
        semi_axes(0.5, 1.0)  # r <= d/2 is unreachable geometry


def test_implicit_value_zero_on_surface():
    r, d = 1.3, 0.8
    a, b, c = semi_axes(r, d)
    t = np.linspace(0, 2 * np.pi, 9)
    pts = np.stack([a * np.cos(t), b * np.sin(t), np.zeros_like(t)], axis=1)
    assert_allclose(implicit_value(pts, r, d), 0.0, atol=1e-12)
    assert implicit_value(np.zeros((1, 3)), r, d)[0] < 0  # center inside


def test_foci_property_on_surface():
    # ellipsoid of constant two-way range: |x-f1| + |x-f2| = 2r
    r, d = 1.1, 0.9
    a, b, c = semi_axes(r, d)
    f1 = np.array([-d / 2, 0, 0])
    f2 = np.array([d / 2, 0, 0])
    rng = np.random.default_rng(0)
    u = rng.standard_normal((200, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pts = u * np.array([a, b, c])
    total = (np.linalg.norm(pts - f1, axis=1)
             + np.linalg.norm(pts - f2, axis=1))
    assert_allclose(total, 2 * r, atol=1e-12)


def _bisect_root(origin, direction, r, d, lo, hi, iters=200):
    """Sign-change bisection on the implicit function along the ray."""
    def f(l):
        return implicit_value(origin + l[:, None] * direction, r, d)
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        same = np.sign(fm) == np.sign(flo)
        lo = np.where(same, mid, lo)
        flo = np.where(same, fm, flo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def test_roots_match_bisection_oracle():
    rng = np.random.default_rng(1)
    n = 2000
    d = 0.6
    r = rng.uniform(0.4, 2.0, n)
    origin = np.zeros(3)  # center is inside every ellipsoid
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    l_neg, l_pos, valid = ray_ellipsoid_roots(
        origin[None, None, :], dirs[:, None, :], r[:, None], d)
    l_neg, l_pos, valid = l_neg[:, 0], l_pos[:, 0], valid[:, 0]
    assert valid.all()
    # from the center, one positive and one negative root
    assert np.all(l_pos > 0) and np.all(l_neg < 0)
    span = 2 * r + d  # conservative bracket
    oracle_pos = _bisect_root(origin, dirs, r, d,
                              np.zeros(n), span)
    oracle_neg = _bisect_root(origin, dirs, r, d,
                              np.zeros(n), -span)
    assert np.abs(l_pos - oracle_pos).max() < 1e-9
    assert np.abs(l_neg - oracle_neg).max() < 1e-9


def test_roots_two_way_path_identity():
    # x on the ellipsoid of two-way range 2r: |x-ot| + |x-or| = 2r
    rng = np.random.default_rng(2)
    n = 5000
    d = rng.uniform(0.0, 1.0)
    o_t = np.array([-d / 2, 0, 0])
    o_r = np.array([d / 2, 0, 0])
    r = rng.uniform(d / 2 + 0.05, 3.0, n)
    starts = rng.uniform(-0.2, 0.2, (n, 3)) * d  # near the center
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    l_neg, l_pos, valid = ray_ellipsoid_roots(
        starts[:, None, :], dirs[:, None, :], r[:, None], d)
    ok = valid[:, 0]
    assert ok.mean() > 0.99
    x = starts[ok] + l_pos[ok, 0, None] * dirs[ok]
    total = (np.linalg.norm(x - o_t, axis=1)
             + np.linalg.norm(x - o_r, axis=1))
    assert np.abs(total - 2 * r[ok]).max() < 1e-7


def test_roots_missing_ray_flagged_invalid():
    # ray far outside aimed away: no intersection
    origin = np.array([[[10.0, 10.0, 10.0]]])
    direction = np.array([[[1.0, 0.0, 0.0]]])
    _, _, valid = ray_ellipsoid_roots(origin, direction,
                                      np.array([[1.0]]), 0.5)
    assert not valid[0, 0]


def test_depth_scalar_api():
    # unit sphere from z=+3 looking down: entry at 2, exit at 4
    got = ray_ellipsoid_depth(np.array([0.0, 0, 3.0]),
                              np.array([0.0, 0, -1.0]), 1.0, 0.0,
                              root="positive")
    assert got == pytest.approx(4.0, abs=1e-12)
    got = ray_ellipsoid_depth(np.array([0.0, 0, 3.0]),
                              np.array([0.0, 0, -1.0]), 1.0, 0.0,
                              root="negative")
    assert got == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(NoIntersection):
        ray_ellipsoid_depth(np.array([5.0, 0, 3.0]),
                            np.array([0.0, 0, -1.0]), 1.0, 0.0)
    with pytest.raises(ValueError):
        ray_ellipsoid_depth(np.zeros(3), np.array([0.0, 0, -2.0]), 1.0, 0.0)


def test_make_frame_axes():
    f = make_frame(np.array([1.0, 0, 0]), np.array([3.0, 0, 0]))
    assert_allclose(f.center, [2.0, 0, 0])
    assert f.d == pytest.approx(2.0)
    # x-axis along the baseline; orthonormal right-handed frame
    assert_allclose(np.abs(f.axes[0]), [1, 0, 0], atol=1e-12)
    assert_allclose(f.axes @ f.axes.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(f.axes) == pytest.approx(1.0)


def test_make_frame_collocated_identity():
    f = make_frame(np.ones(3), np.ones(3))
    assert f.d == 0.0
    assert_allclose(f.axes, np.eye(3))
    assert_allclose(f.center, np.ones(3))


def test_frame_round_trip():
    f = make_frame(np.array([0.0, 1.0, 2.0]), np.array([1.0, -1.0, 0.5]))
    rng = np.random.default_rng(3)
    p = rng.standard_normal((20, 3))
    assert_allclose(f.from_frame(f.to_frame(p)), p, atol=1e-12)
    # to_frame really is the frame: foci land on the x axis at +-d/2
    ft = f.to_frame(np.array([[0.0, 1.0, 2.0], [1.0, -1.0, 0.5]]))
    assert_allclose(ft[:, 1:], 0.0, atol=1e-12)
    assert_allclose(np.sort(ft[:, 0]), [-f.d / 2, f.d / 2], atol=1e-12)


def test_transmittance_monotone_and_exact():
    # T_i = exp(-zeta * sum_{k<i} m_k dl_k), first sample unattenuated
    m = np.array([[0.5, 1.0, 2.0, 0.0]])
    depths = np.array([[0.0, 1.0, 2.0, 4.0]])
    t = transmittance(m, depths, zeta=0.7)
    expect = np.exp(-0.7 * np.array([0.0, 0.5, 1.5, 5.5]))
    assert_allclose(t, expect[None, :], atol=1e-14)
    assert np.all(np.diff(t[0]) <= 0)


def test_transmittance_zeta_zero_is_one():
    rng = np.random.default_rng(4)
    m = rng.uniform(0, 2, (3, 10))
    depths = np.sort(rng.uniform(0, 5, (3, 10)), axis=1)
    assert_allclose(transmittance(m, depths, 0.0), 1.0)


def test_transmittance_rejects_unsorted():
    with pytest.raises(NonMonotoneDepths):
        transmittance(np.ones((1, 3)), np.array([[0.0, 2.0, 1.0]]), 1.0)


def test_expected_point_is_weighted_mean():
    sigma = np.array([0.0, 2.0, 0.0], dtype=complex)
    trans = np.array([1.0, 0.5, 0.1])
    pts = np.arange(9, dtype=float).reshape(3, 3)
    e, ok = expected_point(sigma, trans, pts)
    assert ok
    assert_allclose(e, pts[1])  # all weight on the middle sample
    # general case: |sigma| T weighted mean
    sigma2 = np.array([1.0, 1.0j, -2.0])
    trans2 = np.array([1.0, 0.5, 0.25])
    w = np.abs(sigma2) * trans2
    e2, ok2 = expected_point(sigma2, trans2, pts)
    assert ok2
    assert_allclose(e2, (pts * (w / w.sum())[:, None]).sum(axis=0))


def test_expected_point_fallback_mid_ray():
    sigma = np.zeros(3, dtype=complex)
    trans = np.ones(3)
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    e, ok = expected_point(sigma, trans, pts)
    assert not ok
    assert_allclose(e, [1.0, 0, 0])  # midpoint when nothing scatters
