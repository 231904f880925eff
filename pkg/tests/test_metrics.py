"""Volume/mesh evaluation metrics against brute-force oracles."""

import numpy as np
import pytest

from sasvolt import mesh as meshmod
from sasvolt.errors import (AllEmptyIsosurfaces, DimsMismatch, EmptySet,
                            InvalidCounts)
from sasvolt.metrics import (chamfer, depth_render, iou, mip, mse, psnr,
                             threshold_sweep, voxelize_mesh)
from sasvolt.volume import ReconVolume


def _cube(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    v = np.array([
        [lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]],
        [hi[0], hi[1], lo[2]], [lo[0], hi[1], lo[2]],
        [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]],
        [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]]])
    t = np.array([[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
                  [0, 1, 5], [0, 5, 4], [2, 3, 7], [2, 7, 6],
                  [1, 2, 6], [1, 6, 5], [3, 0, 4], [3, 4, 7]])
    return meshmod.make_mesh(v, t)


def _soft_sphere_volume(radius=0.3, dims=(48, 48, 48), half=0.4):
    lo = np.full(3, -half)
    hi = np.full(3, half)
    pitch = (hi - lo) / np.asarray(dims)
    ii = np.indices(dims).reshape(3, -1).T
    centers = lo + (ii + 0.5) * pitch
    r = np.linalg.norm(centers, axis=1)
    field = 1.0 / (1.0 + np.exp((r - radius) / 0.01))
    return ReconVolume(dims=dims, bounds=np.stack([lo, hi]),
                       voxels=field.reshape(dims))


def test_chamfer_matches_bruteforce():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(40, 3))
    b = rng.normal(size=(50, 3))
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    want = d2.min(axis=1).mean() + d2.min(axis=0).mean()
    assert chamfer(a, b) == pytest.approx(want, rel=1e-12)
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), rel=1e-12)
    assert chamfer(a, a) == 0.0
    with pytest.raises(EmptySet):
        chamfer(a, np.empty((0, 3)))


def test_iou_on_boolean_grids():
    a = np.zeros((64, 64, 64), dtype=bool)
    b = np.zeros((64, 64, 64), dtype=bool)
    a[:32] = True
    b[16:48] = True
    assert iou(a, b) == pytest.approx(1 / 3, rel=1e-12)
    assert iou(a, a) == 1.0
    assert iou(np.zeros_like(a), np.zeros_like(a)) == 1.0
    assert iou(a, np.zeros_like(a)) == 0.0
    with pytest.raises(DimsMismatch):
        iou(a, b[:32])


def test_voxelize_half_overlapping_cubes():
    a = _cube((0, 0, 0), (1, 1, 1))
    b = _cube((0.5, 0, 0), (1.5, 1, 1))
    bounds = ((-0.1, -0.1, -0.1), (1.6, 1.1, 1.1))
    va = voxelize_mesh(a, 128, bounds)
    vb = voxelize_mesh(b, 128, bounds)
    assert iou(va, vb) == pytest.approx(1 / 3, rel=0.02)


def test_voxelize_sphere_volume():
    sphere = meshmod.make_icosphere(0.5, 3)
    occ = voxelize_mesh(sphere, 96, ((-0.6,) * 3, (0.6,) * 3))
    ratio = occ.mean() * 1.2 ** 3 / (4 / 3 * np.pi * 0.5 ** 3)
    # the surface shell inflates the solid by a fraction of a voxel
    assert 1.0 < ratio < 1.08


def test_depth_render_sphere_oracle():
    sphere = meshmod.make_icosphere(0.5, 3)
    depths, far = depth_render(sphere, n_views=4, image_dims=(65, 65))
    mb = sphere.bounds()
    diag = float(np.linalg.norm(mb[1] - mb[0]))
    assert far == pytest.approx(2 * diag, rel=1e-12)
    assert depths.shape == (4, 65, 65)
    # center pixel looks through the scene center from one diagonal out
    for a in range(4):
        assert depths[a, 32, 32] == pytest.approx(diag - 0.5, abs=0.01)
    assert depths[0, 0, 0] == far


def test_mse_psnr():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.1)
    assert mse(a, b) == pytest.approx(0.01, rel=1e-12)
    assert psnr(a, b) == pytest.approx(20.0, rel=1e-12)
    assert psnr(a, a) == 99.0
    assert psnr(a, np.full((8, 8), 1e-7)) == 99.0
    assert psnr(a, b, data_range=0.1) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(DimsMismatch):
        mse(a, np.zeros((4, 4)))


def test_mip_exact():
    vox = np.zeros((3, 4, 5), dtype=complex)
    vox[1, 2, 3] = 3 - 4j
    vox[0, 0, 0] = 1.0
    img = mip(vox, axis=2)
    assert img.shape == (3, 4)
    assert img[1, 2] == 5.0 and img[0, 0] == 1.0
    vol = ReconVolume(dims=(3, 4, 5),
                      bounds=((0, 0, 0), (1, 1, 1)), voxels=vox)
    assert np.array_equal(mip(vol, axis=0), np.abs(vox).max(axis=0))
    with pytest.raises(ValueError):
        mip(vox, axis=3)
    with pytest.raises(ValueError):
        mip(np.zeros((4, 4)))


def test_threshold_sweep_recovers_sphere():
    volume = _soft_sphere_volume()
    truth = meshmod.make_icosphere(0.3, 3)
    report = threshold_sweep(volume, truth, [0.2, 0.5, 0.8], vox_dims=64,
                             n_views=4, image_dims=(64, 64),
                             n_surface_points=3000, seed=0)
    assert report.best_threshold == 0.5
    assert report.iou > 0.95
    pitch = 0.8 / 48
    assert report.chamfer < (2 * pitch) ** 2
    assert report.psnr_db > 40.0
    assert len(report.per_threshold) == 3
    assert all(not r["empty"] for r in report.per_threshold)
    ious = [r["iou"] for r in report.per_threshold]
    assert max(ious) == report.iou
    assert len(report.per_view) == 4

    text = report.to_text()
    assert "chamfer_m2" in text and "best_threshold" in text
    kv = report.to_kv()
    assert f"iou = {report.iou!r}" in kv
    assert "view0_psnr_db" in kv


def test_threshold_sweep_empty_rows():
    volume = _soft_sphere_volume()
    truth = meshmod.make_icosphere(0.3, 2)
    report = threshold_sweep(volume, truth, [0.5, 1.5], vox_dims=32,
                             n_views=2, image_dims=(32, 32),
                             n_surface_points=500, seed=0)
    assert report.per_threshold[1]["empty"]
    assert report.best_threshold == 0.5
    with pytest.raises(AllEmptyIsosurfaces):
        threshold_sweep(volume, truth, [1.5, 2.5], vox_dims=32,
                        n_views=2, image_dims=(32, 32),
                        n_surface_points=500, seed=0)
    with pytest.raises(InvalidCounts):
        threshold_sweep(volume, truth, [0.5], vox_dims=32)
