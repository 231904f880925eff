"""End-to-end pipeline runs through the command-line front end."""

import json

import numpy as np
import pytest

from sasvolt import mesh as meshmod
from sasvolt.cli import main
from sasvolt.container import read_container

_TINY_CFG = """
scene = icosphere
scene_radius_m = 0.04
scene_subdivisions = 1
bounds_lo = -0.06, -0.06, -0.06
bounds_hi = 0.06, 0.06, 0.06
trajectory = circular
n_angles = 8
track_radius_m = 0.35
beamwidth_deg = 45
rays_per_pose = 2000
n_bins = 600
snr_db = 30
deconv_iterations = 40
deconv_learning_rate = 2e-2
model = voxel
recon_dims = 12
n_rays = 48
n_depth_samples = 12
n_coarse_rays = 16
n_range_probes = 6
iterations = 16
accumulate_sensors = 4
learning_rate = 1e-2
bp_dims = 12
thresholds = 0.2, 0.5
eval_vox_dims = 32
eval_views = 2
eval_image_dim = 32
eval_points = 400
mesh_threshold = 0.3
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    truth = root / "truth.obj"
    meshmod.save_obj(meshmod.make_icosphere(0.04, 1), truth)
    cfg.write_text(_TINY_CFG + f"truth_mesh_path = {truth}\n")
    meas = root / "raw.svlt"
    assert main(["simulate", "--config", str(cfg),
                 "--output", str(meas)]) == 0
    return root, cfg, meas


def test_simulate_output_and_manifest(workdir):
    root, cfg, meas = workdir
    kind, ms = read_container(meas)
    assert kind == "MEAS"
    assert len(ms.poses) == 8
    assert ms.processing == "raw"
    assert ms.sample_rate_hz == 100000.0
    manifest = json.loads((root / "raw.svlt.manifest.json").read_text())
    assert manifest["subcommand"] == "simulate"
    assert len(manifest["config_hash"]) == 64
    assert set(manifest["seeds"]) == {"sim_seed", "deconv_seed", "render_seed"}
    assert manifest["outputs"] == [str(meas)]
    assert "timings_s" in manifest and "written_at" in manifest


def test_simulate_is_byte_deterministic(workdir, monkeypatch):
    root, cfg, meas = workdir
    again = root / "again.svlt"
    assert main(["simulate", "--config", str(cfg),
                 "--output", str(again)]) == 0
    assert again.read_bytes() == meas.read_bytes()

    seeded = root / "seeded.svlt"
    monkeypatch.setenv("SASVOLT_SEED", "7")
    assert main(["simulate", "--config", str(cfg),
                 "--output", str(seeded)]) == 0
    assert seeded.read_bytes() != meas.read_bytes()
    manifest = json.loads((root / "seeded.svlt.manifest.json").read_text())
    assert manifest["seeds"] == {"sim_seed": 7, "deconv_seed": 7,
                                 "render_seed": 7}


def test_pipeline_through_evaluate(workdir):
    root, cfg, meas = workdir
    mf = root / "mf.svlt"
    assert main(["matchfilter", "--config", str(cfg), "--input", str(meas),
                 "--output", str(mf), "--threads", "1"]) == 0
    assert read_container(mf)[1].processing == "matched"

    pd = root / "pd.svlt"
    assert main(["deconvolve", "--config", str(cfg), "--input", str(meas),
                 "--output", str(pd)]) == 0
    assert read_container(pd)[1].processing == "deconvolved"

    bp = root / "bp.svlt"
    assert main(["backproject", "--config", str(cfg), "--input", str(pd),
                 "--output", str(bp)]) == 0
    kind, vol = read_container(bp)
    assert kind == "VOLU" and vol.dims == (12, 12, 12)

    scen = root / "nbp.svlt"
    volu = root / "nbp_vol.svlt"
    assert main(["reconstruct", "--config", str(cfg), "--input", str(pd),
                 "--output", str(scen), "--output-volume", str(volu)]) == 0
    assert read_container(scen)[0] == "SCEN"
    kind, nvol = read_container(volu)
    assert kind == "VOLU" and nvol.dims == (12, 12, 12)
    assert not np.iscomplexobj(nvol.voxels)

    obj = root / "recon.obj"
    assert main(["export-mesh", "--config", str(cfg), "--input", str(volu),
                 "--output", str(obj)]) == 0
    m = meshmod.load_obj(obj)
    assert len(m.triangles) > 0

    report = root / "report.kv"
    assert main(["evaluate", "--config", str(cfg), "--input", str(volu),
                 "--output", str(report)]) == 0
    kv = report.read_text()
    assert "iou = " in kv and "chamfer_m2 = " in kv

    pgm = root / "mip.pgm"
    assert main(["mip", "--config", str(cfg), "--input", str(volu),
                 "--output", str(pgm)]) == 0
    raw = pgm.read_bytes()
    assert raw.startswith(b"P5\n12 12\n65535\n")
    pixels = np.frombuffer(raw.split(b"65535\n", 1)[1], dtype=">u2")
    assert pixels.size == 144 and pixels.max() == 65535


def test_exit_codes(workdir, tmp_path):
    root, cfg, meas = workdir
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("definitely_not_a_key = 1\n")
    assert main(["simulate", "--config", str(bad_cfg),
                 "--output", str(tmp_path / "x.svlt")]) == 2
    # argparse problems (missing required flags) are config errors too
    assert main(["simulate", "--config", str(cfg)]) == 2
    assert main(["matchfilter", "--config", str(cfg),
                 "--input", str(tmp_path / "absent.svlt"),
                 "--output", str(tmp_path / "y.svlt")]) == 3
    # wrong container kind on the way in
    volu = root / "nbp_vol.svlt"
    if volu.exists():
        assert main(["matchfilter", "--config", str(cfg),
                     "--input", str(volu),
                     "--output", str(tmp_path / "z.svlt")]) == 3
    # scene box that cannot fit in the record is a numerical error
    short_cfg = tmp_path / "short.cfg"
    short_cfg.write_text(_TINY_CFG.replace("n_bins = 600", "n_bins = 20"))
    assert main(["simulate", "--config", str(short_cfg),
                 "--output", str(tmp_path / "w.svlt")]) == 4


def test_defaults_without_config(tmp_path):
    # no --config parses an empty text and still exits through the
    # io path when the input is missing
    assert main(["matchfilter", "--input", str(tmp_path / "none.svlt"),
                 "--output", str(tmp_path / "out.svlt")]) == 3
