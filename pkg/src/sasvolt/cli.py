"""Command-line pipeline driver.

Subcommands chain through file containers: ``simulate`` renders a mesh
into raw measurements, ``matchfilter``/``deconvolve`` compress them,
``backproject``/``reconstruct`` form volumes, ``export-mesh``/
``evaluate``/``mip`` consume volumes. Every run writes a JSON manifest
(config hash, seeds, timings) next to its main output.

Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 numerical failure (divergence or degenerate inputs).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import beamform, container, deconv, mesh as meshmod, metrics, render
from . import scene as scenemod
from . import simulator
from .config import config_hash, load_config, parse_config
from .errors import ConfigError, ContainerError, DivergedLoss, SasvoltError
from .signal import Window, make_lfm
from .volume import ReconVolume

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def write_pgm(path, image: np.ndarray) -> None:
    """16-bit binary PGM, image max-normalized (zero image stays zero)."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM wants a 2D image")
    peak = img.max()
    scaled = (img / peak if peak > 0 else img) * 65535.0
    data = scaled.round().astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode())
        f.write(data.tobytes())


def _build_scene_mesh(cfg: dict) -> meshmod.Mesh:
    kind = cfg["scene"]
    if kind == "obj":
        return meshmod.load_obj(cfg["scene_path"])
    if kind == "icosphere":
        m = meshmod.make_icosphere(cfg["scene_radius_m"],
                                   cfg["scene_subdivisions"])
    elif kind == "notched_sphere":
        m = meshmod.make_notched_sphere(
            cfg["scene_radius_m"], cfg["scene_subdivisions"],
            notch_depth=cfg["notch_depth"],
            notch_angle_rad=np.deg2rad(cfg["notch_angle_deg"]))
    elif kind == "plate":
        m = meshmod.make_plate((0.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                               cfg["scene_radius_m"])
    else:
        raise ConfigError(f"unknown scene {kind!r}")
    return m.transformed(offset=cfg["scene_offset"])


def _build_poses(cfg: dict) -> list:
    bw = np.deg2rad(cfg["beamwidth_deg"])
    kind = cfg["trajectory"]
    if kind == "bistatic":
        r = cfg["track_radius_m"]
        return simulator.bistatic_trajectory(
            ((-r, 0.0, 0.0), (r, 0.0, 0.0)), cfg["n_angles"],
            cfg["bistatic_offset_m"], cfg["bistatic_depth_m"], bw)
    z_step = (cfg["height_span_m"] / (cfg["n_heights"] - 1)
              if cfg["n_heights"] > 1 else 0.0)
    return simulator.airsas_trajectory(
        kind, cfg["track_radius_m"], z_step, cfg["n_angles"],
        cfg["n_heights"], bw, keep_fraction=cfg["keep_fraction"])


def _build_waveform(cfg: dict):
    kind = cfg["window"]
    if kind == "none":
        window = Window.none()
    elif kind == "tukey":
        window = Window.tukey(cfg["window_ratio"])
    elif kind == "taylor":
        window = Window.taylor(cfg["taylor_nbar"], cfg["taylor_sll_db"])
    else:
        raise ConfigError(f"unknown window {kind!r}")
    return make_lfm(cfg["f_start_hz"], cfg["f_stop_hz"], cfg["duration_s"],
                    cfg["sample_rate_hz"], window)


def _render_config(cfg: dict, ablate_occlusion: bool) -> render.RenderConfig:
    return render.RenderConfig(
        n_rays=cfg["n_rays"], n_depth_samples=cfg["n_depth_samples"],
        zeta=0.0 if ablate_occlusion else cfg["zeta"],
        lambertian_enabled=cfg["lambertian_enabled"],
        occlusion_enabled=cfg["occlusion_enabled"] and not ablate_occlusion,
        coherent=cfg["coherent"], lambda_sparse=cfg["lambda_sparse"],
        lambda_tv_space=cfg["lambda_tv_space"],
        lambda_tv_phase=cfg["lambda_tv_phase"],
        d_reg=cfg["d_reg_m"] if cfg["d_reg_m"] > 0 else None,
        accumulate_sensors=cfg["accumulate_sensors"],
        iterations=cfg["iterations"], learning_rate=cfg["learning_rate"],
        n_coarse_rays=cfg["n_coarse_rays"],
        n_range_probes=cfg["n_range_probes"], seed=cfg["render_seed"])


def _manifest(path, subcommand: str, cfg: dict, timings: dict,
              inputs, outputs) -> None:
    doc = {
        "subcommand": subcommand,
        "config_hash": config_hash(cfg),
        "seeds": {k: cfg[k] for k in ("sim_seed", "deconv_seed",
                                      "render_seed")},
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
        "inputs": list(inputs),
        "outputs": list(outputs),
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(str(path) + ".manifest.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_kind(path, want: str):
    kind, obj = container.read_container(path)
    if kind != want:
        raise ContainerError(f"{path}: expected {want} container, got {kind}")
    return obj


def _magnitude_volume(model, dims) -> ReconVolume:
    vol = scenemod.sample_model_volume(model, (dims,) * 3)
    return ReconVolume(dims=vol.dims, bounds=vol.bounds,
                       voxels=np.abs(vol.voxels))


def _cmd_simulate(cfg, args):
    t0 = time.time()
    mesh = _build_scene_mesh(cfg)
    poses = _build_poses(cfg)
    waveform = _build_waveform(cfg)
    ms = simulator.simulate_measurements(
        mesh, poses, waveform, cfg["sound_speed_mps"], cfg["sample_rate_hz"],
        cfg["n_bins"], cfg["rays_per_pose"], cfg["snr_db"], cfg["sim_seed"],
        spreading=cfg["spreading_enabled"],
        scene_bounds=np.stack([cfg["bounds_lo"], cfg["bounds_hi"]]))
    container.write_container(args.output, ms)
    return {"simulate": time.time() - t0}, [args.output]


def _cmd_matchfilter(cfg, args):
    t0 = time.time()
    ms = _read_kind(args.input, "MEAS")
    out = beamform.matched_filter_set(ms)
    container.write_container(args.output, out)
    return {"matchfilter": time.time() - t0}, [args.output]


def _cmd_deconvolve(cfg, args):
    t0 = time.time()
    ms = _read_kind(args.input, "MEAS")
    dcfg = deconv.DeconvConfig(
        lambda_sparse=cfg["deconv_lambda_sparse"],
        lambda_tv_phase=cfg["deconv_lambda_tv_phase"],
        iterations=cfg["deconv_iterations"],
        learning_rate=cfg["deconv_learning_rate"],
        parameterization=cfg["deconv_parameterization"],
        seed=cfg["deconv_seed"])
    result = deconv.deconvolve(ms, ms.waveform, dcfg)
    container.write_container(args.output, result.as_measurement_set(ms))
    return {"deconvolve": time.time() - t0}, [args.output]


def _cmd_backproject(cfg, args):
    t0 = time.time()
    ms = _read_kind(args.input, "MEAS")
    if ms.processing == "raw":
        ms = beamform.matched_filter_set(ms)
    vol = beamform.backproject(ms, (cfg["bp_dims"],) * 3, ms.scene_bounds)
    container.write_container(args.output, vol)
    return {"backproject": time.time() - t0}, [args.output]


def _cmd_reconstruct(cfg, args):
    t0 = time.time()
    ms = _read_kind(args.input, "MEAS")
    bounds = ms.scene_bounds
    if cfg["model"] == "voxel":
        model = scenemod.VoxelSceneModel.create(
            (cfg["recon_dims"],) * 3, bounds, seed=cfg["render_seed"])
    elif cfg["model"] == "hashmlp":
        model = scenemod.HashMlpSceneModel(bounds, seed=cfg["render_seed"])
    else:
        raise ConfigError(f"unknown model {cfg['model']!r}")
    rcfg = _render_config(cfg, args.ablate_occlusion)
    model, history = render.reconstruct(ms, model, rcfg)
    t_fit = time.time() - t0
    container.write_container(args.output, model)
    vol_path = args.output_volume or (args.output + ".volu")
    container.write_container(vol_path, _magnitude_volume(model,
                                                          cfg["recon_dims"]))
    print(f"final loss {history['loss'][-1]:.6f} over "
          f"{len(history['loss'])} iterations")
    return {"reconstruct": t_fit}, [args.output, vol_path]


def _cmd_export_mesh(cfg, args):
    t0 = time.time()
    vol = _read_kind(args.input, "VOLU")
    m = scenemod.extract_mesh(vol, threshold=cfg["mesh_threshold"])
    meshmod.save_obj(m, args.output)
    return {"export_mesh": time.time() - t0}, [args.output]


def _cmd_evaluate(cfg, args):
    t0 = time.time()
    vol = _read_kind(args.input, "VOLU")
    truth = meshmod.load_obj(cfg["truth_mesh_path"])
    report = metrics.threshold_sweep(
        vol, truth, cfg["thresholds"], vox_dims=cfg["eval_vox_dims"],
        n_views=cfg["eval_views"],
        image_dims=(cfg["eval_image_dim"],) * 2,
        n_surface_points=cfg["eval_points"])
    with open(args.output, "w", encoding="utf-8") as f:
        f.write(report.to_kv())
    sys.stdout.write(report.to_text())
    return {"evaluate": time.time() - t0}, [args.output]


def _cmd_mip(cfg, args):
    t0 = time.time()
    vol = _read_kind(args.input, "VOLU")
    write_pgm(args.output, metrics.mip(vol, cfg["mip_axis"]))
    return {"mip": time.time() - t0}, [args.output]


_COMMANDS = {
    "simulate": (_cmd_simulate, False, True),
    "matchfilter": (_cmd_matchfilter, True, True),
    "deconvolve": (_cmd_deconvolve, True, True),
    "backproject": (_cmd_backproject, True, True),
    "reconstruct": (_cmd_reconstruct, True, True),
    "export-mesh": (_cmd_export_mesh, True, True),
    "evaluate": (_cmd_evaluate, True, True),
    "mip": (_cmd_mip, True, True),
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sasvolt",
        description="synthetic aperture sonar simulation and "
                    "volumetric reconstruction")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name, (_, needs_in, needs_out) in _COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="key = value experiment file")
        if needs_in:
            p.add_argument("--input", required=True)
        if needs_out:
            p.add_argument("--output", required=True)
        p.add_argument("--threads", type=int, default=None,
                       help="numba thread count")
        p.add_argument("--seed", type=int, default=None,
                       help="override every seed in the config")
        if name == "reconstruct":
            p.add_argument("--ablate-occlusion", action="store_true",
                           help="force zeta = 0")
            p.add_argument("--output-volume", default=None)
    return ap


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = (load_config(args.config) if args.config
               else parse_config(""))
        seed_env = os.environ.get("SASVOLT_SEED")
        seed = args.seed if args.seed is not None else (
            int(seed_env) if seed_env else None)
        if seed is not None:
            cfg["sim_seed"] = cfg["deconv_seed"] = cfg["render_seed"] = seed
        if args.threads is not None:
            import numba
            numba.set_num_threads(args.threads)
        if not hasattr(args, "ablate_occlusion"):
            args.ablate_occlusion = False
        if not hasattr(args, "output_volume"):
            args.output_volume = None
        fn = _COMMANDS[args.subcommand][0]
        timings, outputs = fn(cfg, args)
        inputs = [args.input] if hasattr(args, "input") else []
        _manifest(outputs[0], args.subcommand, cfg, timings, inputs, outputs)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContainerError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergedLoss, SasvoltError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
