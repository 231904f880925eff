"""Experiment configuration: flat ``key = value`` text files.

One schema covers every pipeline knob (simulation, deconvolution,
reconstruction, evaluation) plus paths and seeds. Lines are
``key = value`` with ``#`` comments; unknown keys are rejected so
typos fail loudly. Values are typed per the schema; vectors are
comma-separated floats.
"""

from __future__ import annotations

import hashlib

from .errors import ConfigError

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_floats(raw: str):
    return tuple(float(v) for v in raw.split(","))


_PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": str,
    "floats": _parse_floats,
}

# name -> (type, default)
SCHEMA = {
    # paths (empty = unset; subcommands validate what they need)
    "input_path": ("str", ""),
    "output_path": ("str", ""),
    "scene_path": ("str", ""),
    "truth_mesh_path": ("str", ""),

    # scene geometry
    "scene": ("str", "notched_sphere"),
    "scene_radius_m": ("float", 0.05),
    "scene_subdivisions": ("int", 3),
    "notch_depth": ("float", 0.35),
    "notch_angle_deg": ("float", 40.0),
    "scene_offset": ("floats", (0.0, 0.0, 0.0)),
    "bounds_lo": ("floats", (-0.08, -0.08, -0.08)),
    "bounds_hi": ("floats", (0.08, 0.08, 0.08)),

    # trajectory
    "trajectory": ("str", "circular"),
    "n_angles": ("int", 360),
    "n_heights": ("int", 1),
    "track_radius_m": ("float", 0.35),
    "height_span_m": ("float", 0.0),
    "keep_fraction": ("float", 1.0),
    "beamwidth_deg": ("float", 30.0),
    "bistatic_depth_m": ("float", 0.0),
    "bistatic_offset_m": ("float", 0.0),

    # waveform and simulation
    "f_start_hz": ("float", 25000.0),
    "f_stop_hz": ("float", 45000.0),
    "duration_s": ("float", 0.001),
    "sample_rate_hz": ("float", 100000.0),
    "window": ("str", "tukey"),
    "window_ratio": ("float", 0.1),
    "taylor_nbar": ("int", 4),
    "taylor_sll_db": ("float", 30.0),
    "sound_speed_mps": ("float", 343.0),
    "snr_db": ("float", float("inf")),
    "rays_per_pose": ("int", 20000),
    "n_bins": ("int", 2000),
    "spreading_enabled": ("bool", False),
    "sim_seed": ("int", 0),

    # pulse deconvolution
    "deconv_lambda_sparse": ("float", 3e-3),
    "deconv_lambda_tv_phase": ("float", 1e-3),
    "deconv_iterations": ("int", 1500),
    "deconv_learning_rate": ("float", 1e-2),
    "deconv_parameterization": ("str", "direct_bins"),
    "deconv_seed": ("int", 0),

    # volumetric reconstruction
    "model": ("str", "voxel"),
    "recon_dims": ("int", 64),
    "n_rays": ("int", 512),
    "n_depth_samples": ("int", 64),
    "zeta": ("float", 1.0),
    "lambertian_enabled": ("bool", True),
    "occlusion_enabled": ("bool", True),
    "coherent": ("bool", True),
    "lambda_sparse": ("float", 0.0),
    "lambda_tv_space": ("float", 0.0),
    "lambda_tv_phase": ("float", 0.0),
    "d_reg_m": ("float", 0.0),
    "accumulate_sensors": ("int", 5),
    "iterations": ("int", 2000),
    "learning_rate": ("float", 5e-3),
    "n_coarse_rays": ("int", 64),
    "n_range_probes": ("int", 16),
    "render_seed": ("int", 0),

    # backprojection
    "bp_dims": ("int", 64),

    # evaluation / images
    "thresholds": ("floats", (0.05, 0.2, 0.3, 0.5, 0.7)),
    "eval_vox_dims": ("int", 128),
    "eval_views": ("int", 10),
    "eval_image_dim": ("int", 128),
    "eval_points": ("int", 10000),
    "mesh_threshold": ("float", 0.2),
    "mip_axis": ("int", 2),
}


def parse_config(text: str) -> dict:
    """Parse config text into a fully defaulted {key: value} dict."""
    values = {name: default for name, (_, default) in SCHEMA.items()}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        typ, _ = SCHEMA[key]
        try:
            values[key] = _PARSERS[typ](val)
        except ValueError as exc:
            raise ConfigError(f"line {ln}: bad {typ} for {key!r}: {exc}") from exc
    return values


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(values: dict) -> str:
    """Canonical text form (schema order); hash-stable and re-parseable."""
    lines = []
    for name, (typ, _) in SCHEMA.items():
        v = values[name]
        if typ == "floats":
            lines.append(f"{name} = {','.join(repr(float(x)) for x in v)}")
        elif typ == "bool":
            lines.append(f"{name} = {'true' if v else 'false'}")
        else:
            lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


def config_hash(values: dict) -> str:
    return hashlib.sha256(dump_config(values).encode()).hexdigest()
