"""Synthetic aperture sonar simulation and volumetric reconstruction.

The toolkit covers the full measurement-to-model loop: render transient
responses of triangle meshes from arbitrary transmitter/receiver poses,
pulse-compress or deconvolve the raw series, then recover a complex
scatterer field either by time-domain backprojection or by fitting a
differentiable ellipsoidal forward model with gradient descent.
"""

from .beamform import backproject, matched_filter_set
from .config import (config_hash, dump_config, load_config, parse_config)
from .container import read_container, write_container
from .deconv import DeconvConfig, DeconvResult, deconvolve, reconvolve
from .ellipsoid import (EllipsoidFrame, make_frame, ray_ellipsoid_depth,
                        ray_ellipsoid_roots, semi_axes, transmittance)
from .errors import (ConfigError, ContainerError, DegenerateEllipsoid,
                     DivergedLoss, SasvoltError)
from .mesh import (Mesh, load_obj, make_icosphere, make_notched_sphere,
                   make_plate, sample_surface, save_obj)
from .metrics import (EvalReport, chamfer, depth_render, iou, mip, mse,
                      psnr, threshold_sweep, voxelize_mesh)
from .render import (RenderConfig, bp_loss, reconstruct, sample_directions,
                     sample_ranges, synthesize)
from .scene import (HashMlpSceneModel, VoxelSceneModel, extract_mesh,
                    sample_model_volume)
from .signal import (AnalyticSeries, TimeSeries, Waveform, Window,
                     analytic, envelope, make_lfm, matched_filter,
                     range_resolution)
from .simulator import (MeasurementSet, SensorPose, airsas_trajectory,
                        aperture_sampling_ok, bistatic_trajectory,
                        merge_meshes, render_transient,
                        simulate_measurements)
from .volume import ReconVolume

__version__ = "0.1.0"

__all__ = [
    "AnalyticSeries", "ConfigError", "ContainerError", "DeconvConfig",
    "DeconvResult", "DegenerateEllipsoid", "DivergedLoss", "EllipsoidFrame",
    "EvalReport", "HashMlpSceneModel", "MeasurementSet", "Mesh",
    "ReconVolume", "RenderConfig", "SasvoltError", "SensorPose",
    "TimeSeries", "VoxelSceneModel", "Waveform", "Window",
    "airsas_trajectory", "analytic", "aperture_sampling_ok",
    "backproject", "bistatic_trajectory", "bp_loss", "chamfer",
    "config_hash", "deconvolve", "depth_render", "dump_config",
    "envelope", "extract_mesh", "iou", "load_config", "load_obj",
    "make_frame",
    "make_icosphere", "make_lfm", "make_notched_sphere", "make_plate",
    "matched_filter", "matched_filter_set", "merge_meshes", "mip", "mse",
    "parse_config", "psnr", "range_resolution", "ray_ellipsoid_depth",
    "ray_ellipsoid_roots",
    "read_container", "reconstruct", "reconvolve", "render_transient",
    "sample_directions", "sample_model_volume", "sample_ranges",
    "sample_surface", "save_obj", "semi_axes", "simulate_measurements",
    "synthesize", "threshold_sweep", "transmittance", "voxelize_mesh",
    "write_container",
]
