"""Coherent time-domain backprojection.

For every voxel, sums each pose's analytic measurement evaluated at the
voxel's round-trip travel time (linear interpolation between samples),
skipping poses whose beam cone does not contain the voxel.
"""

from __future__ import annotations

import numpy as np

from .errors import NonAnalyticInput, VoxelOutOfRange
from .simulator import MeasurementSet
from .volume import ReconVolume, voxel_centers

_CHUNK = 1 << 16


def backproject(measurements: MeasurementSet, dims, bounds) -> ReconVolume:
    """Delay-and-sum the analytic series onto a voxel grid."""
    bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
    for s in measurements.series:
        if not np.iscomplexobj(s.samples):
            raise NonAnalyticInput(
                "backprojection needs analytic (complex) series; run "
                "matched filtering or deconvolution first")
    c = measurements.sound_speed_mps
    fs = measurements.sample_rate_hz
    n = len(measurements.series[0].samples)

    corners = np.array([[x, y, z] for x in bounds[:, 0] for y in bounds[:, 1]
                        for z in bounds[:, 2]])
    for pose, s in zip(measurements.poses, measurements.series):
        t_max = (np.linalg.norm(corners - pose.tx_origin, axis=1)
                 + np.linalg.norm(corners - pose.rx_origin, axis=1)).max() / c
        if (t_max - s.t0_s) * fs > n - 1:
            raise VoxelOutOfRange(
                f"grid extends past the recorded window for a pose: "
                f"needs {(t_max - s.t0_s) * fs:.0f} samples, have {n}")

    centers = voxel_centers(dims, bounds)
    out = np.zeros(len(centers), dtype=complex)
    for start in range(0, len(centers), _CHUNK):
        x = centers[start:start + _CHUNK]
        acc = np.zeros(len(x), dtype=complex)
        for pose, s in zip(measurements.poses, measurements.series):
            to_x = x - pose.tx_origin
            r_t = np.linalg.norm(to_x, axis=1)
            cos = (to_x @ pose.boresight) / np.maximum(r_t, 1e-30)
            gate = cos >= np.cos(0.5 * pose.beamwidth_rad)
            if not np.any(gate):
                continue
            r_r = np.linalg.norm(x[gate] - pose.rx_origin, axis=1)
            idx = ((r_t[gate] + r_r) / c - s.t0_s) * fs
            i0 = np.floor(idx).astype(int)
            frac = idx - i0
            ok = (i0 >= 0) & (i0 < n - 1)
            vals = np.zeros(len(idx), dtype=complex)
            vals[ok] = (s.samples[i0[ok]] * (1.0 - frac[ok])
                        + s.samples[i0[ok] + 1] * frac[ok])
            acc[np.flatnonzero(gate)] += vals
        out[start:start + _CHUNK] = acc
    return ReconVolume.from_flat(dims, bounds, out)


def matched_filter_set(measurements: MeasurementSet) -> MeasurementSet:
    """Matched filter + analytic signal for every series in a set."""
    from .signal import analytic, matched_filter

    series = [analytic(matched_filter(s, measurements.waveform))
              for s in measurements.series]
    return MeasurementSet(poses=measurements.poses, series=series,
                          waveform=measurements.waveform,
                          sound_speed_mps=measurements.sound_speed_mps,
                          scene_bounds=measurements.scene_bounds,
                          processing="matched")
