"""Single-bounce transient time-of-flight renderer and trajectory generators.

A transient h(t) collects, per ray cast inside the sensor's beam cone,
a Lambertian-weighted impulse at the bin matching the two-way travel
time of the first surface hit. Convolving transients with the
transmitted pulse yields simulated measurements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal

from . import mesh as meshmod
from .errors import EmptyMesh, InvalidCounts, SceneOutOfRange
from .signal import TimeSeries, Waveform


@dataclass(frozen=True)
class SensorPose:
    """Transmitter/receiver placement; beamwidth is the full cone angle."""

    tx_origin: np.ndarray
    rx_origin: np.ndarray
    boresight: np.ndarray
    beamwidth_rad: float

    def __post_init__(self):
        object.__setattr__(self, "tx_origin",
                           np.asarray(self.tx_origin, dtype=float))
        object.__setattr__(self, "rx_origin",
                           np.asarray(self.rx_origin, dtype=float))
        b = np.asarray(self.boresight, dtype=float)
        norm = np.linalg.norm(b)
        if abs(norm - 1.0) > 1e-9:
            if norm == 0:
                raise ValueError("boresight must be a nonzero vector")
            b = b / norm
        object.__setattr__(self, "boresight", b)
        if not (0.0 < self.beamwidth_rad <= np.pi):
            raise ValueError(f"beamwidth_rad={self.beamwidth_rad} outside (0, pi]")

    @property
    def collocated(self) -> bool:
        return bool(np.allclose(self.tx_origin, self.rx_origin))

    @property
    def baseline_m(self) -> float:
        return float(np.linalg.norm(self.tx_origin - self.rx_origin))


@dataclass
class MeasurementSet:
    """Poses plus one time series per pose; the inter-stage currency.

    processing tags the series content: raw, matched, deconvolved, drc.
    scene_bounds is the axis-aligned box enclosing the imaged region.
    """

    poses: list
    series: list
    waveform: Waveform
    sound_speed_mps: float
    scene_bounds: np.ndarray
    processing: str = "raw"

    def __post_init__(self):
        self.scene_bounds = np.asarray(self.scene_bounds, dtype=float).reshape(2, 3)
        if len(self.poses) != len(self.series):
            raise ValueError("poses and series must pair one-to-one")
        if self.sound_speed_mps <= 0:
            raise ValueError("sound_speed_mps must be positive")
        if self.series:
            fs = self.series[0].sample_rate_hz
            n = len(self.series[0].samples)
            for s in self.series:
                if s.sample_rate_hz != fs or len(s.samples) != n:
                    raise ValueError("all series must share sample rate and length")

    @property
    def sample_rate_hz(self) -> float:
        return self.series[0].sample_rate_hz

    def __len__(self) -> int:
        return len(self.poses)


def cone_basis(boresight: np.ndarray) -> np.ndarray:
    """Orthonormal (u, v, boresight) frame; rows are the basis vectors."""
    w = boresight / np.linalg.norm(boresight)
    a = np.array([1.0, 0.0, 0.0])
    if abs(w @ a) > 0.9:
        a = np.array([0.0, 1.0, 0.0])
    u = np.cross(w, a)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)
    return np.stack([u, v, w])


def cone_directions(boresight, beamwidth_rad, n, rng) -> np.ndarray:
    """n unit directions uniform in solid angle inside the beam cone.

    Stratified over a (cos-theta, phi) grid with jitter; the remainder
    beyond the largest full grid is drawn unstratified.
    """
    basis = cone_basis(np.asarray(boresight, dtype=float))
    cos_min = np.cos(0.5 * beamwidth_rad)
    g = int(np.sqrt(n))
    u1 = np.empty(n)
    u2 = np.empty(n)
    m = g * g
    if m > 0:
        ii, jj = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
        u1[:m] = (ii.ravel() + rng.random(m)) / g
        u2[:m] = (jj.ravel() + rng.random(m)) / g
    u1[m:] = rng.random(n - m)
    u2[m:] = rng.random(n - m)
    cos_t = 1.0 - u1 * (1.0 - cos_min)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * np.pi * u2
    local = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
    return local @ basis


def render_transient(mesh: meshmod.Mesh, pose: SensorPose, sound_speed: float,
                     fs: float, n_bins: int, rays_per_pose: int, seed,
                     spreading: bool = False, bvh: meshmod.Bvh | None = None,
                     ) -> TimeSeries:
    """Monte Carlo single-bounce transient for one pose.

    Rays are cast inside the beam cone; each first hit deposits
    lambertian_cosine * (cone solid angle / n_rays) into the bin at the
    round-trip travel time. Back-facing hits still occlude but deposit
    nothing. Deterministic for a fixed seed.
    """
    if mesh is None or mesh.n_triangles == 0:
        raise EmptyMesh("render_transient needs a non-empty mesh")
    lo, hi = mesh.bounds()
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    max_rt = (np.linalg.norm(corners - pose.tx_origin, axis=1)
              + np.linalg.norm(corners - pose.rx_origin, axis=1)).max()
    if max_rt / sound_speed * fs > n_bins - 1:
        raise SceneOutOfRange(
            f"max round trip {max_rt:.3f} m needs "
            f"{max_rt / sound_speed * fs:.0f} bins, have {n_bins}")
    if bvh is None:
        bvh = meshmod.build_bvh(mesh)
    rng = np.random.default_rng(seed)
    dirs = cone_directions(pose.boresight, pose.beamwidth_rad, rays_per_pose, rng)
    origins = np.broadcast_to(pose.tx_origin, dirs.shape)
    t_hit, tri = meshmod.first_hit(bvh, origins, dirs)
    hit = tri >= 0
    h = np.zeros(n_bins)
    if not np.any(hit):
        return TimeSeries(samples=h, sample_rate_hz=float(fs), t0_s=0.0)
    d = dirs[hit]
    r_t = t_hit[hit]
    points = pose.tx_origin + d * r_t[:, None]
    r_r = np.linalg.norm(points - pose.rx_origin, axis=1)
    cos_i = np.maximum(0.0, -np.einsum("ij,ij->i", d, mesh.normals[tri[hit]]))
    omega = 2.0 * np.pi * (1.0 - np.cos(0.5 * pose.beamwidth_rad))
    amp = cos_i * (omega / rays_per_pose)
    if spreading:
        amp = amp / (r_t * r_r)
    bins = np.rint((r_t + r_r) / sound_speed * fs).astype(int)
    np.add.at(h, bins, amp)
    return TimeSeries(samples=h, sample_rate_hz=float(fs), t0_s=0.0)


def simulate_measurements(mesh: meshmod.Mesh, poses, waveform: Waveform,
                          sound_speed: float, fs: float, n_bins: int,
                          rays_per_pose: int, snr_db, seed,
                          spreading: bool = False,
                          scene_bounds=None) -> MeasurementSet:
    """Render every pose's transient and convolve with the pulse.

    Noise: one Gaussian noise level for the whole collection, scaled
    against the mean signal power over all series (receiver noise does
    not know which pose is looking at the target). Per-pose RNG streams
    derive from (seed, pose index) so results do not depend on order.
    """
    if waveform.sample_rate_hz != fs:
        raise ValueError("waveform sample rate must match fs")
    bvh = meshmod.build_bvh(mesh)
    series = []
    for i, pose in enumerate(poses):
        h = render_transient(mesh, pose, sound_speed, fs, n_bins,
                             rays_per_pose, seed=(seed, 0, i),
                             spreading=spreading, bvh=bvh)
        s = scipy.signal.fftconvolve(h.samples, waveform.samples, mode="full")
        series.append(TimeSeries(samples=s, sample_rate_hz=float(fs), t0_s=0.0))
    if snr_db is not None and snr_db != np.inf:
        p_sig = float(np.mean([np.mean(np.square(s.samples)) for s in series]))
        if p_sig == 0.0:
            raise SceneOutOfRange("no pose received any echo; SNR undefined")
        sigma = np.sqrt(p_sig / 10.0 ** (snr_db / 10.0))
        for i, s in enumerate(series):
            rng = np.random.default_rng((seed, 1, i))
            series[i] = TimeSeries(
                samples=s.samples + sigma * rng.standard_normal(len(s.samples)),
                sample_rate_hz=s.sample_rate_hz, t0_s=s.t0_s)
    if scene_bounds is None:
        scene_bounds = mesh.bounds()
    return MeasurementSet(poses=list(poses), series=series, waveform=waveform,
                          sound_speed_mps=float(sound_speed),
                          scene_bounds=np.asarray(scene_bounds, dtype=float),
                          processing="raw")


def airsas_trajectory(kind: str, radius_m: float, z_step_m: float,
                      n_angles: int, n_heights: int, beamwidth_rad: float,
                      keep_fraction: float = 1.0) -> list:
    """Monostatic poses on a cylinder, boresight toward the axis.

    kind: "circular" = the dense (angle x height) grid; "helical" = one
    pose per angle with the height ramping once across all levels (the
    keep fraction is then implied by 1/n_heights and the argument is
    ignored); "sparse_angles" = every k-th angle at all heights, with
    k = round(1/keep_fraction).

    Heights are centered on z=0. Pose order: height-major for the grid
    kinds (angle varies fastest), angle order for helical.
    """
    if n_angles < 1 or n_heights < 1:
        raise InvalidCounts(f"n_angles={n_angles}, n_heights={n_heights}")
    if not (0.0 < keep_fraction <= 1.0):
        raise InvalidCounts(f"keep_fraction={keep_fraction}")
    kind = kind.lower()
    z0 = -0.5 * (n_heights - 1) * z_step_m

    def pose_at(angle_idx: int, height_idx: int) -> SensorPose:
        th = 2.0 * np.pi * angle_idx / n_angles
        pos = np.array([radius_m * np.cos(th), radius_m * np.sin(th),
                        z0 + height_idx * z_step_m])
        bore = np.array([-np.cos(th), -np.sin(th), 0.0])
        return SensorPose(tx_origin=pos, rx_origin=pos, boresight=bore,
                          beamwidth_rad=beamwidth_rad)

    poses = []
    if kind == "circular":
        for k in range(n_heights):
            for a in range(n_angles):
                poses.append(pose_at(a, k))
    elif kind == "helical":
        for a in range(n_angles):
            poses.append(pose_at(a, (a * n_heights) // n_angles))
    elif kind == "sparse_angles":
        step = max(1, int(round(1.0 / keep_fraction)))
        for k in range(n_heights):
            for a in range(0, n_angles, step):
                poses.append(pose_at(a, k))
    else:
        raise InvalidCounts(f"unknown trajectory kind {kind!r}")
    return poses


def aperture_sampling_ok(radius_m: float, n_angles: int, z_step_m: float,
                         f_max_hz: float, sound_speed: float) -> dict:
    """Spatial Nyquist check D <= lambda_min/2 for a cylindrical scan.

    Returns the chord spacing between adjacent angles, the vertical
    step, the half-wavelength limit, and a pass flag.
    """
    lam_min = sound_speed / f_max_hz
    d_arc = 2.0 * radius_m * np.sin(np.pi / n_angles)
    limit = 0.5 * lam_min
    return {"d_arc_m": d_arc, "d_z_m": z_step_m, "half_lambda_min_m": limit,
            "ok": bool(max(d_arc, z_step_m) <= limit)}


def bistatic_trajectory(path, n_poses: int, tx_rx_offset_m: float,
                        depth_m: float, beamwidth_rad: float) -> list:
    """Linear survey track at height depth_m, boresight straight down.

    path is a (start, end) pair; its z components are replaced by
    depth_m. The receiver trails the transmitter by tx_rx_offset_m
    along the track direction.
    """
    if n_poses < 1:
        raise InvalidCounts(f"n_poses={n_poses}")
    if tx_rx_offset_m < 0:
        raise InvalidCounts(f"tx_rx_offset_m={tx_rx_offset_m}")
    start = np.asarray(path[0], dtype=float).copy()
    end = np.asarray(path[1], dtype=float).copy()
    start[2] = depth_m
    end[2] = depth_m
    track = end - start
    norm = np.linalg.norm(track)
    track_dir = track / norm if norm > 0 else np.array([1.0, 0.0, 0.0])
    ts = np.linspace(0.0, 1.0, n_poses) if n_poses > 1 else np.array([0.0])
    poses = []
    for t in ts:
        tx = start + t * track
        rx = tx + tx_rx_offset_m * track_dir
        poses.append(SensorPose(tx_origin=tx, rx_origin=rx,
                                boresight=np.array([0.0, 0.0, -1.0]),
                                beamwidth_rad=beamwidth_rad))
    return poses


def merge_meshes(a: meshmod.Mesh, b: meshmod.Mesh) -> meshmod.Mesh:
    """Concatenate two meshes (e.g. to drop a ground plane under a target)."""
    verts = np.vstack([a.vertices, b.vertices])
    tris = np.vstack([a.triangles, b.triangles + len(a.vertices)])
    return meshmod.make_mesh(verts, tris)
