"""Differentiable ellipsoidal forward model and volumetric optimizer.

Given a sensor pose and a complex scatterer field, synthesize analytic
waveform samples: two-way ranges drawn from the deconvolved magnitude
pick constant time-of-flight ellipsoids, rays inside the beam cone
intersect them, and each intersection contributes scatterer value
attenuated by transmission along the ray and a Lambertian factor.
Reconstruction descends a coherent waveform loss with sparsity and
total-variation priors; every gradient is a hand-derived adjoint of
the forward pass (the Lambertian normals and the expected return
point are treated as constants during the backward pass).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .ellipsoid import make_frame, ray_ellipsoid_roots
from .errors import (AllZeroMagnitude, DivergedLoss, EmptySet, InvalidCounts,
                     MisalignedSamples, NoIntersection, NonAnalyticInput)
from .optim import Adam
from .scene import normal as model_normal
from .signal import AnalyticSeries
from .simulator import MeasurementSet, SensorPose, cone_basis

_TINY = 1e-30
_L1_EPS = 1e-12


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _wrap(phi):
    return (phi + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class RenderConfig:
    """Knobs for synthesis and reconstruction.

    zeta scales the transmission falloff; raise it for sparser
    deconvolved waveforms. occlusion_enabled=False forces unit
    transmission everywhere (equivalent to zeta=0 but cheaper).
    d_reg is the offset of the total-variation companion point;
    None resolves to one voxel pitch of the scene model.
    """

    n_rays: int = 512
    n_depth_samples: int = 64
    zeta: float = 1.0
    lambertian_enabled: bool = True
    occlusion_enabled: bool = True
    coherent: bool = True
    lambda_sparse: float = 0.0
    lambda_tv_space: float = 0.0
    lambda_tv_phase: float = 0.0
    d_reg: float | None = None
    accumulate_sensors: int = 5
    iterations: int = 2000
    learning_rate: float = 5e-3
    n_coarse_rays: int = 64
    n_range_probes: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.n_rays < 1 or self.n_depth_samples < 1:
            raise InvalidCounts("n_rays and n_depth_samples must be >= 1")
        if self.accumulate_sensors < 1 or self.iterations < 1:
            raise InvalidCounts("accumulate_sensors and iterations must be >= 1")
        if self.zeta < 0:
            raise ValueError("zeta must be >= 0")
        if min(self.lambda_sparse, self.lambda_tv_space,
               self.lambda_tv_phase) < 0:
            raise ValueError("regularizer weights must be >= 0")
        if self.d_reg is not None and self.d_reg <= 0:
            raise ValueError("d_reg must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _resolve_d_reg(model, cfg: RenderConfig) -> float:
    if cfg.d_reg is not None:
        return cfg.d_reg
    if hasattr(model, "pitch"):
        return float(np.mean(model.pitch))
    lo, hi = model.bounds
    return float(np.min(np.asarray(hi) - np.asarray(lo)) / 64.0)


def box_range_window(pose: SensorPose, bounds):
    """Two-way range interval over which ellipsoids can touch the box."""
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    near = 0.5 * (np.linalg.norm(pose.tx_origin - np.clip(pose.tx_origin, lo, hi))
                  + np.linalg.norm(pose.rx_origin - np.clip(pose.rx_origin, lo, hi)))
    ii = np.array(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij"))
    corners = np.where(ii.reshape(3, 8).T.astype(bool), hi, lo)
    far = 0.5 * np.max(np.linalg.norm(corners - pose.tx_origin, axis=1)
                       + np.linalg.norm(corners - pose.rx_origin, axis=1))
    return float(near), float(far)


def sample_ranges(s_pd: AnalyticSeries, n_samples: int, seed,
                  sound_speed_mps: float, r_min=None, r_max=None):
    """Draw two-way ranges r = c*t/2 with probability prop. to |s(t)|.

    Returns (ranges, bins, uniform_fallback); the flag is True when the
    magnitude was all zero over the admissible bins and the draw fell
    back to a uniform one. r_min/r_max optionally restrict the draw to
    ranges that can reach the reconstruction volume.
    """
    if not np.iscomplexobj(s_pd.samples):
        raise NonAnalyticInput("range sampling expects an analytic series")
    if n_samples < 1:
        raise InvalidCounts("n_samples must be >= 1")
    rng = _as_rng(seed)
    n = len(s_pd.samples)
    t = s_pd.t0_s + np.arange(n) / s_pd.sample_rate_hz
    r = 0.5 * sound_speed_mps * t
    ok = r > 0
    if r_min is not None:
        ok &= r >= r_min
    if r_max is not None:
        ok &= r <= r_max
    if not ok.any():
        ok = r > 0
    if not ok.any():
        raise AllZeroMagnitude("no admissible time bins with t > 0")
    w = np.abs(s_pd.samples) * ok
    total = w.sum()
    uniform = bool(total <= _TINY)
    if uniform:
        w = ok.astype(float)
        total = w.sum()
    bins = rng.choice(n, size=n_samples, p=w / total)
    return r[bins], bins, uniform


def _cell_directions(pose: SensorPose, cos_t, phi):
    basis = cone_basis(pose.boresight)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    local = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
    return local @ basis


def sample_directions(pose: SensorPose, model, n_coarse: int, n_dense: int,
                      seed, r_window=None, n_probes: int = 16):
    """Priority-sampled unit directions inside the beam cone.

    A coarse (cos-theta, phi) grid of probe rays integrates the scene
    magnitude; one box-smoothing pass spreads mass to neighboring
    cells, then dense directions are drawn per-cell and jittered.
    Returns (directions, uniform_fallback).
    """
    if n_coarse < 1 or n_dense < 1:
        raise InvalidCounts("n_coarse and n_dense must be >= 1")
    rng = _as_rng(seed)
    g1 = max(1, int(round(np.sqrt(n_coarse))))
    g2 = max(1, int(np.ceil(n_coarse / g1)))
    ct_edges = np.linspace(np.cos(0.5 * pose.beamwidth_rad), 1.0, g1 + 1)
    ph_edges = np.linspace(-np.pi, np.pi, g2 + 1)
    ct_mid = 0.5 * (ct_edges[:-1] + ct_edges[1:])
    ph_mid = 0.5 * (ph_edges[:-1] + ph_edges[1:])
    ct_g, ph_g = np.meshgrid(ct_mid, ph_mid, indexing="ij")
    dirs = _cell_directions(pose, ct_g.ravel(), ph_g.ravel())

    if r_window is None:
        r_window = box_range_window(pose, model.bounds)
    r_lo = max(r_window[0], 1e-6)
    r_hi = max(r_window[1], r_lo * (1 + 1e-9))
    rr = np.linspace(r_lo, r_hi, n_probes)
    pts = pose.tx_origin + rr[None, :, None] * dirs[:, None, :]
    flat = pts.reshape(-1, 3)
    mags = np.abs(model.query(flat)) * model.in_bounds(flat)
    w = mags.reshape(-1, n_probes).sum(axis=1).reshape(g1, g2)
    w = np.maximum(ndimage.uniform_filter(w, size=3, mode=["nearest", "wrap"]),
                   0.0)

    total = w.sum()
    uniform = bool(total <= _TINY)
    p = (np.full(g1 * g2, 1.0 / (g1 * g2)) if uniform
         else (w / total).ravel())
    cells = rng.choice(g1 * g2, size=n_dense, p=p)
    ci, cj = cells // g2, cells % g2
    ct = ct_edges[ci] + rng.random(n_dense) * (ct_edges[ci + 1] - ct_edges[ci])
    ph = ph_edges[cj] + rng.random(n_dense) * (ph_edges[cj + 1] - ph_edges[cj])
    return _cell_directions(pose, ct, ph), uniform


@dataclass
class SynthResult:
    """Synthesized waveform samples at the sampled two-way times."""

    times_s: np.ndarray
    values: np.ndarray
    cache: dict | None = None


def synthesize(pose: SensorPose, model, ranges, directions,
               cfg: RenderConfig, sound_speed_mps: float,
               want_grad: bool = False) -> SynthResult:
    """Monte Carlo forward model at the sampled ranges.

    Per range r the value is the ray average of sigma * T * lambertian
    (times the return-ray transmission for bistatic poses) over the
    ray/ellipsoid intersection points; incoherent mode accumulates
    |sigma| instead. values[i] corresponds to ranges[i]; pass
    want_grad=True to keep the cache consumed by bp_loss.
    """
    ranges = np.asarray(ranges, dtype=float)
    directions = np.asarray(directions, dtype=float)
    if ranges.ndim != 1 or directions.ndim != 2 or directions.shape[1] != 3:
        raise ValueError("ranges must be (D,), directions (J, 3)")
    n_d = ranges.size
    n_j = directions.shape[0]
    perm = np.argsort(ranges, kind="stable")
    r = ranges[perm]

    frame = make_frame(pose.tx_origin, pose.rx_origin)
    o_f = frame.to_frame(pose.tx_origin)
    v_f = frame.rotate_to_frame(directions)
    _, l, valid = ray_ellipsoid_roots(o_f[None, None, :], v_f[:, None, :],
                                      r[None, :], frame.d)
    if not np.all(valid) or np.any(l <= 0):
        raise NoIntersection("transmit ray misses an ellipsoid")
    x = pose.tx_origin[None, None, :] + l[..., None] * directions[:, None, :]
    x_flat = x.reshape(-1, 3)
    inb = model.in_bounds(x_flat).reshape(n_j, n_d)
    if want_grad:
        sig_raw, mcache = model.query_with_cache(x_flat)
    else:
        sig_raw, mcache = model.query(x_flat), None
    sig = np.where(inb, sig_raw.reshape(n_j, n_d), 0.0)
    m = np.abs(sig)

    dl = np.maximum(np.diff(l, axis=1), 0.0)
    if cfg.occlusion_enabled:
        s = np.zeros_like(m)
        np.cumsum(m[:, :-1] * dl, axis=1, out=s[:, 1:])
        trans = np.exp(-cfg.zeta * s)
    else:
        trans = np.ones_like(m)

    if cfg.lambertian_enabled:
        rel = x - pose.tx_origin
        dist = np.linalg.norm(rel, axis=2)
        u = rel / np.maximum(dist, _L1_EPS)[..., None]
        nrm, defined = model_normal(model, x_flat)
        cosf = np.einsum("ij,ij->i", nrm, u.reshape(-1, 3))
        lam = (np.maximum(0.0, cosf) * defined).reshape(n_j, n_d)
    else:
        lam = np.ones_like(m)

    cache = {
        "cfg": cfg, "perm": perm, "n_j": n_j, "n_d": n_d,
        "x_flat": x_flat, "inb": inb, "sig": sig, "m": m,
        "trans": trans, "lam": lam, "dl": dl, "mcache": mcache,
        "has_ret": False,
    } if want_grad else None

    t_ret = np.ones(n_j)
    if cfg.occlusion_enabled and not pose.collocated:
        w_exp = m * trans
        tot = w_exp.sum(axis=1)
        epts = (x * w_exp[..., None]).sum(axis=1) / np.maximum(tot, _TINY)[:, None]
        epts = np.where((tot > _TINY)[:, None], epts, x[:, n_d // 2, :])
        to_rx = pose.rx_origin - epts
        ret_len = np.linalg.norm(to_rx, axis=1)
        ret_ok = ret_len > _L1_EPS
        d_r = to_rx / np.maximum(ret_len, _L1_EPS)[:, None]
        e_f = frame.to_frame(epts)
        v_rf = frame.rotate_to_frame(d_r)
        l_ret, _, v_ret = ray_ellipsoid_roots(e_f[:, None, :], v_rf[:, None, :],
                                              r[None, :], frame.d)
        keep = v_ret & (l_ret > _L1_EPS) & ret_ok[:, None]
        y_flat = (epts[:, None, :] + l_ret[..., None] * d_r[:, None, :]).reshape(-1, 3)
        inb_r = model.in_bounds(y_flat).reshape(n_j, n_d) & keep
        if want_grad:
            sigr_raw, rcache = model.query_with_cache(y_flat)
        else:
            sigr_raw, rcache = model.query(y_flat), None
        sig_r = np.where(inb_r, sigr_raw.reshape(n_j, n_d), 0.0)
        m_r = np.abs(sig_r)
        # the negative-root depths decrease with r; reverse to ascend
        l_rev = l_ret[:, ::-1]
        keep_rev = inb_r[:, ::-1]
        pair_ok = keep_rev[:, :-1] & keep_rev[:, 1:]
        dl_ret = np.maximum(np.diff(l_rev, axis=1), 0.0) * pair_ok
        t_ret = np.exp(-cfg.zeta * (m_r[:, ::-1][:, :-1] * dl_ret).sum(axis=1))
        if want_grad:
            cache.update(has_ret=True, rcache=rcache, sig_r=sig_r,
                         m_r=m_r, inb_r=inb_r, dl_ret=dl_ret, t_ret=t_ret)

    weight = trans * lam * t_ret[:, None]
    contrib = (sig if cfg.coherent else m) * weight
    vals_sorted = contrib.mean(axis=0)
    values = np.empty(n_d, dtype=vals_sorted.dtype)
    values[perm] = vals_sorted
    if want_grad:
        cache["weight"] = weight
    return SynthResult(times_s=2.0 * ranges / sound_speed_mps,
                       values=values, cache=cache)


def _rev_excl_cumsum(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    if a.shape[-1] > 1:
        tail = np.cumsum(a[..., ::-1], axis=-1)[..., ::-1]
        out[..., :-1] = tail[..., 1:]
    return out


def _synth_backward(model, cache: dict, adj_sorted: np.ndarray) -> None:
    """Push adjoints of the sorted synthesized values into the model."""
    cfg = cache["cfg"]
    n_j = cache["n_j"]
    sig, m, trans, lam = cache["sig"], cache["m"], cache["trans"], cache["lam"]
    weight = cache["weight"]
    adj_c = adj_sorted[None, :] / n_j
    if cfg.coherent:
        adj_sig = adj_c * weight
        adj_weight = (np.conj(adj_c) * sig).real
        adj_m = np.zeros_like(m)
    else:
        adj_c = adj_c.real
        adj_sig = np.zeros_like(sig)
        adj_weight = adj_c * m
        adj_m = adj_c * weight

    if cfg.occlusion_enabled:
        t_ret = cache.get("t_ret", np.ones(n_j))[:, None] \
            if cache["has_ret"] else 1.0
        adj_trans = adj_weight * lam * t_ret
        adj_s = -cfg.zeta * trans * adj_trans
        adj_seg = _rev_excl_cumsum(adj_s)[:, :-1] if m.shape[1] > 1 else None
        if adj_seg is not None:
            adj_m[:, :-1] += adj_seg * cache["dl"]
        if cache["has_ret"]:
            adj_tret = (adj_weight * trans * lam).sum(axis=1)
            adj_segr = (-cfg.zeta * cache["t_ret"] * adj_tret)[:, None]
            adj_mr = np.zeros_like(m)
            adj_mr_rev = adj_mr[:, ::-1]
            adj_mr_rev[:, :-1] += adj_segr * cache["dl_ret"]
            m_r, sig_r = cache["m_r"], cache["sig_r"]
            adj_sig_r = adj_mr * sig_r / np.maximum(m_r, _TINY)
            adj_sig_r[~cache["inb_r"]] = 0.0
            model.query_backward(cache["rcache"], adj_sig_r.ravel())

    adj_sig = adj_sig + adj_m * sig / np.maximum(m, _TINY)
    adj_sig[~cache["inb"]] = 0.0
    model.query_backward(cache["mcache"], adj_sig.ravel())


def bp_loss(result: SynthResult, target, model, cfg: RenderConfig,
            seed=None, target_times=None):
    """Waveform loss with priors; accumulates parameter gradients.

    loss = ||synth - target||_2 + lambda_sparse * mean |sigma|
         + lambda_tv_space * mean |sigma - sigma_c|
         + lambda_tv_phase * mean |wrap(angle sigma - angle sigma_c)|
    where sigma_c is the field at a companion point d_reg away in a
    random unit direction from each ray sample. Incoherent mode
    compares magnitudes. Returns (loss, parts) with the raw
    (unweighted) prior terms in parts.
    """
    cache = result.cache
    if cache is None:
        raise ValueError("synthesize(..., want_grad=True) required")
    cfg = cache["cfg"]
    if target_times is not None:
        target_times = np.asarray(target_times, dtype=float)
        if (target_times.shape != result.times_s.shape
                or np.any(np.abs(target_times - result.times_s) > 1e-9)):
            raise MisalignedSamples("synth and target sample times differ")
    target = np.asarray(target)
    if cfg.coherent:
        if not np.iscomplexobj(target):
            raise NonAnalyticInput("coherent loss expects complex targets")
        err = result.values - target
    else:
        err = result.values - np.abs(target)
    data = float(np.linalg.norm(err))
    adj_vals = err / data if data > _TINY else np.zeros_like(err)
    _synth_backward(model, cache, adj_vals[cache["perm"]])

    parts = {"data": data, "sparse": 0.0, "tv_space": 0.0, "tv_phase": 0.0}
    lam1, lam2, lam3 = (cfg.lambda_sparse, cfg.lambda_tv_space,
                        cfg.lambda_tv_phase)
    if max(lam1, lam2, lam3) > 0:
        x_flat, inb = cache["x_flat"], cache["inb"].ravel()
        sig = cache["sig"].ravel()
        n_all = sig.size
        rng = _as_rng(cfg.seed if seed is None else seed)
        v = rng.normal(size=(n_all, 3))
        v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), _L1_EPS)
        xc = x_flat + _resolve_d_reg(model, cfg) * v
        sigc_raw, ccache = model.query_with_cache(xc)
        inb_c = model.in_bounds(xc)
        sigc = np.where(inb_c, sigc_raw, 0.0)
        adj_sig = np.zeros_like(sig)
        adj_sigc = np.zeros_like(sigc)

        if lam1 > 0:
            msm = np.sqrt(sig.real ** 2 + sig.imag ** 2 + _L1_EPS)
            parts["sparse"] = float(np.mean(msm))
            adj_sig += (lam1 / n_all) * sig / msm
        if lam2 > 0:
            diff = sig - sigc
            dsm = np.sqrt(diff.real ** 2 + diff.imag ** 2 + _L1_EPS)
            parts["tv_space"] = float(np.mean(dsm))
            g = (lam2 / n_all) * diff / dsm
            adj_sig += g
            adj_sigc -= g
        if lam3 > 0:
            delta = _wrap(np.angle(sig) - np.angle(sigc))
            parts["tv_phase"] = float(np.mean(np.abs(delta)))
            gd = (lam3 / n_all) * np.sign(delta)
            adj_sig += gd * (1j * sig) / np.maximum(np.abs(sig) ** 2, _TINY)
            adj_sigc -= gd * (1j * sigc) / np.maximum(np.abs(sigc) ** 2, _TINY)

        adj_sig[~inb] = 0.0
        adj_sigc[~inb_c] = 0.0
        model.query_backward(cache["mcache"], adj_sig)
        model.query_backward(ccache, adj_sigc)

    loss = (data + lam1 * parts["sparse"] + lam2 * parts["tv_space"]
            + lam3 * parts["tv_phase"])
    return loss, parts


def reconstruct(measurements: MeasurementSet, model, cfg: RenderConfig):
    """Fit the scene model to deconvolved (or matched) analytic series.

    Round-robins over sensors; each iteration samples ranges from the
    sensor's magnitude and directions from the current scene, then
    accumulates bp_loss gradients, stepping the optimizer every
    cfg.accumulate_sensors iterations. Returns (model, history).
    """
    if len(measurements.poses) == 0:
        raise EmptySet("need at least one measurement")
    if measurements.processing not in ("deconvolved", "matched"):
        raise ValueError(f"cannot reconstruct from processing="
                         f"{measurements.processing!r}")
    for s in measurements.series:
        if not np.iscomplexobj(s.samples):
            raise NonAnalyticInput("reconstruct expects analytic series")
    c = measurements.sound_speed_mps
    pad = 4.0 * c / measurements.sample_rate_hz
    windows = []
    for pose in measurements.poses:
        near, far = box_range_window(pose, model.bounds)
        r_min = max(near - pad, 0.5 * pose.baseline_m * (1 + 1e-9) + _L1_EPS)
        windows.append((r_min, far + pad))

    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    model.zero_grad()
    history = {k: [] for k in ("loss", "data", "sparse", "tv_space",
                               "tv_phase")}
    pending = 0
    for it in range(cfg.iterations):
        si = it % len(measurements.poses)
        pose = measurements.poses[si]
        series = measurements.series[si]
        r_min, r_max = windows[si]
        ranges, bins, _ = sample_ranges(
            series, cfg.n_depth_samples,
            np.random.default_rng((cfg.seed, 101, it)), c,
            r_min=r_min, r_max=r_max)
        dirs, _ = sample_directions(
            pose, model, cfg.n_coarse_rays, cfg.n_rays,
            np.random.default_rng((cfg.seed, 103, it)),
            r_window=(r_min, r_max), n_probes=cfg.n_range_probes)
        res = synthesize(pose, model, ranges, dirs, cfg, c, want_grad=True)
        loss, parts = bp_loss(
            res, series.samples[bins], model, cfg,
            seed=np.random.default_rng((cfg.seed, 107, it)),
            target_times=series.t0_s + bins / series.sample_rate_hz)
        history["loss"].append(loss)
        for k, val in parts.items():
            history[k].append(val)
        if not np.isfinite(loss) or loss > 10.0 * (history["loss"][0] + _L1_EPS):
            raise DivergedLoss(f"iteration {it}: loss {loss:.3e} vs initial "
                               f"{history['loss'][0]:.3e}")
        pending += 1
        if pending == cfg.accumulate_sensors or it == cfg.iterations - 1:
            for g in model.grads():
                g /= pending
            opt.step(model.grads())
            model.zero_grad()
            pending = 0
    return model, history
