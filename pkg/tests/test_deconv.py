import numpy as np
import pytest
from numpy.testing import assert_allclose

from sasvolt.deconv import (DeconvConfig, deconv_loss_and_grad, deconvolve,
                            reconvolve)
from sasvolt.errors import SampleRateMismatch
from sasvolt.signal import (AnalyticSeries, TimeSeries, Window, envelope,
                            envelope_width_samples, make_lfm, matched_filter)
from sasvolt.simulator import MeasurementSet, SensorPose

BOUNDS = np.array([[-0.08, -0.08, -0.08], [0.08, 0.08, 0.08]])


def _single_echo_set(chirp, delay_samples=180, n=500, amp=1.0):
    fs = chirp.sample_rate_hz
    sig = np.zeros(n)
    sig[delay_samples:delay_samples + len(chirp.samples)] = \
        amp * chirp.samples
    pose = SensorPose((0.35, 0, 0), (0.35, 0, 0), (-1, 0, 0), np.pi / 3)
    return MeasurementSet(poses=[pose], series=[TimeSeries(sig, fs)],
                          waveform=chirp, sound_speed_mps=343.0,
                          scene_bounds=BOUNDS.copy())


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    nb, npulse = 24, 7
    p = rng.standard_normal(npulse)
    s = rng.standard_normal((2, nb))
    xr = rng.standard_normal((2, nb)) * 0.3
    xi = rng.standard_normal((2, nb)) * 0.3
    lam_s, lam_tv = 2e-2, 1e-2
    _, _, g_re, g_im = deconv_loss_and_grad(xr, xi, s, p, lam_s, lam_tv)
    h = 1e-6
    for arr, grad in ((xr, g_re), (xi, g_im)):
        for idx in [(0, 0), (0, 5), (1, 11), (1, 23)]:
            orig = arr[idx]
            arr[idx] = orig + h
            lp = deconv_loss_and_grad(xr, xi, s, p, lam_s, lam_tv)[0]
            arr[idx] = orig - h
            lm = deconv_loss_and_grad(xr, xi, s, p, lam_s, lam_tv)[0]
            arr[idx] = orig
            fd = (lp - lm) / (2 * h)
            assert abs(grad[idx] - fd) <= 1e-6 + 1e-5 * abs(fd)


def test_loss_parts_zero_residual():
    # x = impulse, s = pulse at the impulse: data term ~ 0
    nb = 32
    p = np.array([1.0, 2.0, 1.0])
    xr = np.zeros((1, nb))
    xr[0, 10] = 1.0
    s = np.zeros((1, nb))
    s[0, 10:13] = p
    loss, parts, _, _ = deconv_loss_and_grad(xr, np.zeros_like(xr), s, p,
                                             0.0, 0.0)
    assert parts["data"] < 1e-6
    assert loss == parts["data"]


def test_deconvolve_sharpens_single_echo():
    # 5 kHz band: matched filter width c/(2 df) is widest here, the
    # deconvolved envelope must be at most half of it
    fs = 100e3
    chirp = make_lfm(27.5e3, 32.5e3, 1e-3, fs, Window.tukey(0.1))
    raw = _single_echo_set(chirp, delay_samples=180)
    cfg = DeconvConfig(iterations=800, seed=0)
    res = deconvolve(raw, chirp, cfg)
    env_pd = np.abs(res.s_pd[0].samples)
    mf = matched_filter(raw.series[0], chirp)
    env_mf = envelope(mf)
    k_pd = int(np.argmax(env_pd))
    assert abs(k_pd - 180) <= 1
    w_pd = envelope_width_samples(env_pd)
    w_mf = envelope_width_samples(env_mf)
    assert w_pd <= 0.5 * w_mf
    # the optimization actually fit the measurement
    assert res.loss_history[-1] < 0.1 * res.loss_history[0]


def test_deconvolve_shift_equivariance():
    fs = 100e3
    chirp = make_lfm(25e3, 45e3, 5e-4, fs, Window.tukey(0.1))
    cfg = DeconvConfig(iterations=400, seed=3)
    peaks = []
    for delay in (100, 140):
        res = deconvolve(_single_echo_set(chirp, delay), chirp, cfg)
        peaks.append(int(np.argmax(np.abs(res.s_pd[0].samples))))
    assert peaks[1] - peaks[0] == 40


def test_deconvolve_amplitude_linearity():
    fs = 100e3
    chirp = make_lfm(25e3, 45e3, 5e-4, fs, Window.tukey(0.1))
    cfg = DeconvConfig(iterations=400, lambda_sparse=0.0,
                       lambda_tv_phase=0.0, seed=1)
    r1 = deconvolve(_single_echo_set(chirp, 120, amp=1.0), chirp, cfg)
    r2 = deconvolve(_single_echo_set(chirp, 120, amp=2.0), chirp, cfg)
    a1 = np.abs(r1.s_pd[0].samples).max()
    a2 = np.abs(r2.s_pd[0].samples).max()
    assert a2 / a1 == pytest.approx(2.0, rel=0.05)


def test_deconvolve_sparsity_knob_is_monotone():
    fs = 100e3
    chirp = make_lfm(25e3, 45e3, 5e-4, fs, Window.tukey(0.1))
    raw = _single_echo_set(chirp, 120)
    l1 = []
    for lam in (0.0, 3e-2):
        cfg = DeconvConfig(iterations=400, lambda_sparse=lam,
                           lambda_tv_phase=0.0, seed=0)
        res = deconvolve(raw, chirp, cfg)
        l1.append(np.abs(res.s_pd[0].samples).sum())
    assert l1[1] < l1[0]


def test_deconvolve_shared_network_parameterization():
    fs = 100e3
    chirp = make_lfm(25e3, 45e3, 5e-4, fs, Window.tukey(0.1))
    raw = _single_echo_set(chirp, 120, n=300)
    cfg = DeconvConfig(iterations=500, parameterization="shared_network",
                       seed=0)
    res = deconvolve(raw, chirp, cfg)
    assert int(np.argmax(np.abs(res.s_pd[0].samples))) == pytest.approx(
        120, abs=2)


def test_deconvolve_deterministic_per_seed():
    fs = 100e3
    chirp = make_lfm(25e3, 45e3, 5e-4, fs, Window.tukey(0.1))
    raw = _single_echo_set(chirp, 120)
    a = deconvolve(raw, chirp, DeconvConfig(iterations=150, seed=4))
    b = deconvolve(raw, chirp, DeconvConfig(iterations=150, seed=4))
    c = deconvolve(raw, chirp, DeconvConfig(iterations=150, seed=5))
    assert_allclose(a.s_pd[0].samples, b.s_pd[0].samples, atol=0)
    assert np.any(a.s_pd[0].samples != c.s_pd[0].samples)


def test_as_measurement_set_retags():
    fs = 100e3
    chirp = make_lfm(25e3, 45e3, 5e-4, fs, Window.tukey(0.1))
    raw = _single_echo_set(chirp, 120)
    res = deconvolve(raw, chirp, DeconvConfig(iterations=20, seed=0))
    ms = res.as_measurement_set(raw)
    assert ms.processing == "deconvolved"
    assert ms.poses is raw.poses or ms.poses == raw.poses
    assert ms.scene_bounds is raw.scene_bounds or np.array_equal(
        ms.scene_bounds, raw.scene_bounds)


def test_reconvolve_impulse_gives_pulse():
    fs = 100e3
    pulse = make_lfm(25e3, 45e3, 2e-4, fs, Window.none())
    x = np.zeros(100, dtype=complex)
    x[30] = 1.0
    out = reconvolve(AnalyticSeries(x, fs), pulse)
    expected = np.zeros(100)
    expected[30:30 + len(pulse.samples)] = pulse.samples
    assert_allclose(out.samples[:100], expected, atol=1e-12)


def test_reconvolve_rect_gives_triangle():
    # a rect of ones reconvolved with a rect pulse is a triangle
    from sasvolt.signal import Waveform
    fs = 1.0
    n = 8
    rect = Waveform(samples=np.ones(n), sample_rate_hz=fs, f_start_hz=0.0,
                    f_stop_hz=0.5, duration_s=n / fs, window=Window.none())
    x = np.zeros(32, dtype=complex)
    x[4:4 + n] = 1.0
    out = reconvolve(AnalyticSeries(x, fs), rect)
    triangle = np.convolve(np.ones(n), np.ones(n))
    assert_allclose(out.samples[4:4 + 2 * n - 1], triangle, atol=1e-12)


def test_deconvolve_rejects_rate_mismatch(chirp):
    raw = _single_echo_set(chirp, 120)
    other = make_lfm(5e3, 20e3, 1e-3, 50e3, Window.tukey(0.1))
    with pytest.raises(SampleRateMismatch):
        deconvolve(raw, other, DeconvConfig(iterations=1))


def test_deconv_config_validation():
    with pytest.raises(ValueError):
        DeconvConfig(iterations=0)
    with pytest.raises(ValueError):
        DeconvConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        DeconvConfig(parameterization="magic")
