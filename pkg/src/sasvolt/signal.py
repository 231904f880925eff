"""Waveforms and 1D signal processing for the sonar pipeline.

Covers LFM chirp generation, matched filtering, analytic-signal
construction, noise injection, and dynamic-range compression. These are
the primitives every other stage builds on, so the conventions are
pinned here:

* Time series carry an explicit ``t0_s`` (time of the first sample).
* Matched filtering uses full cross-correlation with the pulse and
  shifts the output time axis so an echo at delay tau lands at t = tau.
* Analytic signals are built with the DFT method (negative frequencies
  zeroed, positive doubled), so test tones on FFT bins are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.signal

from .errors import (
    KappaOutOfRange,
    NonPositiveBandwidth,
    NonPositiveDuration,
    NyquistViolation,
    SampleRateMismatch,
    TooShort,
    ZeroSignal,
)


@dataclass(frozen=True)
class Window:
    """Amplitude taper applied to a generated waveform.

    kind is one of "none", "tukey", "taylor". Tukey takes a taper
    ratio; Taylor takes the near-in sidelobe count nbar and the
    sidelobe level in (positive) dB.
    """

    kind: str = "none"
    ratio: float = 0.1
    nbar: int = 4
    sll_db: float = 30.0

    @staticmethod
    def none() -> "Window":
        return Window(kind="none")

    @staticmethod
    def tukey(ratio: float = 0.1) -> "Window":
        return Window(kind="tukey", ratio=float(ratio))

    @staticmethod
    def taylor(nbar: int = 4, sll_db: float = 30.0) -> "Window":
        return Window(kind="taylor", nbar=int(nbar), sll_db=float(sll_db))

    def sample(self, n: int) -> np.ndarray:
        if self.kind == "none":
            return np.ones(n)
        if self.kind == "tukey":
            return scipy.signal.windows.tukey(n, alpha=self.ratio)
        if self.kind == "taylor":
            return scipy.signal.windows.taylor(n, nbar=self.nbar, sll=abs(self.sll_db))
        raise ValueError(f"unknown window kind {self.kind!r}")


@dataclass(frozen=True)
class Waveform:
    """Transmitted pulse p(t) with its sweep metadata."""

    samples: np.ndarray
    sample_rate_hz: float
    f_start_hz: float
    f_stop_hz: float
    duration_s: float
    window: Window

    @property
    def bandwidth_hz(self) -> float:
        return abs(self.f_stop_hz - self.f_start_hz)

    @property
    def center_frequency_hz(self) -> float:
        return 0.5 * (self.f_start_hz + self.f_stop_hz)


@dataclass(frozen=True)
class TimeSeries:
    """Real-valued uniformly sampled signal."""

    samples: np.ndarray
    sample_rate_hz: float
    t0_s: float = 0.0

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self.samples)) / self.sample_rate_hz


@dataclass(frozen=True)
class AnalyticSeries:
    """Complex (pre-envelope) signal; |samples| is the envelope."""

    samples: np.ndarray
    sample_rate_hz: float
    t0_s: float = 0.0

    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(len(self.samples)) / self.sample_rate_hz


def make_lfm(f_start_hz, f_stop_hz, duration_s, sample_rate_hz,
             window: Window | None = None) -> Waveform:
    """Generate a windowed linear FM chirp.

    The instantaneous frequency sweeps linearly from f_start to f_stop
    over the duration; the sample at t=0 has zero phase. A signed chirp
    rate is used so down-sweeps land on f_stop too.
    """
    if duration_s <= 0:
        raise NonPositiveDuration(f"duration_s={duration_s}")
    if abs(f_start_hz - f_stop_hz) <= 0:
        raise NonPositiveBandwidth("f_start == f_stop gives zero bandwidth")
    if f_start_hz < 0 or f_stop_hz < 0:
        raise NyquistViolation("negative sweep frequencies are not supported")
    if sample_rate_hz < 2.0 * max(f_start_hz, f_stop_hz):
        raise NyquistViolation(
            f"sample rate {sample_rate_hz} < 2*max sweep frequency "
            f"{max(f_start_hz, f_stop_hz)}")
    if window is None:
        window = Window.none()
    n = int(round(duration_s * sample_rate_hz))
    if n < 1:
        raise NonPositiveDuration("duration shorter than one sample")
    t = np.arange(n) / sample_rate_hz
    rate = (f_stop_hz - f_start_hz) / duration_s
    phase = 2.0 * np.pi * (0.5 * rate * t * t + f_start_hz * t)
    samples = window.sample(n) * np.cos(phase)
    return Waveform(samples=samples, sample_rate_hz=float(sample_rate_hz),
                    f_start_hz=float(f_start_hz), f_stop_hz=float(f_stop_hz),
                    duration_s=float(duration_s), window=window)


def impulse_waveform(sample_rate_hz: float) -> Waveform:
    """Single-sample unit impulse; convolving with it is the identity."""
    return Waveform(samples=np.array([1.0]), sample_rate_hz=float(sample_rate_hz),
                    f_start_hz=0.0, f_stop_hz=0.5 * sample_rate_hz,
                    duration_s=1.0 / sample_rate_hz, window=Window.none())


def range_resolution(bandwidth_hz: float, sound_speed_mps: float) -> float:
    """Range resolution c / (2 * bandwidth)."""
    if bandwidth_hz <= 0:
        raise NonPositiveBandwidth(f"bandwidth_hz={bandwidth_hz}")
    if sound_speed_mps <= 0:
        raise ValueError(f"sound_speed_mps={sound_speed_mps}")
    return sound_speed_mps / (2.0 * bandwidth_hz)


def matched_filter(measurement: TimeSeries, pulse: Waveform,
                   method: str = "fft") -> TimeSeries:
    """Cross-correlate the measurement with the pulse (pulse compression).

    Full correlation; the output t0 is shifted back by the pulse length
    so an echo recorded at delay tau peaks at t = tau.
    """
    if measurement.sample_rate_hz != pulse.sample_rate_hz:
        raise SampleRateMismatch(
            f"{measurement.sample_rate_hz} != {pulse.sample_rate_hz}")
    out = scipy.signal.correlate(measurement.samples, pulse.samples,
                                 mode="full", method=method)
    np_ = len(pulse.samples)
    t0 = measurement.t0_s - (np_ - 1) / measurement.sample_rate_hz
    return TimeSeries(samples=out, sample_rate_hz=measurement.sample_rate_hz,
                      t0_s=t0)


def analytic(x: TimeSeries) -> AnalyticSeries:
    """Analytic signal via the DFT method.

    Zeroes the negative-frequency half of the spectrum and doubles the
    positive half (DC and Nyquist untouched), then inverse transforms.
    The real part equals the input exactly and the magnitude is the
    envelope.
    """
    n = len(x.samples)
    if n < 2:
        raise TooShort(f"need >= 2 samples, got {n}")
    spec = np.fft.fft(np.asarray(x.samples, dtype=float))
    h = np.zeros(n)
    if n % 2 == 0:
        h[0] = h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[0] = 1.0
        h[1:(n + 1) // 2] = 2.0
    out = np.fft.ifft(spec * h)
    return AnalyticSeries(samples=out, sample_rate_hz=x.sample_rate_hz,
                          t0_s=x.t0_s)


def envelope(x: TimeSeries) -> np.ndarray:
    """Envelope |analytic(x)| as a plain array."""
    return np.abs(analytic(x).samples)


def add_noise(x: TimeSeries, snr_db, seed: int) -> TimeSeries:
    """Add white Gaussian noise at the requested SNR.

    Noise power is set from the signal's mean power in expectation;
    snr_db = None or +inf returns the input unchanged. Deterministic
    per seed.
    """
    if snr_db is None or snr_db == np.inf:
        return replace(x, samples=np.array(x.samples, copy=True))
    p_sig = float(np.mean(np.square(x.samples)))
    if p_sig == 0.0:
        raise ZeroSignal("cannot set an SNR against an all-zero signal")
    p_noise = p_sig / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(x.samples)) * np.sqrt(p_noise)
    return replace(x, samples=x.samples + noise)


def drc(x, kappa: float):
    """Dynamic-range compression: magnitudes to the power kappa.

    Real input keeps its sign; complex input keeps its phase.
    """
    if not (0.0 < kappa <= 1.0):
        raise KappaOutOfRange(f"kappa={kappa}")
    s = np.asarray(x.samples)
    if np.iscomplexobj(s):
        mag = np.abs(s)
        out = np.zeros_like(s)
        nz = mag > 0
        out[nz] = (mag[nz] ** kappa) * (s[nz] / mag[nz])
        return AnalyticSeries(samples=out, sample_rate_hz=x.sample_rate_hz,
                              t0_s=x.t0_s)
    out = np.sign(s) * np.abs(s) ** kappa
    return TimeSeries(samples=out, sample_rate_hz=x.sample_rate_hz, t0_s=x.t0_s)


def envelope_width_samples(env: np.ndarray, db_down: float = 3.0) -> float:
    """Width of the main lobe of an envelope at db_down below its peak.

    Walks left and right from the argmax and linearly interpolates the
    crossing positions, so sub-sample widths are meaningful.
    """
    env = np.asarray(env, dtype=float)
    k = int(np.argmax(env))
    level = env[k] * 10.0 ** (-db_down / 20.0)
    right = float(len(env) - 1 - k)
    for i in range(k, len(env) - 1):
        if env[i + 1] < level:
            right = i - k + (env[i] - level) / (env[i] - env[i + 1])
            break
    left = float(k)
    for i in range(k, 0, -1):
        if env[i - 1] < level:
            left = k - i + (env[i] - level) / (env[i] - env[i - 1])
            break
    return left + right
