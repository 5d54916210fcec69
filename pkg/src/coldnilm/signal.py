"""Signature containers and the six-step normalization pipeline.

A raw recording goes through voltage-quality gating, region-of-interest
extraction, duration gating, frequency normalization, downsampling and
voltage scaling before it joins the baseline pattern set.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.fft import next_fast_len, rfft
from scipy.signal import firwin, resample_poly

from . import kernels

DEFAULT_BAND = (40.0, 70.0)
DEFAULT_HARMONICS = 19  # harmonics 2..20


class BandEmpty(ValueError):
    pass


class ZeroVoltage(ValueError):
    pass


class RejectionCode(str, enum.Enum):
    HIGH_THD = "HighTHD"
    TOO_SHORT = "TooShort"
    NO_ACTIVITY = "NoActivity"


class SignatureRejected(Exception):
    """Raised when a recording is dropped by one of the pipeline gates."""

    def __init__(self, code: RejectionCode, detail: str = "", step: int | None = None):
        self.code = RejectionCode(code)
        self.detail = detail
        self.step = step
        super().__init__(f"{self.code.value}: {detail}")


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    rate: float

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform samples must be one-dimensional")
        if not self.rate > 0:
            raise ValueError(f"sampling rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains NaN or Inf")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.rate

    def crop(self, start: int, stop: int) -> "Waveform":
        return Waveform(self.samples[start:stop].copy(), self.rate)


@dataclass(frozen=True)
class Signature:
    label: str
    current: Waveform
    voltage: Waveform
    source_id: str = ""

    def __post_init__(self):
        if not self.label:
            raise ValueError("signature label must be non-empty")
        if self.current.rate != self.voltage.rate:
            raise ValueError("current and voltage rates differ")
        if len(self.current) != len(self.voltage):
            raise ValueError("current and voltage lengths differ")

    @property
    def rate(self) -> float:
        return self.current.rate

    def __len__(self):
        return len(self.current)

    @property
    def duration(self) -> float:
        return self.current.duration

    def crop(self, start: int, stop: int) -> "Signature":
        return replace(self, current=self.current.crop(start, stop),
                       voltage=self.voltage.crop(start, stop))


@dataclass(frozen=True)
class NormalizationConfig:
    t_thd: float = 0.1
    t_on: float = 0.1
    t_sec: float = 1.0
    f_ref: float = 50.0
    f_down: float = 4000.0
    v_ref: float = 311.0
    search_band: tuple = field(default=DEFAULT_BAND)

    def __post_init__(self):
        for name in ("t_thd", "t_on", "t_sec", "f_ref", "f_down", "v_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.t_thd >= 1:
            raise ValueError("t_thd must be below 1")
        object.__setattr__(self, "search_band", tuple(float(b) for b in self.search_band))


# -- spectral helpers ---------------------------------------------------------

def _spectrum(x: np.ndarray, rate: float, resolution: float = 0.1):
    """Zero-padded magnitude spectrum with a Hann-squared window.

    The squared Hann window trades a wider main lobe for sidelobes that fall
    off as 1/k^5, which keeps leakage from the fundamental far below the
    harmonic levels the THD gate has to resolve.
    """
    n = x.shape[0]
    w = np.hanning(n) ** 2 if n > 1 else np.ones(1)
    nfft = next_fast_len(max(4 * n, int(math.ceil(rate / resolution))))
    mag = np.abs(rfft((x - x.mean()) * w, nfft))
    return mag, rate / nfft


def _refine_peak(mag: np.ndarray, k: int):
    """Parabolic interpolation on log magnitude around bin ``k``."""
    if k <= 0 or k >= mag.shape[0] - 1:
        return float(k), float(mag[k])
    a, b, c = np.log(mag[k - 1:k + 2] + 1e-300)
    denom = a - 2 * b + c
    if denom >= 0:
        return float(k), float(mag[k])
    delta = 0.5 * (a - c) / denom
    return k + delta, float(np.exp(b - 0.25 * (a - c) * delta))


def _peak_near(mag, df, freq, half_width):
    lo = max(int(math.floor((freq - half_width) / df)), 0)
    hi = min(int(math.ceil((freq + half_width) / df)), mag.shape[0] - 1)
    if hi < lo:
        return 0.0
    k = lo + int(np.argmax(mag[lo:hi + 1]))
    if k == lo or k == hi:
        return float(mag[k])
    return _refine_peak(mag, k)[1]


def estimate_fundamental(voltage: Waveform, search_band=DEFAULT_BAND) -> float:
    """Frequency of the strongest spectral peak of ``voltage`` inside ``search_band``."""
    lo, hi = search_band
    mag, df = _spectrum(voltage.samples, voltage.rate)
    k_lo = int(math.ceil(lo / df))
    k_hi = min(int(math.floor(hi / df)), mag.shape[0] - 1)
    if k_hi < k_lo:
        raise BandEmpty(f"no spectral bin within {lo}-{hi} Hz")
    k = k_lo + int(np.argmax(mag[k_lo:k_hi + 1]))
    return _refine_peak(mag, k)[0] * df


def harmonic_magnitudes(w: Waveform, f0: float, max_h: int) -> np.ndarray:
    """Spectral peak magnitudes at h*f0 for h = 1..max_h (0 at or above Nyquist)."""
    mag, df = _spectrum(w.samples, w.rate)
    # main lobe of the Hann^2 window spans +-3 native bins
    half_width = min(max(3.0 * w.rate / len(w), 4 * df), 0.5 * f0)
    out = np.zeros(max_h)
    for h in range(1, max_h + 1):
        if h * f0 + half_width >= 0.5 * w.rate:
            break
        out[h - 1] = _peak_near(mag, df, h * f0, half_width)
    return out


def compute_thd(voltage: Waveform, f0: float, n_harmonics: int = DEFAULT_HARMONICS) -> float:
    """Fundamental-referenced THD: sqrt(sum of M_h^2 for h = 2..n_harmonics+1) / M_1.

    Harmonics at or above Nyquist are skipped.
    """
    m = harmonic_magnitudes(voltage, f0, n_harmonics + 1)
    if m[0] <= 0:
        return math.inf
    return float(np.sqrt(np.sum(m[1:] ** 2)) / m[0])


# -- pipeline steps -----------------------------------------------------------

def sliding_rms(current: Waveform, period: float) -> np.ndarray:
    """One-period RMS at every sample position; the tail repeats the last full window."""
    win = int(round(period * current.rate))
    if win < 2:
        raise ValueError("RMS window must span at least two samples")
    return kernels.sliding_rms(current.samples, win)


def extract_roi(sig: Signature, t_on: float, period: float) -> Signature:
    """Crop ``sig`` to the longest run where the sliding RMS current reaches ``t_on``."""
    mask = (sliding_rms(sig.current, period) >= t_on).view(np.uint8)
    start, stop = kernels.longest_run(np.ascontiguousarray(mask))
    if stop <= start:
        raise SignatureRejected(RejectionCode.NO_ACTIVITY,
                                f"RMS current never reaches {t_on} A", step=2)
    return sig.crop(start, stop)


def round_duration(sig: Signature, t_sec: float) -> Signature:
    if sig.duration < t_sec:
        raise SignatureRejected(RejectionCode.TOO_SHORT,
                                f"{sig.duration:.3f} s < {t_sec} s", step=3)
    n = int(round(math.floor(sig.duration + 1e-9) * sig.rate))
    return sig.crop(0, min(n, len(sig)))


def _ratio(x: float, max_den: int = 1000) -> tuple[int, int]:
    frac = Fraction(x).limit_denominator(max_den)
    return frac.numerator, frac.denominator


def time_stretch(w: Waveform, factor: float) -> Waveform:
    """Stretch the waveform ``factor`` times along the time axis at a fixed rate.

    Duration is multiplied by ``factor`` and every frequency is divided by it,
    so a 60 Hz grid recording stretched by 1.2 plays back at 50 Hz.
    """
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"stretch factor {factor} outside [0.5, 2]")
    up, down = _ratio(factor)
    if up == down:
        return Waveform(w.samples.copy(), w.rate)
    n_out = int(round(len(w) * up / down))
    y = resample_poly(w.samples, up, down)
    return Waveform(y[:n_out], w.rate)


def resample(w: Waveform, to_rate: float) -> Waveform:
    """Polyphase resampling with a windowed-sinc anti-alias filter cut at 0.45 * to_rate."""
    if to_rate > w.rate:
        raise ValueError("resample only reduces the sampling rate")
    up, down = _ratio(to_rate / w.rate)
    if up == down:
        return Waveform(w.samples.copy(), w.rate)
    fs_up = w.rate * up
    transition = 0.05 * to_rate
    # Kaiser estimate for ~80 dB stopband starting at to_rate/2
    numtaps = int(math.ceil(72.0 / (2.285 * 2 * math.pi * transition / fs_up))) | 1
    taps = firwin(numtaps, 0.45 * to_rate, fs=fs_up, window=("kaiser", 7.86))
    n_out = int(round(len(w) * to_rate / w.rate))
    y = resample_poly(w.samples, up, down, window=taps)
    if y.shape[0] < n_out:
        y = np.pad(y, (0, n_out - y.shape[0]))
    return Waveform(y[:n_out], float(to_rate))


def peak_voltage(voltage: Waveform) -> float:
    # robust peak: ignores isolated spikes
    return float(np.percentile(np.abs(voltage.samples), 99.9))


def scale_to_reference(sig: Signature, v_ref: float) -> Signature:
    peak = peak_voltage(sig.voltage)
    if peak == 0:
        raise ZeroVoltage(f"signature {sig.source_id!r} has zero voltage")
    s = v_ref / peak
    return replace(sig,
                   voltage=Waveform(sig.voltage.samples * s, sig.rate),
                   current=Waveform(sig.current.samples / s, sig.rate))


def normalize_signature(raw: Signature, cfg: NormalizationConfig) -> Signature:
    """Run all six normalization steps; raises :class:`SignatureRejected` on a gate."""
    f0 = estimate_fundamental(raw.voltage, cfg.search_band)
    thd = compute_thd(raw.voltage, f0)
    if thd > cfg.t_thd:
        raise SignatureRejected(RejectionCode.HIGH_THD,
                                f"voltage THD {thd:.4f} > {cfg.t_thd}", step=1)

    roi = extract_roi(raw, cfg.t_on, 1.0 / f0)
    round_duration(roi, cfg.t_sec)

    # Crop so that the stretched signal covers a whole number of seconds.
    factor = f0 / cfg.f_ref
    up, down = _ratio(factor)
    seconds = math.floor(round(len(roi) * up / down) / roi.rate + 1e-9)
    if seconds < cfg.t_sec:
        raise SignatureRejected(
            RejectionCode.TOO_SHORT,
            f"{seconds} whole seconds left after frequency normalization", step=4)
    n_in = min(len(roi), int(math.ceil(seconds * roi.rate * down / up)) + 1)
    roi = roi.crop(0, n_in)

    current = time_stretch(roi.current, factor)
    voltage = time_stretch(roi.voltage, factor)
    current = resample(current, cfg.f_down)
    voltage = resample(voltage, cfg.f_down)
    n_out = int(round(seconds * cfg.f_down))
    out = Signature(raw.label, current.crop(0, n_out), voltage.crop(0, n_out), raw.source_id)
    return scale_to_reference(out, cfg.v_ref)
