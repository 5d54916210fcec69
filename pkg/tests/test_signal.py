import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coldnilm import signal as S
from coldnilm.signal import NormalizationConfig, RejectionCode, SignatureRejected, Waveform

from conftest import make_signature, sine


# -- containers ---------------------------------------------------------------

def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform([1.0, np.nan], 10)
    with pytest.raises(ValueError):
        Waveform([1.0], 0)
    with pytest.raises(ValueError):
        make_signature(np.zeros(3), np.zeros(4), 10)
    with pytest.raises(ValueError):
        S.Signature("", Waveform(np.zeros(3), 10), Waveform(np.zeros(3), 10))


def test_normalization_config_validation():
    with pytest.raises(ValueError):
        NormalizationConfig(t_thd=1.5)
    with pytest.raises(ValueError):
        NormalizationConfig(v_ref=0)


# -- fundamental and THD ------------------------------------------------------

@pytest.mark.parametrize("freq,rate", [(50, 4000), (60, 30000)])
def test_fundamental_single_tone(freq, rate):
    f0 = S.estimate_fundamental(Waveform(sine(freq, rate, 1.0), rate))
    assert abs(f0 - freq) < 0.05


def test_fundamental_with_third_harmonic_matches_dense_fft_oracle():
    rate = 4000
    x = sine(50, rate, 1.0) + 0.1 * sine(150, rate, 1.0)
    f0 = S.estimate_fundamental(Waveform(x, rate))
    # independent oracle: plain rectangular-window FFT padded to a 0.01 Hz grid
    n = 400_000
    mag = np.abs(np.fft.rfft(x, n))
    freqs = np.fft.rfftfreq(n, 1 / rate)
    band = (freqs >= 40) & (freqs <= 70)
    oracle = freqs[band][np.argmax(mag[band])]
    assert abs(oracle - 50) < 0.05
    assert abs(f0 - oracle) < 0.05


@given(st.floats(45, 65), st.floats(0, 2 * np.pi))
def test_fundamental_error_below_tenth_hz_at_40db(freq, phase):
    rate = 4000
    rng = np.random.default_rng(int(freq * 1000))
    x = sine(freq, rate, 1.0, phase=phase)
    x = x + rng.standard_normal(x.shape[0]) * (0.01 / math.sqrt(2))  # 40 dB SNR
    assert abs(S.estimate_fundamental(Waveform(x, rate)) - freq) < 0.1


def test_fundamental_band_empty():
    with pytest.raises(S.BandEmpty):
        S.estimate_fundamental(Waveform(np.ones(4), 4), (40, 70))


def test_thd_pure_sine():
    assert S.compute_thd(Waveform(sine(50, 4000, 1.0), 4000), 50.0) == pytest.approx(0.0, abs=1e-6)


def test_thd_two_tone():
    x = sine(50, 4000, 1.0) + 0.1 * sine(150, 4000, 1.0)
    assert S.compute_thd(Waveform(x, 4000), 50.0) == pytest.approx(0.1, abs=1e-3)


def test_thd_three_tone():
    x = sine(50, 4000, 1.0) + 0.06 * sine(150, 4000, 1.0) + 0.08 * sine(250, 4000, 1.0)
    assert S.compute_thd(Waveform(x, 4000), 50.0) == pytest.approx(0.1, abs=1e-3)


def test_thd_skips_harmonics_above_nyquist():
    # 19 harmonics of 50 Hz exceed 500 Hz Nyquist; only h <= 9 are measured
    x = sine(50, 1000, 2.0) + 0.1 * sine(150, 1000, 2.0)
    assert S.compute_thd(Waveform(x, 1000), 50.0) == pytest.approx(0.1, abs=1e-3)


# -- RMS and ROI --------------------------------------------------------------

def test_sliding_rms_sine():
    rms = S.sliding_rms(Waveform(sine(50, 4000, 1.0, amp=3.0), 4000), 0.02)
    np.testing.assert_allclose(rms, 3.0 / math.sqrt(2), atol=3e-3)


def test_sliding_rms_zero():
    assert not S.sliding_rms(Waveform(np.zeros(500), 4000), 0.02).any()


def test_sliding_rms_step_matches_window_oracle():
    rate, win = 4000, 80
    x = np.zeros(800)
    x[400:] = 2.0
    rms = S.sliding_rms(Waveform(x, rate), win / rate)
    oracle = np.array([math.sqrt(np.mean(x[i:i + win] ** 2)) for i in range(800 - win + 1)])
    np.testing.assert_allclose(rms[:800 - win + 1], oracle, atol=1e-12)
    rise = rms[400 - win:401]
    assert np.all(np.diff(rise) >= -1e-12)
    assert rise[0] == 0 and rise[-1] == pytest.approx(2.0)
    # trailing positions repeat the last full window
    assert np.all(rms[800 - win + 1:] == rms[800 - win])


def test_roi_full_signal_retained():
    rate = 4000
    i = sine(50, rate, 2.0, amp=math.sqrt(2))
    sig = make_signature(i, sine(50, rate, 2.0, 311), rate)
    assert len(S.extract_roi(sig, 0.1, 0.02)) == len(sig)


def test_roi_no_activity():
    sig = make_signature(np.zeros(4000), sine(50, 4000, 1.0, 311), 4000)
    with pytest.raises(SignatureRejected) as exc:
        S.extract_roi(sig, 0.1, 0.02)
    assert exc.value.code is RejectionCode.NO_ACTIVITY and exc.value.step == 2


def test_roi_burst_in_silence():
    rate, period = 4000, 80
    on = np.r_[np.zeros(rate), np.ones(3 * rate), np.zeros(rate)]
    i = on * sine(50, rate, 5.0, amp=math.sqrt(2))
    sig = make_signature(i, sine(50, rate, 5.0, 311), rate)
    roi = S.extract_roi(sig, 0.1, 0.02)
    # mask oracle: the window starting at n covers [n, n+period)
    assert abs(len(roi) - 3 * rate) <= period


# -- duration -----------------------------------------------------------------

def test_round_duration_floor():
    sig = make_signature(np.ones(14800), np.ones(14800), 4000)  # 3.7 s
    assert len(S.round_duration(sig, 1.0)) == 12000


def test_round_duration_too_short():
    sig = make_signature(np.ones(3600), np.ones(3600), 4000)
    with pytest.raises(SignatureRejected) as exc:
        S.round_duration(sig, 1.0)
    assert exc.value.code is RejectionCode.TOO_SHORT and exc.value.step == 3


def test_round_duration_exact():
    sig = make_signature(np.ones(8000), np.ones(8000), 4000)
    assert len(S.round_duration(sig, 1.0)) == 8000


# -- stretch and resample -----------------------------------------------------

def test_stretch_moves_60_to_50():
    out = S.time_stretch(Waveform(sine(60, 4000, 2.0), 4000), 1.2)
    assert abs(S.estimate_fundamental(out) - 50) < 0.5


def test_stretch_identity():
    x = sine(50, 4000, 1.0)
    out = S.time_stretch(Waveform(x, 4000), 1.0)
    assert len(out) == len(x)
    assert np.corrcoef(out.samples, x)[0, 1] >= 0.99


def test_stretch_length():
    out = S.time_stretch(Waveform(sine(60, 4000, 2.0), 4000), 1.2)
    assert abs(out.duration - 2.4) <= 512 / 4000  # one hop of a 2048/4x analysis


def test_stretch_rejects_extreme_factor():
    with pytest.raises(ValueError):
        S.time_stretch(Waveform(np.zeros(10), 10), 2.5)


def _amplitude_at(x, rate, freq):
    t = np.arange(x.shape[0]) / rate
    basis = np.c_[np.sin(2 * np.pi * freq * t), np.cos(2 * np.pi * freq * t)]
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    return float(np.hypot(*coef))


def test_resample_preserves_tone():
    out = S.resample(Waveform(sine(50, 30000, 1.0), 30000), 4000)
    assert len(out) == 4000 and out.rate == 4000
    core = out.samples[200:-200]
    assert _amplitude_at(core, 4000, 50) == pytest.approx(1.0, abs=0.01)


def test_resample_identity():
    x = sine(50, 4000, 0.5)
    out = S.resample(Waveform(x, 4000), 4000)
    assert len(out) == len(x)
    np.testing.assert_array_equal(out.samples, x)


def test_resample_attenuates_above_cutoff():
    out = S.resample(Waveform(sine(2100, 30000, 1.0), 30000), 4000)
    core = out.samples[200:-200]
    # 2.1 kHz folds to 1.9 kHz at 4 kHz
    assert _amplitude_at(core, 4000, 1900) <= 0.01
    assert np.sqrt(np.mean(core ** 2)) <= 0.01


# -- voltage scaling ----------------------------------------------------------

def test_scale_us_signature():
    v = sine(60, 4000, 1.0, 170)
    i = sine(60, 4000, 1.0, 2.0)
    sig = make_signature(i, v, 4000)
    out = S.scale_to_reference(sig, 311)
    s = 311 / S.peak_voltage(sig.voltage)
    assert s == pytest.approx(311 / 170, rel=1e-4)
    np.testing.assert_allclose(out.voltage.samples, v * s)
    np.testing.assert_allclose(out.current.samples, i / s)


def test_scale_identity_at_reference():
    sig = make_signature(np.ones(10), np.full(10, 311.0), 10)
    out = S.scale_to_reference(sig, 311)
    np.testing.assert_array_equal(out.voltage.samples, sig.voltage.samples)
    np.testing.assert_array_equal(out.current.samples, sig.current.samples)


@given(st.floats(10, 1000), st.integers(0, 2**32 - 1))
def test_scale_preserves_power(peak, seed):
    rng = np.random.default_rng(seed)
    v = sine(50, 1000, 0.2, peak) + rng.normal(0, 1, 200)
    i = rng.normal(0, 3, 200)
    out = S.scale_to_reference(make_signature(i, v, 1000), 311)
    before = float(np.sum(v * i))
    after = float(np.sum(out.voltage.samples * out.current.samples))
    assert after == pytest.approx(before, rel=1e-9, abs=1e-9 * np.sum(np.abs(v * i)))


def test_scale_zero_voltage():
    with pytest.raises(S.ZeroVoltage):
        S.scale_to_reference(make_signature(np.ones(5), np.zeros(5), 10), 311)


# -- full pipeline ------------------------------------------------------------

def _kettle(freq, rate, seconds, v_peak, thd=0.0, lead=0.25):
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    v = v_peak * (np.sin(2 * np.pi * freq * t) + thd * np.sin(2 * np.pi * 3 * freq * t))
    on = (t >= lead) & (t < seconds - lead)
    i = np.where(on, 8.0 * np.sin(2 * np.pi * freq * t), 0.0)
    return make_signature(i, v, rate, "kettle", "k")


def test_normalize_us_kettle():
    cfg = NormalizationConfig()
    out = S.normalize_signature(_kettle(60, 16000, 3.5, 170), cfg)
    assert out.rate == 4000
    assert len(out) % 4000 == 0 and len(out) >= 4000
    assert abs(S.estimate_fundamental(out.voltage) - 50) < 0.5
    assert S.peak_voltage(out.voltage) == pytest.approx(311, rel=0.01)


def test_normalize_rejects_high_thd():
    with pytest.raises(SignatureRejected) as exc:
        S.normalize_signature(_kettle(50, 8000, 3.0, 325, thd=0.15), NormalizationConfig())
    assert exc.value.code is RejectionCode.HIGH_THD and exc.value.step == 1


def test_normalize_rejects_short_burst():
    sig = _kettle(50, 8000, 1.0, 325, lead=0.25)  # 0.5 s active
    with pytest.raises(SignatureRejected) as exc:
        S.normalize_signature(sig, NormalizationConfig())
    assert exc.value.code is RejectionCode.TOO_SHORT


@pytest.mark.parametrize("delta,rejected", [(1e-3, True), (-1e-3, False)])
def test_thd_gate_exactness(delta, rejected):
    sig = _kettle(50, 8000, 2.5, 325, thd=0.1 + delta)
    if rejected:
        with pytest.raises(SignatureRejected):
            S.normalize_signature(sig, NormalizationConfig())
    else:
        S.normalize_signature(sig, NormalizationConfig())


def test_normalize_idempotent():
    cfg = NormalizationConfig(f_down=4000)
    once = S.normalize_signature(_kettle(60, 16000, 3.5, 170), cfg)
    twice = S.normalize_signature(once, cfg)
    f1 = S.estimate_fundamental(once.voltage)
    f2 = S.estimate_fundamental(twice.voltage)
    assert abs(f1 - f2) < 0.1
    assert S.peak_voltage(twice.voltage) == pytest.approx(S.peak_voltage(once.voltage), rel=1e-3)


@given(st.sampled_from([50, 60]), st.floats(1.2, 3.0), st.sampled_from([1000, 2000]))
def test_normalize_integer_seconds(freq, seconds, f_down):
    cfg = NormalizationConfig(f_down=f_down)
    out = S.normalize_signature(_kettle(freq, 8000, seconds + 0.5, 230 * math.sqrt(2)), cfg)
    assert len(out) % f_down == 0 and out.rate == f_down
