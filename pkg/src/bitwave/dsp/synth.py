"""Signal synthesis: SNR mixing, exponential-decay room responses, energy VAD
labels, and self-contained speech-like / noise generators for test corpora."""

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, fftconvolve, lfilter, sosfilt

from .audio import DEFAULT_SAMPLE_RATE, AudioClip
from .stft import StftParams, frame_signal

PEAK_LIMIT = 0.99


class SignalError(ValueError):
    pass


def power(x):
    return float(np.mean(np.square(x)))


@dataclass
class Mixture:
    noisy: AudioClip
    gain: float  # applied to the noise
    scaled_noise: np.ndarray
    peak_gain: float = 1.0  # applied to the whole mixture after mixing

    @property
    def clean_part(self):
        return self.noisy.samples - self.scaled_noise


def fit_length(noise, n, offset=0):
    """Tile ``noise`` as needed and take ``n`` samples starting at ``offset``."""
    reps = -(-(offset + n) // noise.size)
    return np.tile(noise, reps)[offset : offset + n]


def mix_at_snr(clean, noise, snr_db, offset=0, peak_normalize=True):
    """Add ``noise`` to ``clean`` so the clean/noise power ratio equals ``snr_db``.

    Power is measured over the whole clean clip. ``snr_db=inf`` returns the
    clean signal untouched. When the mixture would clip, both components are
    scaled down together and the factor is returned as ``peak_gain``.
    """
    c = clean.samples
    p_clean = power(c)
    if p_clean == 0.0:
        raise SignalError("silent clean input")
    if np.isposinf(snr_db):
        return Mixture(AudioClip(c.copy(), clean.sample_rate), 0.0, np.zeros_like(c))
    d = fit_length(noise.samples, c.size, offset)
    p_noise = power(d)
    if p_noise == 0.0:
        raise SignalError("silent noise input")
    g = float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))
    scaled = g * d
    mix = c + scaled
    peak_gain = 1.0
    peak = float(np.max(np.abs(mix)))
    if peak_normalize and peak > 1.0:
        peak_gain = PEAK_LIMIT / peak
        mix *= peak_gain
        scaled *= peak_gain
    return Mixture(AudioClip(mix, clean.sample_rate), g, scaled, peak_gain)


def synth_rir(rt60_ms, seed, sample_rate=DEFAULT_SAMPLE_RATE, tail_energy=0.5):
    """Unit direct path followed by white noise decaying 60 dB over ``rt60_ms``.

    The tail is scaled so its total energy is about ``tail_energy`` relative to
    the direct path, and runs for 1.2 * rt60.
    """
    if not 50 <= rt60_ms <= 1000:
        raise SignalError(f"rt60 must lie in [50, 1000] ms, got {rt60_ms}")
    t60 = rt60_ms * sample_rate / 1000.0
    length = int(round(1.2 * t60))
    rng = np.random.default_rng(seed)
    t = np.arange(1, length)
    decay = 10.0 ** (-3.0 * t / t60)  # amplitude; energy falls 60 dB at t60
    tail = rng.standard_normal(t.size) * decay
    tail *= np.sqrt(tail_energy / np.sum(tail**2))
    return np.concatenate([[1.0], tail])


def apply_rir(clip, rir):
    """Full linear convolution (length ``len(clip) + len(rir) - 1``)."""
    rir = np.asarray(rir, dtype=np.float64)
    if rir.size == 1:
        out = clip.samples * rir[0]
    else:
        out = fftconvolve(clip.samples, rir)
    return AudioClip(out, clip.sample_rate)


def frame_energy_db(clip, params):
    frames = frame_signal(clip.samples, params) * params.window()
    energy = np.sum(frames**2, axis=1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy)


def vad_labels(clean, params=None, threshold_db=40.0):
    """Speech = 1 for frames within ``threshold_db`` of the loudest frame, on the STFT grid."""
    params = params or StftParams(sample_rate=clean.sample_rate)
    level = frame_energy_db(clean, params)
    if level.size == 0 or not np.isfinite(level).any():
        return np.zeros(level.size, dtype=np.int8)
    return (level >= np.max(level) - threshold_db).astype(np.int8)


# --- speech-like source -------------------------------------------------------


def _resonator(freq, bw, sr):
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return [1.0 - r], a


def _envelope(n, rng):
    attack = max(1, int(n * rng.uniform(0.1, 0.3)))
    release = max(1, int(n * rng.uniform(0.15, 0.35)))
    env = np.ones(n)
    env[:attack] = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, attack))
    env[n - release :] = 0.5 + 0.5 * np.cos(np.linspace(0, np.pi, release))
    return env


def _voiced(n, f0, rng, sr):
    f0_path = np.linspace(f0 * rng.uniform(0.85, 1.15), f0 * rng.uniform(0.85, 1.15), n)
    f0_path *= 1 + 0.01 * rng.standard_normal(n).cumsum() / np.sqrt(np.arange(1, n + 1))
    phase = np.cumsum(f0_path / sr)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    source = lfilter([1.0], [1.0, -0.9], pulses)
    out = source
    for lo, hi, bw in ((300, 850, 90), (850, 2300, 120), (2300, 3300, 160)):
        b, a = _resonator(rng.uniform(lo, hi), bw, sr)
        out = lfilter(b, a, out)
    out += 0.02 * np.std(out) * rng.standard_normal(n)
    return out / (np.max(np.abs(out)) + 1e-12)


def _fricative(n, rng, sr):
    sos = butter(4, rng.uniform(2500, 4500), btype="highpass", fs=sr, output="sos")
    out = sosfilt(sos, rng.standard_normal(n))
    return out / (np.max(np.abs(out)) + 1e-12)


def synth_speech(rng, duration_s=3.0, sample_rate=DEFAULT_SAMPLE_RATE, pause_range=(0.1, 0.5)):
    """Words of voiced (formant-filtered pulse train) and fricative syllables
    separated by silent pauses. Pauses are exactly zero."""
    n = int(round(duration_s * sample_rate))
    out = np.zeros(n)
    f0 = rng.uniform(90, 230)
    pos = min(int(rng.uniform(0.1, 0.4) * sample_rate), n // 5)
    tail = min(int(0.25 * sample_rate), n // 4)
    while pos < n - tail:
        for _ in range(rng.integers(1, 4)):
            syl = min(int(rng.uniform(0.08, 0.25) * sample_rate), n - pos)
            if syl < 16:
                break
            if rng.random() < 0.8:
                seg = _voiced(syl, f0, rng, sample_rate) * rng.uniform(0.4, 1.0)
            else:
                seg = _fricative(syl, rng, sample_rate) * rng.uniform(0.1, 0.3)
            out[pos : pos + syl] += seg * _envelope(syl, rng)
            pos += syl
        pos += int(rng.uniform(*pause_range) * sample_rate)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= rng.uniform(0.3, 0.6) / peak
    return AudioClip(out, sample_rate)


# --- noise sources ------------------------------------------------------------

NOISE_KINDS = ("white", "pink", "brown", "babble", "hum", "traffic", "wind", "clatter")


def _spectral_noise(n, rng, exponent):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / f ** (exponent / 2.0), n=n)


def _slow_modulation(n, rng, sr, rate_hz, depth):
    knots = max(2, int(n / sr * rate_hz) + 2)
    ctrl = rng.uniform(1 - depth, 1 + depth, knots)
    return np.interp(np.linspace(0, knots - 1, n), np.arange(knots), ctrl)


def synth_noise(kind, rng, n, sample_rate=DEFAULT_SAMPLE_RATE):
    """Unit-RMS noise of one of :data:`NOISE_KINDS`."""
    sr = sample_rate
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        x = _spectral_noise(n, rng, 1.0)
    elif kind == "brown":
        x = _spectral_noise(n, rng, 2.0)
    elif kind == "babble":
        dur = n / sr
        x = sum(synth_speech(rng, dur, sr, pause_range=(0.02, 0.15)).samples for _ in range(6))
        x = x + 0.05 * np.std(x) * rng.standard_normal(n)
    elif kind == "hum":
        t = np.arange(n) / sr
        base = rng.choice([50.0, 60.0])
        x = sum(rng.uniform(0.2, 1.0) / h * np.sin(2 * np.pi * base * h * t + rng.uniform(0, 2 * np.pi)) for h in range(1, 9))
        x = x + 0.1 * rng.standard_normal(n)
    elif kind == "traffic":
        sos = butter(4, rng.uniform(300, 900), fs=sr, output="sos")
        x = sosfilt(sos, rng.standard_normal(n)) * _slow_modulation(n, rng, sr, 0.7, 0.6)
    elif kind == "wind":
        sos = butter(2, rng.uniform(100, 400), fs=sr, output="sos")
        x = sosfilt(sos, rng.standard_normal(n)) * _slow_modulation(n, rng, sr, 2.0, 0.9)
    elif kind == "clatter":
        x = 0.05 * rng.standard_normal(n)
        for _ in range(max(1, int(n / sr * 6))):
            at = rng.integers(0, n)
            length = min(n - at, int(rng.uniform(0.01, 0.06) * sr))
            hit = rng.standard_normal(length) * np.exp(-np.arange(length) / (0.004 * sr)) * rng.uniform(0.5, 3.0)
            x[at : at + length] += hit
    else:
        raise SignalError(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")
    x = np.asarray(x, dtype=np.float64)
    return AudioClip(x / (np.sqrt(power(x)) + 1e-12), sample_rate)
