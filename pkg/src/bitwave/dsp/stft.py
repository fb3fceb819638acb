"""Hann-windowed STFT, weighted overlap-add inverse, and log-power context features."""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from .audio import DEFAULT_SAMPLE_RATE, AudioClip

LOG_FLOOR = 1e-10
NORM_FLOOR = 1e-3  # interior window sums are >= 0.5


@dataclass(frozen=True)
class StftParams:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_ms: float = 16.0
    overlap: float = 0.5

    @property
    def frame(self):
        return int(round(self.sample_rate * self.frame_ms / 1000.0))

    @property
    def hop(self):
        return int(round(self.frame * (1.0 - self.overlap)))

    @property
    def fft_size(self):
        return 1 << (self.frame - 1).bit_length()

    @property
    def bins(self):
        return self.fft_size // 2 + 1

    def window(self):
        # periodic Hann: overlapping copies at 50% hop sum to exactly 1
        return get_window("hann", self.frame, fftbins=True)

    def n_frames(self, n_samples):
        if n_samples < self.frame:
            return 0
        return (n_samples - self.frame) // self.hop + 1


@dataclass
class Spectrogram:
    values: np.ndarray  # (frames, bins) complex
    params: StftParams = field(default_factory=StftParams)

    @property
    def frames(self):
        return self.values.shape[0]

    def magnitude(self):
        return np.abs(self.values)

    def log_power(self):
        return np.log(np.abs(self.values) ** 2 + LOG_FLOOR)


class StftError(ValueError):
    pass


def frame_signal(x, params):
    n = params.n_frames(x.size)
    idx = np.arange(params.frame)[None, :] + params.hop * np.arange(n)[:, None]
    return x[idx]


def stft(clip, params=None):
    params = params or StftParams(sample_rate=clip.sample_rate)
    if clip.sample_rate != params.sample_rate:
        raise StftError(f"clip is {clip.sample_rate} Hz but STFT expects {params.sample_rate} Hz")
    if len(clip) < params.frame:
        raise StftError(f"clip of {len(clip)} samples is shorter than one {params.frame}-sample frame")
    frames = frame_signal(clip.samples, params) * params.window()
    return Spectrogram(np.fft.rfft(frames, n=params.fft_size, axis=1), params)


def istft(spec, params=None):
    """Weighted overlap-add with a Hann synthesis window.

    Output length is ``(frames - 1) * hop + frame``. Each sample is divided by
    the summed squared window covering it, floored at ``NORM_FLOOR`` so the
    few edge samples with a near-zero window sum are attenuated rather than
    amplified when the spectrogram has been modified.
    """
    params = params or spec.params
    if params != spec.params:
        raise StftError("spectrogram was computed with different STFT parameters")
    if spec.values.shape[1] != params.bins:
        raise StftError(f"expected {params.bins} bins, got {spec.values.shape[1]}")
    win = params.window()
    frames = np.fft.irfft(spec.values, n=params.fft_size, axis=1)[:, : params.frame] * win
    length = (spec.frames - 1) * params.hop + params.frame
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(spec.frames):
        s = t * params.hop
        out[s : s + params.frame] += frames[t]
        norm[s : s + params.frame] += win**2
    out /= np.maximum(norm, NORM_FLOOR)
    return AudioClip(out, params.sample_rate)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data, floor=1e-8):
        data = np.asarray(data, dtype=np.float64)
        return cls(data.mean(axis=0), np.maximum(data.std(axis=0), floor))

    def apply(self, data):
        return (data - self.mean) / self.std

    def invert(self, data):
        return data * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def stack_context(frames, context=7):
    """Concatenate ``context`` centred frames per row; edges repeat the end frames."""
    half = context // 2
    padded = np.concatenate([np.repeat(frames[:1], half, 0), frames, np.repeat(frames[-1:], half, 0)])
    n = frames.shape[0]
    return np.concatenate([padded[k : k + n] for k in range(context)], axis=1)


def features(spec, norm_stats=None, context=7):
    """Log-power context windows, (frames, context * bins); normalized when stats are given."""
    if spec.frames == 0:
        raise StftError("empty spectrogram")
    stacked = stack_context(spec.log_power(), context)
    return norm_stats.apply(stacked) if norm_stats is not None else stacked
