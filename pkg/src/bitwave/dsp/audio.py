"""Mono 16-bit PCM WAV I/O."""

import wave
from dataclasses import dataclass

import numpy as np

DEFAULT_SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


def read_wav(path, sample_rate=DEFAULT_SAMPLE_RATE):
    """Read a PCM16 mono WAV scaled to [-1, 1).

    ``sample_rate=None`` accepts any rate; otherwise a different rate is an error
    (there is no resampling).
    """
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate, nframes = (
                wf.getnchannels(),
                wf.getsampwidth(),
                wf.getframerate(),
                wf.getnframes(),
            )
            raw = wf.readframes(nframes)
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: mono required, file has {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: 16-bit PCM required, file has {8 * width}-bit samples")
    if sample_rate is not None and rate != sample_rate:
        raise AudioFormatError(f"{path}: sample-rate mismatch ({rate} Hz, pipeline runs at {sample_rate} Hz)")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0, rate)


def to_pcm16(samples):
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, clip):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(clip.sample_rate))
        wf.writeframes(to_pcm16(clip.samples).tobytes())
