"""Audio I/O, STFT features, and synthetic noisy-speech datasets."""

from .audio import AudioClip, AudioFormatError, read_wav, write_wav
from .dataset import (
    DatasetError,
    Manifest,
    ManifestEntry,
    SynthConfig,
    TaskArrays,
    generate_dataset,
    load_labels,
    load_manifest,
    task_arrays,
)
from .stft import NormStats, Spectrogram, StftError, StftParams, features, istft, stack_context, stft
from .synth import (
    NOISE_KINDS,
    Mixture,
    SignalError,
    apply_rir,
    mix_at_snr,
    synth_noise,
    synth_rir,
    synth_speech,
    vad_labels,
)
