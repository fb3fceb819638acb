"""Speech-enhancement scoring: predicted log-power plus noisy phase, resynthesized."""

from dataclasses import asdict, dataclass

import numpy as np

from ..dsp import AudioClip, Spectrogram, StftParams, istft, read_wav, stack_context, stft
from ..dsp.dataset import DatasetError
from ..dsp.stft import LOG_FLOOR
from .metrics import snr_db


@dataclass(frozen=True)
class FileScore:
    id: str
    input_snr: float
    output_snr: float

    @property
    def improvement(self):
        return self.output_snr - self.input_snr


@dataclass
class EnhancementReport:
    files: list

    @property
    def mean_input_snr(self):
        return float(np.mean([f.input_snr for f in self.files]))

    @property
    def mean_output_snr(self):
        return float(np.mean([f.output_snr for f in self.files]))

    @property
    def mean_improvement(self):
        return float(np.mean([f.improvement for f in self.files]))

    def to_dict(self):
        return {
            "files": [dict(asdict(f), improvement=f.improvement) for f in self.files],
            "mean_input_snr": self.mean_input_snr,
            "mean_output_snr": self.mean_output_snr,
            "mean_improvement": self.mean_improvement,
        }


def identity_predictor(entry, noisy_spec):
    return noisy_spec.log_power()


def oracle_predictor(manifest):
    """Predicts the clean reference's log-power exactly."""

    def predict(entry, noisy_spec):
        clean = read_wav(manifest.path(entry.clean_path), noisy_spec.params.sample_rate)
        return stft(clean, noisy_spec.params).log_power()

    return predict


def model_predictor(model, mode="quantized", threads=None):
    from ..nn.task import predict

    def run(entry, noisy_spec):
        feats = stack_context(noisy_spec.log_power(), model.spec.context_frames)
        return predict(model, feats, mode=mode, threads=threads)

    return run


def resynthesize(log_power, noisy_spec):
    """Magnitude from ``log_power`` with the noisy phase, back to a waveform."""
    magnitude = np.sqrt(np.maximum(np.exp(log_power) - LOG_FLOOR, 0.0))
    phase = np.exp(1j * np.angle(noisy_spec.values))
    return istft(Spectrogram(magnitude * phase, noisy_spec.params))


def enhancement_eval(predictor, manifest, split="test", params=None, mode="quantized", threads=None):
    """Per-file input and output SNR against the clean reference.

    ``predictor`` is a trained model or a callable ``(entry, noisy_spec) ->
    log-power``. Both SNRs are measured over the samples the inverse STFT
    reconstructs.
    """
    params = params or StftParams()
    if not callable(predictor):
        predictor = model_predictor(predictor, mode, threads)
    scores = []
    for e in manifest.split(split):
        noisy = read_wav(manifest.path(e.noisy_path), params.sample_rate)
        clean = read_wav(manifest.path(e.clean_path), params.sample_rate)
        if len(clean) != len(noisy):
            raise DatasetError(f"{e.id}: clean/noisy length mismatch")
        spec = stft(noisy, params)
        predicted = np.asarray(predictor(e, spec))
        if predicted.shape != spec.values.shape:
            raise DatasetError(f"{e.id}: predicted shape {predicted.shape}, expected {spec.values.shape}")
        estimate = resynthesize(predicted, spec)
        n = len(estimate)
        ref = AudioClip(clean.samples[:n], params.sample_rate)
        scores.append(FileScore(e.id, snr_db(ref, noisy.samples[:n]), snr_db(ref, estimate)))
    if not scores:
        raise DatasetError(f"split {split!r} is empty")
    return EnhancementReport(scores)
