"""Adapters that score a trained model for the exploration grid."""

from .enhance import enhancement_eval
from .metrics import decisions, frame_error


def vad_evaluator(test_arrays, mode="quantized", threads=None):
    """``evaluate(model) -> (frame_error, frame_error)`` on prepared test arrays."""
    from ..nn.task import predict

    def evaluate(model):
        err = frame_error(decisions(predict(model, test_arrays.features, mode=mode, threads=threads)), test_arrays.targets)
        return err, err

    return evaluate


def enhancement_evaluator(manifest, split="test", mode="quantized", threads=None):
    """``evaluate(model) -> (mean SNR improvement, -improvement)``."""

    def evaluate(model):
        gain = enhancement_eval(model, manifest, split, mode=mode, threads=threads).mean_improvement
        return gain, -gain

    return evaluate
