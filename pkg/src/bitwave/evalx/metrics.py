"""Frame-level detection error and time-domain SNR."""

import math

import numpy as np

PERFECT = math.inf  # snr_db of an estimate with zero residual


class MetricError(ValueError):
    pass


def frame_error(predicted, labels):
    """Fraction of frames whose binary decision disagrees with the label."""
    p = np.asarray(predicted).reshape(-1)
    t = np.asarray(labels).reshape(-1)
    if p.size != t.size:
        raise MetricError(f"{p.size} predictions for {t.size} labels")
    if p.size == 0:
        raise MetricError("no frames to score")
    return float(np.count_nonzero((p != 0) != (t != 0)) / p.size)


def decisions(probabilities, threshold=0.5):
    """Binary speech decisions from detector outputs."""
    return (np.asarray(probabilities).reshape(-1) >= threshold).astype(np.int8)


def _samples(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def snr_db(clean, estimate):
    """10 log10 of clean energy over residual (estimate - clean) energy.

    Accepts ``AudioClip`` objects or plain arrays. Returns :data:`PERFECT`
    when the residual is exactly zero.
    """
    c, e = _samples(clean), _samples(estimate)
    if c.shape != e.shape:
        raise MetricError(f"length mismatch: clean {c.size}, estimate {e.size}")
    signal = float(np.sum(c * c))
    if signal == 0.0:
        raise MetricError("clean reference is silent")
    residual = float(np.sum((e - c) ** 2))
    if residual == 0.0:
        return PERFECT
    return 10.0 * math.log10(signal / residual)
