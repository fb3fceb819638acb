"""Task-level glue: normalize features (and regression targets), train, calibrate, predict."""

import numpy as np

from ..dsp.stft import NormStats
from .model import calibrate_activations, forward, init_model
from .train import Hyper, train

CALIBRATION_ROWS = 20000


def centre_frame(spec, raw_features):
    """The unnormalized middle context frame of each feature row."""
    bins = spec.layer_dims[-1]
    start = (spec.context_frames // 2) * bins
    return np.asarray(raw_features)[:, start : start + bins]


def gain_floor(spec):
    """Largest allowed log-power suppression, in nats."""
    return float(np.log(10.0 ** (spec.gain_floor_db / 10.0)))


def gain_targets(spec, raw_features, clean_log_power):
    return np.clip(clean_log_power - centre_frame(spec, raw_features), -gain_floor(spec), 0.0)


def _calibration_rows(x, seed, limit=CALIBRATION_ROWS):
    if x.shape[0] <= limit:
        return x
    idx = np.sort(np.random.default_rng(seed).choice(x.shape[0], limit, replace=False))
    return x[idx]


def fit_task(spec, train_arrays, valid_arrays, hyper=Hyper(), qat=True):
    """Train and calibrate a model on unnormalized task arrays.

    ``*_arrays`` carry ``features`` and ``targets`` (see ``dsp.task_arrays``).
    Feature statistics come from the training split only. Identity-output
    models also get per-dimension target statistics and learn normalized
    targets. With ``spec.gain_floor_db`` set, the clean log-power targets are
    first turned into bounded changes from the noisy centre frame.
    """
    fstats = NormStats.fit(train_arrays.features)
    x = fstats.apply(train_arrays.features).astype(np.float32)
    xv = fstats.apply(valid_arrays.features).astype(np.float32)
    t, tv = train_arrays.targets, valid_arrays.targets
    if spec.gain_floor_db is not None:
        t = gain_targets(spec, train_arrays.features, t)
        tv = gain_targets(spec, valid_arrays.features, tv)
    tstats = None
    if spec.output_activation == "identity":
        tstats = NormStats.fit(t)
        t = tstats.apply(t).astype(np.float32)
        tv = tstats.apply(tv).astype(np.float32)
    model = init_model(spec, seed=hyper.seed)
    model.feature_stats = fstats
    model.target_stats = tstats
    train(model, (x, t), (xv, tv), hyper, qat=qat)
    calibrate_activations(model, _calibration_rows(x, hyper.seed))
    return model


def predict(model, raw_features, mode="quantized", batch=4096, threads=None):
    """Model output for unnormalized feature rows, mapped back to target units.

    For gain-target models this is the estimated clean log-power: the noisy
    centre frame plus the bounded predicted change.
    """
    x = np.asarray(raw_features)
    if model.feature_stats is not None:
        x = model.feature_stats.apply(x)
    x = x.astype(np.float32)
    out = np.concatenate(
        [np.asarray(forward(model, x[s : s + batch], mode=mode, threads=threads)) for s in range(0, x.shape[0], batch)]
    )
    if model.target_stats is not None:
        out = model.target_stats.invert(out)
    if model.spec.gain_floor_db is not None:
        out = centre_frame(model.spec, raw_features) + np.clip(out, -gain_floor(model.spec), 0.0)
    return out
