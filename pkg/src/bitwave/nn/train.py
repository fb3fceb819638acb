"""Mini-batch SGD with momentum on squared error, with quantization-aware
forward passes and straight-through gradients."""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .model import ForwardResult, ModelError, _activate, forward

log = logging.getLogger(__name__)


class TrainingError(ModelError):
    """Numeric failure during training (non-finite loss)."""


@dataclass(frozen=True)
class Hyper:
    lr: float = 0.01
    momentum: float = 0.9
    batch: int = 256
    epochs: int = 20
    seed: int = 0
    clip: float = 1.0  # master-weight bound while weights are quantized


def squared_error(pred, target):
    return float(np.mean(np.square(pred - target)))


def backward(model, fwd, target):
    """Gradients of mean squared error w.r.t. weights and biases.

    ``fwd`` is a ``forward(..., keep=True)`` result. The gradient flows through
    the quantized weights and activations used in the forward pass, and every
    quantizer is treated as the identity (straight-through).
    """
    spec = model.spec
    y = fwd.output
    n = y.size
    grad = (2.0 / n) * (y - target)
    if spec.output_activation == "sigmoid":
        grad = grad * y * (1.0 - y)
    gw = [None] * spec.n_layers
    gb = [None] * spec.n_layers
    for l in reversed(range(spec.n_layers)):
        inp = fwd.inputs[l]
        gw[l] = grad.T @ inp
        gb[l] = grad.sum(axis=0)
        if l == 0:
            break
        grad = (grad @ fwd.weights[l]) * (fwd.pre[l - 1] > 0)
    return gw, gb


def _forward_plain(model, x):
    """Unquantized forward used by plain (non-QAT) training."""
    h = x
    inputs, pre = [], []
    for l in range(model.spec.n_layers):
        z = h @ model.weights[l].T + model.biases[l]
        inputs.append(h)
        pre.append(z)
        h = _activate(model.spec, l, z)
    return ForwardResult(h, inputs, pre, list(model.weights))


def train_step_grads(model, x, target, qat=True):
    """Forward + backward on one batch; returns (loss, grad_w, grad_b)."""
    fwd = forward(model, x, mode="dynamic", keep=True) if qat else _forward_plain(model, x)
    loss = squared_error(fwd.output, target)
    gw, gb = backward(model, fwd, target)
    return loss, gw, gb


def evaluate_loss(model, x, target, batch, qat=True):
    total, count = 0.0, 0
    for s in range(0, x.shape[0], batch):
        xb, tb = x[s : s + batch], target[s : s + batch]
        out = forward(model, xb, mode="dynamic", keep=False) if qat else _forward_plain(model, xb).output
        total += float(np.sum(np.square(out - tb)))
        count += tb.size
    return total / count


def train(model, train_set, valid_set, hyper=Hyper(), qat=True, log_every=1):
    """Train ``model`` in place on ``(features, targets)`` pairs.

    Returns the model holding the weights with the lowest validation loss;
    ``model.meta["history"]`` lists per-epoch train/valid losses.
    """
    x, t = train_set
    xv, tv = valid_set
    if x.shape[0] == 0 or xv.shape[0] == 0:
        raise ModelError("training and validation sets must be non-empty")
    if hyper.batch < 1:
        raise ModelError("batch size must be >= 1")
    dtype = model.weights[0].dtype
    x = np.asarray(x, dtype=dtype)
    t = np.asarray(t, dtype=dtype)
    xv = np.asarray(xv, dtype=dtype)
    tv = np.asarray(tv, dtype=dtype)
    spec = model.spec
    quantizing = qat and (spec.weights_quantized or spec.neuron_bits < 32)
    clip = quantizing and spec.weights_quantized

    rng = np.random.default_rng(hyper.seed)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    history = []
    best = None
    for epoch in range(hyper.epochs):
        order = rng.permutation(x.shape[0])
        running, seen = 0.0, 0
        for s in range(0, x.shape[0], hyper.batch):
            idx = order[s : s + hyper.batch]
            loss, gw, gb = train_step_grads(model, x[idx], t[idx], qat=quantizing)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {s // hyper.batch}")
            running += loss * idx.size
            seen += idx.size
            for l in range(spec.n_layers):
                vel_w[l] = hyper.momentum * vel_w[l] - hyper.lr * gw[l].astype(dtype)
                vel_b[l] = hyper.momentum * vel_b[l] - hyper.lr * gb[l].astype(dtype)
                model.weights[l] += vel_w[l]
                model.biases[l] += vel_b[l]
                if clip:
                    np.clip(model.weights[l], -hyper.clip, hyper.clip, out=model.weights[l])
        valid_loss = evaluate_loss(model, xv, tv, hyper.batch, qat=quantizing)
        if not np.isfinite(valid_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": running / seen, "valid_loss": valid_loss})
        if log_every and epoch % log_every == 0:
            log.info("epoch %d train %.5f valid %.5f", epoch, running / seen, valid_loss)
        if best is None or valid_loss < best[0]:
            best = (valid_loss, epoch, [w.copy() for w in model.weights], [b.copy() for b in model.biases])
    if best is not None:
        model.weights = best[2]
        model.biases = best[3]
    model.packed = [None] * spec.n_layers
    model.act_scales = [None] * spec.n_layers
    model.meta.update(
        history=history,
        best_epoch=best[1] if best else None,
        hyper=asdict(hyper),
        qat=bool(quantizing),
    )
    return model


def gradient_check(model, x, target, eps=1e-4):
    """Max relative error between analytic and central-difference gradients (full precision).

    Runs in float64 on a copy of ``model``.
    """
    m = model.copy()
    m.weights = [w.astype(np.float64) for w in m.weights]
    m.biases = [b.astype(np.float64) for b in m.biases]
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _, gw, gb = train_step_grads(m, x, target, qat=False)
    worst = 0.0
    for params, grads in ((m.weights, gw), (m.biases, gb)):
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            num = np.empty_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = squared_error(_forward_plain(m, x).output, target)
                flat[i] = orig - eps
                down = squared_error(_forward_plain(m, x).output, target)
                flat[i] = orig
                num[i] = (up - down) / (2 * eps)
            ana = g.reshape(-1)
            denom = np.maximum(np.abs(ana) + np.abs(num), 1e-8)
            worst = max(worst, float(np.max(np.abs(ana - num) / denom)))
    return worst
