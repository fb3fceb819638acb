"""MLP definition, forward passes in full / quantized / dynamic modes, activation
calibration, and the operation/memory cost model."""

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import bitkernel
from ..quant import (
    dequantize,
    fake_quantize,
    fake_quantize_frozen,
    quantize_matrix,
    quantize_with_scales,
    residual_scales,
)

FULL_PRECISION = 32
ALLOWED_BITS = (1, 2, 4, 8, FULL_PRECISION)
OUTPUT_ACTIVATIONS = ("sigmoid", "identity")
MODES = ("full", "quantized", "dynamic")


class ModelError(ValueError):
    pass


class CalibrationError(ModelError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    layer_dims: tuple
    output_activation: str = "sigmoid"
    weight_bits: int = FULL_PRECISION
    neuron_bits: int = FULL_PRECISION
    context_frames: int = 7
    quantize_input: bool = True
    hidden_activation: str = "relu"
    task: str | None = None
    # identity outputs only: predict the log-power change from the noisy centre
    # frame, bounded to [-gain_floor_db, 0] dB, instead of the clean frame itself
    gain_floor_db: float | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 3:
            raise ModelError("need input, at least one hidden layer, and output dims")
        if any(d < 1 for d in dims):
            raise ModelError(f"layer dims must be >= 1, got {dims}")
        for name in ("weight_bits", "neuron_bits"):
            if getattr(self, name) not in ALLOWED_BITS:
                raise ModelError(f"{name} must be one of {ALLOWED_BITS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ModelError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        if self.hidden_activation != "relu":
            raise ModelError("only relu hidden layers are supported")
        if self.gain_floor_db is not None:
            if self.output_activation != "identity":
                raise ModelError("gain targets need an identity output")
            if self.gain_floor_db <= 0:
                raise ModelError("gain_floor_db must be positive")
            if dims[0] != self.context_frames * dims[-1]:
                raise ModelError("gain targets need input width = context_frames * output width")

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    @property
    def weights_quantized(self):
        return self.weight_bits < FULL_PRECISION

    def site_quantized(self, layer):
        """Whether the input of ``layer`` is quantized."""
        if self.neuron_bits >= FULL_PRECISION:
            return False
        return layer > 0 or self.quantize_input

    def with_bits(self, weight_bits, neuron_bits):
        d = asdict(self)
        d.update(weight_bits=weight_bits, neuron_bits=neuron_bits)
        return ModelSpec(**d)

    def to_dict(self):
        d = asdict(self)
        d["layer_dims"] = list(self.layer_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Model:
    spec: ModelSpec
    weights: list  # float32 (out, in) master copies
    biases: list  # float32 (out,)
    act_scales: list = None  # per layer: frozen float64 scales or None
    packed: list = None  # per layer: pre-packed QuantizedTensor or None
    feature_stats: object = None  # NormStats for the input features
    target_stats: object = None  # NormStats for regression targets
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.spec.n_layers
        if len(self.weights) != n or len(self.biases) != n:
            raise ModelError(f"expected {n} weight matrices and bias vectors")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.spec.layer_dims[l + 1], self.spec.layer_dims[l])
            if w.shape != shape or b.shape != (shape[0],):
                raise ModelError(f"layer {l}: weight {w.shape} / bias {b.shape} do not match {shape}")
        if self.act_scales is None:
            self.act_scales = [None] * n
        if self.packed is None:
            self.packed = [None] * n

    @property
    def calibrated(self):
        return all(
            self.act_scales[l] is not None for l in range(self.spec.n_layers) if self.spec.site_quantized(l)
        )

    def pack_weights(self):
        """(Re)quantize and pack every weight matrix from the master copies."""
        if self.spec.weights_quantized:
            self.packed = [quantize_matrix(w, self.spec.weight_bits) for w in self.weights]
        else:
            self.packed = [None] * self.spec.n_layers
        return self

    def copy(self):
        return copy.deepcopy(self)


def init_model(spec, seed=0):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_out, fan_in)).astype(np.float32))
        biases.append(np.zeros(fan_out, dtype=np.float32))
    return Model(spec, weights, biases)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def relu(z):
    return np.maximum(z, 0)


def _activate(spec, layer, z):
    if layer < spec.n_layers - 1:
        return relu(z)
    return sigmoid(z) if spec.output_activation == "sigmoid" else z


@dataclass
class ForwardResult:
    output: np.ndarray
    inputs: list  # per layer: the (possibly quantized) matrix fed to the product
    pre: list  # per layer: pre-activation
    weights: list = None  # per layer: weight matrix used (full/dynamic modes)


def _quantized_layer(model, layer, h, threads):
    spec = model.spec
    xq = None
    if spec.site_quantized(layer):
        xq = quantize_with_scales(h, model.act_scales[layer], threads=threads)
    wq = model.packed[layer] if spec.weights_quantized else None
    if xq is not None and wq is not None:
        return bitkernel.gemm_quantized(xq, wq, threads=threads), xq
    if xq is not None:
        return bitkernel.gemm_dense(dequantize(xq), model.weights[layer].T, threads=threads), xq
    if wq is not None:
        return bitkernel.gemm_dense(h, dequantize(wq).T, threads=threads), None
    return bitkernel.gemm_dense(h, model.weights[layer].T, threads=threads), None


def forward(model, x, mode="full", threads=None, keep=False):
    """Run the network on a batch of (normalized) feature rows.

    ``full``
        full-precision weights and activations via ``gemm_dense``.
    ``quantized``
        frozen activation scales (see :func:`calibrate_activations`) and
        pre-packed weight planes through ``gemm_quantized``. With W = N = 32
        this is the same computation as ``full``.
    ``dynamic``
        training-time fake quantization: scales recomputed from the current
        weights and from this batch's activations.

    Returns the output array, or a :class:`ForwardResult` when ``keep``.
    """
    spec = model.spec
    if mode not in MODES:
        raise ModelError(f"mode must be one of {MODES}")
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != spec.layer_dims[0]:
        raise ModelError(f"expected features of width {spec.layer_dims[0]}, got shape {x.shape}")
    if mode == "quantized":
        if not model.calibrated:
            raise CalibrationError("quantized mode needs calibrated activation scales")
        if spec.weights_quantized and any(p is None for p in model.packed):
            model.pack_weights()
    h = x
    inputs, pre, used = [], [], []
    for l in range(spec.n_layers):
        w = None
        if mode == "quantized":
            z, xq = _quantized_layer(model, l, h, threads)
            inp = xq if xq is not None else h
            z = z + model.biases[l]
        else:
            inp = h
            w = model.weights[l]
            if mode == "dynamic":
                if spec.site_quantized(l):
                    inp = fake_quantize(h, spec.neuron_bits).astype(h.dtype)
                if spec.weights_quantized:
                    w = fake_quantize(w, spec.weight_bits).astype(w.dtype)
                z = inp @ w.T + model.biases[l]
            else:
                z = bitkernel.gemm_dense(h, w.T, threads=threads) + model.biases[l]
        if keep:
            inputs.append(inp)
            pre.append(z)
            used.append(w)
        h = _activate(spec, l, z)
    return ForwardResult(h, inputs, pre, used) if keep else h


def calibrate_activations(model, features, batch=4096, propagate="quantized"):
    """Freeze residual-mean scales at every quantized activation site.

    Scales for a site are computed over all calibration rows pooled together.
    With ``propagate="quantized"`` the data reaching layer ``l`` has already
    passed through the quantized layers before it (the inference-time
    distribution); ``propagate="full"`` uses an unquantized forward pass.
    """
    spec = model.spec
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise CalibrationError("empty calibration set")
    if propagate not in ("quantized", "full"):
        raise ModelError("propagate must be 'quantized' or 'full'")
    model.pack_weights()
    weights = [dequantize(q) if q is not None else w.astype(np.float64) for q, w in zip(model.packed, model.weights)]
    if propagate == "full":
        weights = [w.astype(np.float64) for w in model.weights]
    h = features.astype(np.float64)
    scales = [None] * spec.n_layers
    for l in range(spec.n_layers):
        if spec.site_quantized(l):
            scales[l] = residual_scales(h, spec.neuron_bits)
            if propagate == "quantized":
                h = fake_quantize_frozen(h, scales[l])
        h = _activate(spec, l, h @ weights[l].T + model.biases[l])
    model.act_scales = scales
    return model


@dataclass(frozen=True)
class CostEstimate:
    mops_per_frame: float
    memory_bytes: int


def model_cost(spec, weight_bits=None, neuron_bits=None):
    """Multiply+accumulate count per frame and parameter memory.

    Weights take ``weight_bits / 8`` bytes each (rounded up per layer); biases
    always take 4 bytes.
    """
    wb = spec.weight_bits if weight_bits is None else weight_bits
    macs = 0
    weight_bytes = 0
    bias_bytes = 0
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        macs += fan_in * fan_out
        weight_bytes += math.ceil(fan_in * fan_out * min(wb, FULL_PRECISION) / 8)
        bias_bytes += 4 * fan_out
    return CostEstimate(2.0 * macs / 1e6, weight_bytes + bias_bytes)
