"""Ideal bit-serial speedup and wall-clock GEMM benchmarks."""

import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .. import bitkernel
from ..nn.model import FULL_PRECISION
from ..quant import dequantize, quantize_matrix, quantize_with_scales, residual_scales

# one 128-bit SIMD lane of float32 work versus packed bit-planes: three bit
# operations (xnor, popcount, accumulate) per plane pair
SIMD_BITS = 128
OPS_PER_PLANE_PAIR = 3


def ideal_speedup(weight_bits, neuron_bits):
    if weight_bits < 1 or neuron_bits < 1:
        raise ValueError("bit widths must be >= 1")
    return max(1.0, SIMD_BITS / (OPS_PER_PLANE_PAIR * weight_bits * neuron_bits))


@dataclass(frozen=True)
class SpeedupModel:
    weight_bits: int
    neuron_bits: int

    @property
    def ideal(self):
        return ideal_speedup(self.weight_bits, self.neuron_bits)

    @property
    def clamped(self):
        return OPS_PER_PLANE_PAIR * self.weight_bits * self.neuron_bits >= SIMD_BITS


@dataclass(frozen=True)
class BenchResult:
    m: int
    n: int
    p: int
    weight_bits: int
    neuron_bits: int
    time_quantized: float  # median seconds per call
    time_dense: float
    speedup: float  # time_dense / time_quantized
    reps: int
    spread_quantized: float  # interquartile range, seconds
    spread_dense: float
    ideal_speedup: float
    backend: str
    threads: int

    def to_dict(self):
        return asdict(self)


def _iqr(times):
    if len(times) < 2:
        return 0.0
    q = statistics.quantiles(times, n=4)
    return q[2] - q[0]


def _time(fn, reps, warmup):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def quantized_layer_fn(x, w, weight_bits, neuron_bits, threads):
    """Inference-time product ``x @ w.T`` at the given precisions.

    Weights are packed ahead of time and activation scales are frozen, as in
    a deployed model; the returned closure quantizes and packs ``x`` on every
    call. A full-precision side falls back to the dense kernel.
    """
    quant_w = weight_bits < FULL_PRECISION
    quant_x = neuron_bits < FULL_PRECISION
    wq = quantize_matrix(w, weight_bits) if quant_w else None
    scales = residual_scales(x, neuron_bits) if quant_x else None
    w_dense_t = np.ascontiguousarray((dequantize(wq) if quant_w else w).T.astype(np.float32))

    if quant_x and quant_w:
        return lambda: bitkernel.gemm_quantized(quantize_with_scales(x, scales, threads), wq, threads)
    if quant_x:
        return lambda: bitkernel.gemm_dense(
            dequantize(quantize_with_scales(x, scales, threads)).astype(np.float32), w_dense_t, threads
        )
    return lambda: bitkernel.gemm_dense(x, w_dense_t, threads)


def bench_gemm(m, n, p, weight_bits, neuron_bits, reps=10, warmup=2, threads=None, seed=0):
    """Median wall time of the quantized product against the dense float32 kernel.

    Both sides run this package's own compiled (or fallback) kernels on the
    same shapes. The dense weights are transposed once, outside the timing.
    """
    if min(m, n, p) < 1:
        raise ValueError("dimensions must be >= 1")
    reps = max(10, int(reps))
    threads = bitkernel.default_threads() if threads is None else threads
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, n)).astype(np.float32)
    w = rng.standard_normal((p, n)).astype(np.float32)
    w_t = np.ascontiguousarray(w.T)

    quant = quantized_layer_fn(x, w, weight_bits, neuron_bits, threads)
    tq = _time(quant, reps, warmup)
    td = _time(lambda: bitkernel.gemm_dense(x, w_t, threads), reps, warmup)
    mq, md = statistics.median(tq), statistics.median(td)
    return BenchResult(
        m, n, p, weight_bits, neuron_bits, mq, md, md / mq, reps, _iqr(tq), _iqr(td),
        ideal_speedup(weight_bits, neuron_bits), bitkernel.get_backend(), threads,
    )


def time_features(seconds=1.0, reps=10, sample_rate=16000, context=7, seed=0):
    """Median seconds to turn ``seconds`` of audio into stacked log-power features."""
    from ..dsp import AudioClip, StftParams, stack_context, stft

    params = StftParams(sample_rate=sample_rate)
    clip = AudioClip(np.random.default_rng(seed).standard_normal(int(seconds * sample_rate)) * 0.1, sample_rate)
    times = _time(lambda: stack_context(stft(clip, params).log_power(), context), max(10, reps), 1)
    return statistics.median(times)
