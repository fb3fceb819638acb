"""Residual-error-mean binarization into K bit planes.

Level ``k`` takes the sign of the current residual (``sign(0) = +1``) and a
scale equal to the mean absolute residual; the residual is then updated by
subtracting ``scale * sign``. Scales are shared by every element of the
tensor, which keeps the dequantized value linear in the bit planes:
``x_hat = sum_k scale_k * sign_k``.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .bitkernel import pack_sign_rows, quantize_pack, unpack_sign_rows, words_for


class QuantizationError(ValueError):
    pass


def _check_values(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise QuantizationError("empty tensor")
    finite = np.isfinite(arr)
    if not finite.all():
        idx = int(np.flatnonzero(~finite.reshape(-1))[0])
        raise QuantizationError(f"non-finite value at index {idx}")
    return arr


def _check_bits(bits):
    if int(bits) != bits or bits < 1:
        raise QuantizationError(f"bit width must be a positive integer, got {bits!r}")
    return int(bits)


def residual_recurrence(values, bits):
    """Run the recurrence on a flat array; returns (scales, positive-mask per level).

    ``positive[k]`` is True where level ``k`` assigns +1.
    """
    r = np.array(values, dtype=np.float64).reshape(-1)
    scales = np.empty(bits, dtype=np.float64)
    positive = np.empty((bits, r.size), dtype=bool)
    for k in range(bits):
        alpha = float(np.mean(np.abs(r)))
        pos = r >= 0
        scales[k] = alpha
        positive[k] = pos
        r -= np.where(pos, alpha, -alpha)
    return scales, positive


def residual_scales(values, bits):
    """Only the per-level scales of :func:`residual_recurrence`."""
    arr = _check_values(values)
    return residual_recurrence(arr, _check_bits(bits))[0]


@dataclass(frozen=True)
class QuantizedVector:
    planes: np.ndarray  # (K, n) int8 of ±1
    scales: np.ndarray  # (K,) float64

    @property
    def bits(self):
        return int(self.scales.size)

    @property
    def length(self):
        return int(self.planes.shape[1])


@dataclass(frozen=True)
class QuantizedTensor:
    """K packed sign planes of a rows×cols matrix plus K whole-tensor scales.

    ``planes`` has shape (K, rows, words) with row-major packing, bit ``c % 64``
    of word ``c // 64`` holding column ``c`` (set = +1). Padding bits are zero.
    """

    rows: int
    cols: int
    scales: np.ndarray
    planes: np.ndarray

    @property
    def bits(self):
        return int(self.scales.size)

    @property
    def words_per_row(self):
        return words_for(self.cols)

    def signs(self, k):
        """Level ``k`` as an int8 (rows, cols) array of ±1."""
        return unpack_sign_rows(self.planes[k], self.cols)

    def to_bytes(self):
        header = struct.pack("<III", self.rows, self.cols, self.bits)
        return (
            header
            + np.ascontiguousarray(self.scales, dtype="<f8").tobytes()
            + np.ascontiguousarray(self.planes, dtype="<u8").tobytes()
        )

    @classmethod
    def from_bytes(cls, buf, offset=0):
        """Parse one tensor starting at ``offset``; returns (tensor, next_offset)."""
        rows, cols, bits = struct.unpack_from("<III", buf, offset)
        offset += 12
        scales = np.frombuffer(buf, dtype="<f8", count=bits, offset=offset).astype(np.float64)
        offset += 8 * bits
        count = bits * rows * words_for(cols)
        planes = np.frombuffer(buf, dtype="<u8", count=count, offset=offset)
        planes = planes.astype(np.uint64).reshape(bits, rows, words_for(cols))
        offset += 8 * count
        return cls(rows, cols, scales, planes), offset


def quantize_residual(values, bits):
    arr = _check_values(values).reshape(-1)
    scales, positive = residual_recurrence(arr, _check_bits(bits))
    planes = np.where(positive, 1, -1).astype(np.int8)
    return QuantizedVector(planes=planes, scales=scales)


def quantize_matrix(m, bits):
    """Quantize a matrix with scales computed over all of its elements jointly."""
    arr = _check_values(m)
    if arr.ndim != 2:
        raise QuantizationError(f"expected a 2-D matrix, got shape {arr.shape}")
    rows, cols = arr.shape
    scales, positive = residual_recurrence(arr, _check_bits(bits))
    planes = np.stack([pack_sign_rows(p.reshape(rows, cols)) for p in positive])
    return QuantizedTensor(rows, cols, scales, planes)


def quantize_with_scales(m, scales, threads=None):
    """Quantize with frozen per-level scales (inference-time activations).

    Runs the same sign/subtract recurrence as :func:`quantize_matrix` but does
    not recompute the scales, so it costs one compare and one add per element
    per level.
    """
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise QuantizationError(f"expected a 2-D matrix, got shape {arr.shape}")
    scales = np.asarray(scales, dtype=np.float64)
    planes = quantize_pack(arr, scales, threads=threads)
    return QuantizedTensor(arr.shape[0], arr.shape[1], scales.copy(), planes)


def dequantize(q):
    if isinstance(q, QuantizedVector):
        return q.scales @ q.planes.astype(np.float64)
    out = np.zeros((q.rows, q.cols), dtype=np.float64)
    for k in range(q.bits):
        out += q.scales[k] * q.signs(k)
    return out


def quantization_error(values, bits):
    arr = _check_values(values).reshape(-1)
    return float(np.linalg.norm(arr - dequantize(quantize_residual(arr, bits))))


def fake_quantize(x, bits):
    """Dequantized ``x`` at ``bits`` with scales computed from ``x`` itself (float64)."""
    arr = np.asarray(x, dtype=np.float64)
    scales, positive = residual_recurrence(arr, bits)
    out = np.zeros(arr.size, dtype=np.float64)
    for k in range(bits):
        out += np.where(positive[k], scales[k], -scales[k])
    return out.reshape(arr.shape)


def fake_quantize_frozen(x, scales):
    """Dequantized ``x`` under fixed scales; matches :func:`quantize_with_scales`."""
    r = np.array(x, dtype=np.float64, copy=True)
    out = np.zeros_like(r)
    for alpha in scales:
        step = np.where(r >= 0, alpha, -alpha)
        out += step
        r -= step
    return out
