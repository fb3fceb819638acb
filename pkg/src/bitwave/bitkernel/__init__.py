"""Bit-packed linear algebra: XNOR/popcount dot products and bit-plane GEMM.

Two interchangeable backends implement the inner loops:

``compiled``
    Cython extension ``_ckernels`` (OpenMP over output rows).
``python``
    numpy fallback ``_pykernels``.

The compiled backend is selected at import when it is importable, unless
``BITWAVE_BACKEND=python`` is set. :func:`set_backend` switches at runtime.
"""

import os
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

WORD_BITS = 64

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels


def _default_backend():
    requested = os.environ.get("BITWAVE_BACKEND", "").strip().lower()
    if requested:
        if requested not in _BACKENDS:
            raise ImportError(f"BITWAVE_BACKEND={requested!r} is not available; have {sorted(_BACKENDS)}")
        return requested
    return "compiled" if "compiled" in _BACKENDS else "python"


_active = _default_backend()


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {sorted(_BACKENDS)}")
    _active = name


@contextmanager
def use_backend(name):
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _impl():
    return _BACKENDS[_active]


def default_threads():
    """Thread cap from ``BITWAVE_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("BITWAVE_THREADS", "1")))
    except ValueError:
        return 1


def words_for(n):
    return (n + WORD_BITS - 1) // WORD_BITS


@dataclass(frozen=True)
class BitPlane:
    """Packed ±1 vector: bit ``i`` set iff element ``i`` is +1."""

    words: np.ndarray
    length: int

    def __post_init__(self):
        if self.words.dtype != np.uint64 or self.words.ndim != 1:
            raise ValueError("words must be a 1-D uint64 array")
        if self.words.size != words_for(self.length):
            raise ValueError(f"{self.words.size} words cannot hold {self.length} elements")


def _as_signs(signs):
    arr = np.asarray(signs)
    if arr.size and not np.all((arr == 1) | (arr == -1)):
        bad = int(np.flatnonzero((arr != 1) & (arr != -1))[0])
        raise ValueError(f"sign vector must contain only -1/+1 (index {bad} is {arr.flat[bad]!r})")
    return arr


def pack_sign_rows(positive):
    """Pack a (rows, n) boolean matrix (True = +1) into (rows, words) uint64."""
    bits = np.ascontiguousarray(positive, dtype=np.uint8)
    if bits.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    out = np.zeros((bits.shape[0], words_for(bits.shape[1])), dtype=np.uint64)
    _impl().pack_bits(bits, out)
    return out


def unpack_sign_rows(words, n):
    """Inverse of :func:`pack_sign_rows` returning int8 ±1 values."""
    words = np.ascontiguousarray(words, dtype="<u8")
    bits = np.unpackbits(words.view(np.uint8), axis=-1, count=n, bitorder="little")
    return np.where(bits.astype(bool), 1, -1).astype(np.int8)


def pack_signs(signs):
    arr = _as_signs(signs).reshape(-1)
    return BitPlane(pack_sign_rows((arr > 0)[None, :])[0], int(arr.size))


def unpack_signs(plane):
    return unpack_sign_rows(plane.words[None, :], plane.length)[0]


def xnor_popcount_dot(a, b):
    """±1 dot product of two packed planes, ``2*popcount(XNOR(a, b)) - n``."""
    if a.length != b.length:
        raise ValueError(f"length mismatch: {a.length} vs {b.length}")
    return int(_impl().xnor_dot(a.words, b.words, a.length))


def gemm_quantized(x, w, threads=None):
    """Product of quantized activations ``x`` (m×n) and weights ``w`` (p×n).

    ``out[i, j] = sum_u sum_v x.scales[u] * w.scales[v] * dot(x.plane[u][i], w.plane[v][j])``
    with every plane-pair dot computed on packed words in integer arithmetic.
    Returns a float64 (m, p) array.
    """
    if x.cols != w.cols:
        raise ValueError(f"inner dimension mismatch: {x.cols} vs {w.cols}")
    out = np.empty((x.rows, w.rows), dtype=np.float64)
    _impl().gemm_xnor(
        x.planes,
        np.ascontiguousarray(x.scales, dtype=np.float64),
        w.planes,
        np.ascontiguousarray(w.scales, dtype=np.float64),
        x.cols,
        out,
        threads or default_threads(),
    )
    return out


def gemm_dense(a, b, threads=None):
    """Textbook ``a @ b``. float32 inputs stay float32; anything else runs in float64."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("gemm_dense expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    dtype = np.float32 if a.dtype == np.float32 and b.dtype == np.float32 else np.float64
    a = np.ascontiguousarray(a, dtype=dtype)
    b = np.ascontiguousarray(b, dtype=dtype)
    out = np.empty((a.shape[0], b.shape[1]), dtype=dtype)
    _impl().gemm_dense(a, b, out, threads or default_threads())
    return out


def quantize_pack(x, scales, threads=None):
    """Pack residual-sign planes of ``x`` under fixed scales; returns (K, rows, words)."""
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    x = np.ascontiguousarray(x)
    scales = np.ascontiguousarray(scales, dtype=np.float64)
    out = np.empty((scales.size, x.shape[0], words_for(x.shape[1])), dtype=np.uint64)
    _impl().quantize_pack(x, scales, out, threads or default_threads())
    return out


__all__ = [
    "BitPlane",
    "WORD_BITS",
    "available_backends",
    "default_threads",
    "gemm_dense",
    "gemm_quantized",
    "get_backend",
    "pack_sign_rows",
    "pack_signs",
    "quantize_pack",
    "set_backend",
    "unpack_sign_rows",
    "unpack_signs",
    "use_backend",
    "words_for",
    "xnor_popcount_dot",
]
