"""Pure numpy kernels. Same signatures and results as the compiled ``_ckernels``."""

import numpy as np

WORD_BITS = 64


def words_for(n):
    return (n + WORD_BITS - 1) // WORD_BITS


def pack_bits(bits, out):
    """Pack a (rows, n) boolean matrix into ``out`` of shape (rows, words).

    Bit ``c % 64`` of word ``c // 64`` holds column ``c``; padding stays zero.
    """
    rows, n = bits.shape
    nbytes = out.shape[1] * 8
    packed = np.packbits(bits, axis=1, bitorder="little")
    buf = np.zeros((rows, nbytes), dtype=np.uint8)
    buf[:, : packed.shape[1]] = packed
    out[...] = buf.view("<u8")


def quantize_pack(x, scales, out, threads=1):
    """Residual-sign planes of ``x`` under fixed per-level scales, packed into ``out``.

    ``out`` has shape (K, rows, words) and is overwritten.
    """
    r = np.array(x, dtype=np.float64, copy=True)
    for k, alpha in enumerate(scales):
        pos = r >= 0
        pack_bits(pos, out[k])
        r -= np.where(pos, alpha, -alpha)


def xnor_dot(a, b, n):
    # padding bits are zero in both operands, so XOR leaves them zero
    mism = int(np.bitwise_count(np.bitwise_xor(a, b)).sum())
    return n - 2 * mism


def gemm_xnor(xp, xs, wp, ws, n, out, threads=1):
    kx, m, words = xp.shape
    kw, p, _ = wp.shape
    # bound the (m_chunk, p, words) temporary to ~32 MB
    chunk = max(1, (1 << 22) // max(1, p * words))
    out[...] = 0.0
    for i0 in range(0, m, chunk):
        i1 = min(m, i0 + chunk)
        for u in range(kx):
            xa = xp[u, i0:i1, None, :]
            for v in range(kw):
                mism = np.bitwise_count(xa ^ wp[v, None, :, :]).sum(axis=2, dtype=np.int64)
                out[i0:i1] += (xs[u] * ws[v]) * (n - 2 * mism)


def gemm_dense(a, b, out, threads=1):
    np.matmul(a, b, out=out)
