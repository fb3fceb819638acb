import itertools

import numpy as np
import pytest

from bitwave import bitkernel as bk
from bitwave.quant import dequantize, quantize_matrix


def brute_dot(a, b):
    return int(np.dot(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))


def test_pack_examples(backend):
    p = bk.pack_signs([1] * 64)
    assert p.words.tolist() == [0xFFFFFFFFFFFFFFFF] and p.length == 64
    assert bk.pack_signs([-1] * 64).words.tolist() == [0]
    p = bk.pack_signs([1, -1, 1])
    assert p.words.tolist() == [0b101] and p.length == 3


def test_pack_rejects_non_signs():
    with pytest.raises(ValueError):
        bk.pack_signs([1, 0, -1])


def test_pack_round_trip_all_lengths(rng, backend):
    for n in range(1, 131):
        s = rng.choice([-1, 1], size=n)
        plane = bk.pack_signs(s)
        assert plane.words.size == (n + 63) // 64
        np.testing.assert_array_equal(bk.unpack_signs(plane), s)
        if n % 64:
            assert int(plane.words[-1]) >> (n % 64) == 0


def test_dot_examples(backend):
    ones = bk.pack_signs([1] * 64)
    assert bk.xnor_popcount_dot(ones, ones) == 64
    assert bk.xnor_popcount_dot(bk.pack_signs([1, 1, 1, 1]), bk.pack_signs([-1, -1, 1, 1])) == 0
    assert bk.xnor_popcount_dot(bk.pack_signs([1] * 65), bk.pack_signs([-1] * 65)) == -65


def test_dot_length_mismatch():
    with pytest.raises(ValueError):
        bk.xnor_popcount_dot(bk.pack_signs([1, 1]), bk.pack_signs([1]))


@pytest.mark.parametrize("n", range(1, 11))
def test_dot_exhaustive(n, backend):
    vecs = [np.array(v) for v in itertools.product([-1, 1], repeat=n)]
    planes = [bk.pack_signs(v) for v in vecs]
    step = max(1, len(vecs) // 64)  # all a against a strided subset of b keeps n=10 fast
    for a, pa in zip(vecs, planes):
        for b, pb in zip(vecs[::step], planes[::step]):
            assert bk.xnor_popcount_dot(pa, pb) == brute_dot(a, b)


@pytest.mark.parametrize("n", [63, 64, 65, 127, 128, 129])
def test_dot_word_boundaries(n, rng, backend):
    for _ in range(50):
        a = rng.choice([-1, 1], size=n)
        b = rng.choice([-1, 1], size=n)
        pa, pb = bk.pack_signs(a), bk.pack_signs(b)
        d = bk.xnor_popcount_dot(pa, pb)
        assert d == brute_dot(a, b)
        assert d == bk.xnor_popcount_dot(pb, pa)
        assert bk.xnor_popcount_dot(pa, pa) == n
        assert (d - n) % 2 == 0


def test_gemm_scalar_example(backend):
    x = quantize_matrix(np.array([[1.5]]), 2)
    assert x.scales.tolist() == [1.5, 0.0]
    # scales as in the worked example: alpha = [1.0, 0.5], both signs +
    from bitwave.quant import QuantizedTensor

    planes = np.ones((2, 1, 1), dtype=np.uint64)
    q = QuantizedTensor(1, 1, np.array([1.0, 0.5]), planes)
    assert bk.gemm_quantized(q, q)[0, 0] == 2.25


def test_gemm_zero_scales(backend):
    from bitwave.quant import QuantizedTensor

    q = QuantizedTensor(2, 3, np.zeros(2), np.ones((2, 2, 1), dtype=np.uint64))
    w = quantize_matrix(np.ones((4, 3)), 1)
    np.testing.assert_array_equal(bk.gemm_quantized(q, w), np.zeros((2, 4)))


def test_gemm_dimension_mismatch(backend):
    with pytest.raises(ValueError):
        bk.gemm_quantized(quantize_matrix(np.ones((2, 3)), 1), quantize_matrix(np.ones((2, 4)), 1))
    with pytest.raises(ValueError):
        bk.gemm_dense(np.ones((2, 3)), np.ones((4, 2)))


@pytest.mark.parametrize("wbits,nbits", list(itertools.product([1, 2, 4, 8], repeat=2)))
def test_gemm_matches_dense_oracle(wbits, nbits, rng, backend):
    x = quantize_matrix(rng.standard_normal((8, 12)), nbits)
    w = quantize_matrix(rng.standard_normal((5, 12)), wbits)
    got = bk.gemm_quantized(x, w)
    ref = bk.gemm_dense(dequantize(x), dequantize(w).T)
    assert np.linalg.norm(got - ref) <= 1e-6 * np.linalg.norm(ref)


def test_gemm_dense_examples(rng, backend):
    m = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(bk.gemm_dense(np.eye(4), m), m)
    assert bk.gemm_dense(np.array([[2.0]]), np.array([[3.0]])).tolist() == [[6.0]]
    a, b = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    brute = [[sum(a[i, k] * b[k, j] for k in range(4)) for j in range(4)] for i in range(4)]
    np.testing.assert_allclose(bk.gemm_dense(a, b), brute, rtol=1e-12)
    a32, b32 = a.astype(np.float32), b.astype(np.float32)
    out = bk.gemm_dense(a32, b32)
    assert out.dtype == np.float32
    np.testing.assert_allclose(out, brute, rtol=1e-5)


def test_backends_agree(rng):
    if len(bk.available_backends()) < 2:
        pytest.skip("compiled backend not built")
    x = rng.standard_normal((33, 200)).astype(np.float32)
    w = quantize_matrix(rng.standard_normal((17, 200)), 2)
    scales = np.array([0.8, 0.4, 0.2])
    results = {}
    for name in bk.available_backends():
        with bk.use_backend(name):
            planes = bk.quantize_pack(x, scales)
            from bitwave.quant import QuantizedTensor

            xq = QuantizedTensor(33, 200, scales, planes)
            results[name] = (planes, bk.gemm_quantized(xq, w), bk.gemm_dense(x, w.signs(0).T.astype(np.float32)))
    a, b = results["compiled"], results["python"]
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-5, atol=1e-4)


def test_thread_count_does_not_change_result(rng):
    x = quantize_matrix(rng.standard_normal((40, 100)), 2)
    w = quantize_matrix(rng.standard_normal((30, 100)), 2)
    np.testing.assert_array_equal(bk.gemm_quantized(x, w, threads=1), bk.gemm_quantized(x, w, threads=3))
