/* Bit-plane kernels shared by _ckernels.pyx.
 *
 * AVX-512 (F + VPOPCNTDQ) paths are used when the compiler targets them;
 * the scalar paths produce identical results.
 */
#ifndef BITWAVE_BITOPS_H
#define BITWAVE_BITOPS_H
#include <stdint.h>
#include <stddef.h>
#if defined(__AVX512F__) && defined(__AVX512VPOPCNTDQ__)
#include <immintrin.h>
#define BW_AVX512 1
#endif

#define BW_JB 4

static inline int64_t bw_xor_popcount(const uint64_t* a, const uint64_t* b, ptrdiff_t words)
{
    int64_t s = 0;
    for (ptrdiff_t w = 0; w < words; ++w) s += __builtin_popcountll(a[w] ^ b[w]);
    return s;
}

/* out[i, j] for rows i0..i1 of the activations; four weight rows share each activation load */

static void bw_gemm_xnor_rows(const uint64_t* xp, const double* xs, int kx, ptrdiff_t m,
                              const uint64_t* wp, const double* ws, int kw, ptrdiff_t p,
                              ptrdiff_t words, ptrdiff_t n, double* out,
                              ptrdiff_t i0, ptrdiff_t i1)
{
    const ptrdiff_t xplane = m * words, wplane = p * words;
    for (ptrdiff_t i = i0; i < i1; ++i) {
        for (ptrdiff_t j = 0; j < p; j += BW_JB) {
            ptrdiff_t jb = p - j < BW_JB ? p - j : BW_JB;
            double tot[BW_JB] = {0.0, 0.0, 0.0, 0.0};
            for (int u = 0; u < kx; ++u) {
                const uint64_t* xr = xp + u * xplane + i * words;
                for (int v = 0; v < kw; ++v) {
                    const uint64_t* wr[BW_JB];
                    for (int t = 0; t < BW_JB; ++t)
                        wr[t] = wp + v * wplane + (j + (t < jb ? t : 0)) * words;
                    int64_t cnt[BW_JB];
#ifdef BW_AVX512
                    __m512i a0 = _mm512_setzero_si512(), a1 = a0, a2 = a0, a3 = a0;
                    ptrdiff_t w = 0;
                    for (; w + 8 <= words; w += 8) {
                        __m512i x = _mm512_loadu_si512((const void*)(xr + w));
                        a0 = _mm512_add_epi64(a0, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_loadu_si512((const void*)(wr[0] + w)))));
                        a1 = _mm512_add_epi64(a1, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_loadu_si512((const void*)(wr[1] + w)))));
                        a2 = _mm512_add_epi64(a2, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_loadu_si512((const void*)(wr[2] + w)))));
                        a3 = _mm512_add_epi64(a3, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_loadu_si512((const void*)(wr[3] + w)))));
                    }
                    if (w < words) {
                        __mmask8 mk = (__mmask8)((1u << (words - w)) - 1u);
                        __m512i x = _mm512_maskz_loadu_epi64(mk, xr + w);
                        a0 = _mm512_add_epi64(a0, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_maskz_loadu_epi64(mk, wr[0] + w))));
                        a1 = _mm512_add_epi64(a1, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_maskz_loadu_epi64(mk, wr[1] + w))));
                        a2 = _mm512_add_epi64(a2, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_maskz_loadu_epi64(mk, wr[2] + w))));
                        a3 = _mm512_add_epi64(a3, _mm512_popcnt_epi64(_mm512_xor_si512(x, _mm512_maskz_loadu_epi64(mk, wr[3] + w))));
                    }
                    cnt[0] = _mm512_reduce_add_epi64(a0);
                    cnt[1] = _mm512_reduce_add_epi64(a1);
                    cnt[2] = _mm512_reduce_add_epi64(a2);
                    cnt[3] = _mm512_reduce_add_epi64(a3);
#else
                    for (int t = 0; t < BW_JB; ++t) cnt[t] = 0;
                    for (ptrdiff_t w = 0; w < words; ++w) {
                        uint64_t x = xr[w];
                        for (int t = 0; t < BW_JB; ++t) cnt[t] += __builtin_popcountll(x ^ wr[t][w]);
                    }
#endif
                    const double ab = xs[u] * ws[v];
                    for (int t = 0; t < BW_JB; ++t) tot[t] += ab * (double)(n - 2 * cnt[t]);
                }
            }
            for (ptrdiff_t t = 0; t < jb; ++t) out[i * p + j + t] = tot[t];
        }
    }
}

#define BW_QROW(NAME, T, LOAD8)                                                              \
static void NAME(const T* x, ptrdiff_t n, const double* scales, int K,                        \
                 uint64_t* out, ptrdiff_t stride)                                             \
{                                                                                            \
    const ptrdiff_t words = (n + 63) >> 6;                                                   \
    for (ptrdiff_t w = 0; w < words; ++w) {                                                  \
        uint64_t acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};                                          \
        const ptrdiff_t base = w << 6;                                                       \
        const ptrdiff_t cnt = n - base < 64 ? n - base : 64;                                 \
        BW_QROW_BODY(LOAD8)                                                                  \
        for (int k = 0; k < K; ++k) out[k * stride + w] = acc[k];                            \
    }                                                                                        \
}

#ifdef BW_AVX512
#define BW_QROW_BODY(LOAD8)                                                                  \
        for (ptrdiff_t g = 0; g < cnt; g += 8) {                                             \
            __mmask8 lm = cnt - g >= 8 ? (__mmask8)0xFF : (__mmask8)((1u << (cnt - g)) - 1u); \
            __m512d r = LOAD8(lm, x + base + g);                                             \
            for (int k = 0; k < K; ++k) {                                                    \
                __mmask8 pos = _mm512_cmp_pd_mask(r, _mm512_setzero_pd(), _CMP_GE_OQ) & lm;  \
                acc[k] |= (uint64_t)pos << g;                                                \
                __m512d s = _mm512_set1_pd(scales[k]);                                       \
                __m512d step = _mm512_mask_blend_pd(pos, _mm512_set1_pd(-scales[k]), s);     \
                r = _mm512_sub_pd(r, step);                                                  \
            }                                                                                \
        }
#define BW_LOAD_F64(m, ptr) _mm512_maskz_loadu_pd((m), (ptr))
#define BW_LOAD_F32(m, ptr) _mm512_cvtps_pd(_mm256_maskz_loadu_ps((m), (ptr)))
#else
#define BW_QROW_BODY(LOAD8)                                                                  \
        for (ptrdiff_t b = 0; b < cnt; ++b) {                                                \
            double r = (double)x[base + b];                                                  \
            for (int k = 0; k < K; ++k) {                                                    \
                uint64_t pos = r >= 0;                                                       \
                acc[k] |= pos << b;                                                          \
                r = r - (pos ? scales[k] : -scales[k]);                                      \
            }                                                                                \
        }
#define BW_LOAD_F64(m, ptr) 0
#define BW_LOAD_F32(m, ptr) 0
#endif

BW_QROW(bw_quantize_row_f64, double, BW_LOAD_F64)
BW_QROW(bw_quantize_row_f32, float, BW_LOAD_F32)

#endif
