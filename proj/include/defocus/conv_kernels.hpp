#pragma once

// Direct 3x3 convolution kernels, NCHW, stride 1, inputs pre-padded by 1.
// The AVX-512 path keeps one output row in registers while sweeping all
// (channel, tap) pairs, which is what makes CPU training viable here;
// the generic path is the fallback and the double-precision path.

#include <cstdint>
#include <cstring>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace defocus::detail {

// out[co,y,x] = bias[co] + sum_{ci,k} w[co,ci,k] * xpad[ci, y+k/3, x+k%3]
// for one sample. `bias` may be null (accumulators start at zero).
template <typename T>
void conv3x3_fwd_generic(const T* xpad, int Wp, int cin, const T* w, const T* bias, T* out,
                         int h, int ww, int cout) {
    const int64_t plane = int64_t(h + 2) * Wp;
    for (int co = 0; co < cout; ++co) {
        T* acc = out + int64_t(co) * h * ww;
        const T b = bias ? bias[co] : T(0);
        for (int64_t i = 0; i < int64_t(h) * ww; ++i) acc[i] = b;
        for (int ci = 0; ci < cin; ++ci) {
            const T* xp = xpad + ci * plane;
            const T* wk = w + (int64_t(co) * cin + ci) * 9;
            for (int y = 0; y < h; ++y) {
                T* arow = acc + int64_t(y) * ww;
                for (int k = 0; k < 9; ++k) {
                    const T wv = wk[k];
                    const T* xrow = xp + int64_t(y + k / 3) * Wp + k % 3;
                    for (int x = 0; x < ww; ++x) arow[x] += wv * xrow[x];
                }
            }
        }
    }
}

// dw[co,ci,k] += sum_{y,x} dy[co,y,x] * xpad[ci, y+k/3, x+k%3] for one sample.
template <typename T>
void conv3x3_dw_generic(const T* xpad, int Wp, int cin, const T* dy, T* dw, int h, int ww,
                        int cout) {
    const int64_t plane = int64_t(h + 2) * Wp;
    for (int co = 0; co < cout; ++co) {
        const T* dyc = dy + int64_t(co) * h * ww;
        for (int ci = 0; ci < cin; ++ci) {
            const T* xp = xpad + ci * plane;
            T* wk = dw + (int64_t(co) * cin + ci) * 9;
            for (int k = 0; k < 9; ++k) {
                const T* xs = xp + int64_t(k / 3) * Wp + k % 3;
                T s = T(0);
                for (int y = 0; y < h; ++y) {
                    const T* a = dyc + int64_t(y) * ww;
                    const T* b = xs + int64_t(y) * Wp;
                    for (int x = 0; x < ww; ++x) s += a[x] * b[x];
                }
                wk[k] += s;
            }
        }
    }
}

#if defined(__AVX512F__)

inline void conv3x3_fwd_f32(const float* xpad, int Wp, int cin, const float* w,
                            const float* bias, float* out, int h, int ww, int cout) {
    const int64_t plane = int64_t(h + 2) * Wp;
    for (int co = 0; co < cout; ++co) {
        const float* wco = w + int64_t(co) * cin * 9;
        const __m512 bv = _mm512_set1_ps(bias ? bias[co] : 0.0f);
        for (int y = 0; y < h; ++y) {
            float* orow = out + (int64_t(co) * h + y) * ww;
            int x0 = 0;
            for (; x0 + 64 <= ww; x0 += 64) {
                __m512 a0 = bv, a1 = bv, a2 = bv, a3 = bv;
                for (int ci = 0; ci < cin; ++ci) {
                    const float* xp = xpad + ci * plane + int64_t(y) * Wp + x0;
                    const float* wk = wco + ci * 9;
                    for (int k = 0; k < 9; ++k) {
                        const __m512 wv = _mm512_set1_ps(wk[k]);
                        const float* xr = xp + int64_t(k / 3) * Wp + k % 3;
                        a0 = _mm512_fmadd_ps(wv, _mm512_loadu_ps(xr), a0);
                        a1 = _mm512_fmadd_ps(wv, _mm512_loadu_ps(xr + 16), a1);
                        a2 = _mm512_fmadd_ps(wv, _mm512_loadu_ps(xr + 32), a2);
                        a3 = _mm512_fmadd_ps(wv, _mm512_loadu_ps(xr + 48), a3);
                    }
                }
                _mm512_storeu_ps(orow + x0, a0);
                _mm512_storeu_ps(orow + x0 + 16, a1);
                _mm512_storeu_ps(orow + x0 + 32, a2);
                _mm512_storeu_ps(orow + x0 + 48, a3);
            }
            for (; x0 < ww; x0 += 16) {
                const int rem = ww - x0;
                const __mmask16 m = rem >= 16 ? 0xFFFF : static_cast<__mmask16>((1u << rem) - 1);
                __m512 a0 = bv;
                for (int ci = 0; ci < cin; ++ci) {
                    const float* xp = xpad + ci * plane + int64_t(y) * Wp + x0;
                    const float* wk = wco + ci * 9;
                    for (int k = 0; k < 9; ++k) {
                        const __m512 xv = _mm512_maskz_loadu_ps(m, xp + int64_t(k / 3) * Wp + k % 3);
                        a0 = _mm512_fmadd_ps(_mm512_set1_ps(wk[k]), xv, a0);
                    }
                }
                _mm512_mask_storeu_ps(orow + x0, m, a0);
            }
        }
    }
}

inline void conv3x3_dw_f32(const float* xpad, int Wp, int cin, const float* dy, float* dw,
                           int h, int ww, int cout) {
    const int64_t plane = int64_t(h + 2) * Wp;
    for (int co = 0; co < cout; ++co) {
        const float* dyc = dy + int64_t(co) * h * ww;
        for (int ci = 0; ci < cin; ++ci) {
            const float* xp = xpad + ci * plane;
            __m512 acc[9];
            for (auto& a : acc) a = _mm512_setzero_ps();
            for (int y = 0; y < h; ++y) {
                const float* drow = dyc + int64_t(y) * ww;
                const float* xrow = xp + int64_t(y) * Wp;
                for (int x0 = 0; x0 < ww; x0 += 16) {
                    const int rem = ww - x0;
                    const __mmask16 m = rem >= 16 ? 0xFFFF : static_cast<__mmask16>((1u << rem) - 1);
                    const __m512 dv = _mm512_maskz_loadu_ps(m, drow + x0);
                    for (int k = 0; k < 9; ++k) {
                        const __m512 xv =
                            _mm512_maskz_loadu_ps(m, xrow + int64_t(k / 3) * Wp + k % 3 + x0);
                        acc[k] = _mm512_fmadd_ps(dv, xv, acc[k]);
                    }
                }
            }
            float* wk = dw + (int64_t(co) * cin + ci) * 9;
            for (int k = 0; k < 9; ++k) wk[k] += _mm512_reduce_add_ps(acc[k]);
        }
    }
}

#endif  // __AVX512F__

template <typename T>
void conv3x3_fwd(const T* xpad, int Wp, int cin, const T* w, const T* bias, T* out, int h,
                 int ww, int cout) {
#if defined(__AVX512F__)
    if constexpr (std::is_same_v<T, float>) {
        conv3x3_fwd_f32(xpad, Wp, cin, w, bias, out, h, ww, cout);
        return;
    }
#endif
    conv3x3_fwd_generic(xpad, Wp, cin, w, bias, out, h, ww, cout);
}

template <typename T>
void conv3x3_dw(const T* xpad, int Wp, int cin, const T* dy, T* dw, int h, int ww, int cout) {
#if defined(__AVX512F__)
    if constexpr (std::is_same_v<T, float>) {
        conv3x3_dw_f32(xpad, Wp, cin, dy, dw, h, ww, cout);
        return;
    }
#endif
    conv3x3_dw_generic(xpad, Wp, cin, dy, dw, h, ww, cout);
}

}  // namespace defocus::detail
