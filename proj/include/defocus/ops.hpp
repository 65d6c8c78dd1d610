#pragma once

// Differentiable tensor ops. Every op allocates a fresh output, records a
// node on the tape (when one is given and gradient flow can reach the op),
// and computes input gradients only for inputs that need them. Passing a
// null tape runs forward only.

#include <algorithm>
#include <cmath>
#include <cstring>

#include "defocus/conv_kernels.hpp"
#include "defocus/tensor.hpp"

namespace defocus {

namespace detail {

template <typename T>
bool needs_grad(const Tensor<T>& t) {
    return t.requires_grad() || t.tracked();
}

template <typename T>
bool any_tracked(std::initializer_list<const Tensor<T>*> ts) {
    for (auto* t : ts)
        if (needs_grad(*t)) return true;
    return false;
}

// zero-pad a [C,H,W] sample by `p` on each spatial side
template <typename T>
void pad_sample(const T* x, int c, int h, int w, int p, T* xpad) {
    const int hp = h + 2 * p, wp = w + 2 * p;
    std::memset(xpad, 0, sizeof(T) * size_t(c) * hp * wp);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            std::memcpy(xpad + (int64_t(ci) * hp + y + p) * wp + p, x + (int64_t(ci) * h + y) * w,
                        sizeof(T) * size_t(w));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// convolution

/// 2-d convolution, stride 1, zero padding (k-1)/2 so spatial dims are
/// preserved. x: [N,Cin,H,W], w: [Cout,Cin,kh,kw] (kh, kw odd), b: [Cout].
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw InternalError("conv2d expects 4-d input and weight, got " + shape_str(x.shape()) +
                            " and " + shape_str(w.shape()));
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin)
        throw InternalError("conv2d channel mismatch: input " + shape_str(x.shape()) +
                            " has Cin=" + std::to_string(cin) + " but weight " +
                            shape_str(w.shape()) + " expects Cin=" + std::to_string(w.dim(1)));
    if (kh % 2 == 0 || kw % 2 == 0)
        throw InternalError("conv2d requires odd kernel dims, got " + shape_str(w.shape()));
    if (b.numel() != cout)
        throw InternalError("conv2d bias shape " + shape_str(b.shape()) + " does not match Cout=" +
                            std::to_string(cout));

    const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const int hp = h + 2 * ph, wp = ww + 2 * pw;
    Tensor<T> out(Shape{n, cout, h, ww});

    const bool use3x3 = (kh == 3 && kw == 3);
    std::vector<T> xpad(size_t(cin) * hp * wp);
    for (int ni = 0; ni < n; ++ni) {
        const T* xs = x.data() + int64_t(ni) * cin * h * ww;
        T* os = out.data() + int64_t(ni) * cout * h * ww;
        if (use3x3) {
            detail::pad_sample(xs, cin, h, ww, 1, xpad.data());
            detail::conv3x3_fwd(xpad.data(), wp, cin, w.data(), b.data(), os, h, ww, cout);
        } else {
            detail::pad_sample(xs, cin, h, ww, ph, xpad.data());
            for (int co = 0; co < cout; ++co) {
                T* acc = os + int64_t(co) * h * ww;
                for (int64_t i = 0; i < int64_t(h) * ww; ++i) acc[i] = b[co];
                for (int ci = 0; ci < cin; ++ci) {
                    const T* xp = xpad.data() + int64_t(ci) * hp * wp;
                    const T* wk = w.data() + ((int64_t(co) * cin + ci) * kh) * kw;
                    for (int y = 0; y < h; ++y)
                        for (int dy = 0; dy < kh; ++dy)
                            for (int dx = 0; dx < kw; ++dx) {
                                const T wv = wk[dy * kw + dx];
                                const T* xrow = xp + int64_t(y + dy) * wp + dx;
                                T* arow = acc + int64_t(y) * ww;
                                for (int xx = 0; xx < ww; ++xx) arow[xx] += wv * xrow[xx];
                            }
                }
            }
        }
    }

    if (!tape || !detail::any_tracked<T>({&x, &w, &b})) return out;
    out.mark_tracked();
    tape->record(
        out, {x, w, b},
        [tape, x, w, b, out, n, cin, cout, h, ww, kh, kw, ph, pw, hp, wp, use3x3]() mutable {
            const T* dy = out.payload()->grad.data();
            // d/dbias: sum of dy over n, h, w
            if (detail::needs_grad(b)) {
                auto gb = tape->grad_buffer(*b.payload());
                for (int ni = 0; ni < n; ++ni)
                    for (int co = 0; co < cout; ++co) {
                        const T* p = dy + (int64_t(ni) * cout + co) * h * ww;
                        T s = T(0);
                        for (int64_t i = 0; i < int64_t(h) * ww; ++i) s += p[i];
                        gb[co] += s;
                    }
            }
            // d/dweight: correlate padded input with dy
            if (detail::needs_grad(w)) {
                auto gw = tape->grad_buffer(*w.payload());
                std::vector<T> xpad(size_t(cin) * hp * wp);
                for (int ni = 0; ni < n; ++ni) {
                    const T* xs = x.data() + int64_t(ni) * cin * h * ww;
                    const T* dys = dy + int64_t(ni) * cout * h * ww;
                    detail::pad_sample(xs, cin, h, ww, ph, xpad.data());
                    if (use3x3) {
                        detail::conv3x3_dw(xpad.data(), wp, cin, dys, gw.data(), h, ww, cout);
                    } else {
                        for (int co = 0; co < cout; ++co)
                            for (int ci = 0; ci < cin; ++ci)
                                for (int dyk = 0; dyk < kh; ++dyk)
                                    for (int dxk = 0; dxk < kw; ++dxk) {
                                        const T* a = dys + int64_t(co) * h * ww;
                                        const T* xp = xpad.data() + int64_t(ci) * hp * wp +
                                                      int64_t(dyk) * wp + dxk;
                                        T s = T(0);
                                        for (int y = 0; y < h; ++y)
                                            for (int xx = 0; xx < ww; ++xx)
                                                s += a[int64_t(y) * ww + xx] * xp[int64_t(y) * wp + xx];
                                        gw[((int64_t(co) * cin + ci) * kh + dyk) * kw + dxk] += s;
                                    }
                    }
                }
            }
            // d/dinput: convolve dy with channel-transposed, spatially flipped weights
            if (detail::needs_grad(x)) {
                auto gx = tape->grad_buffer(*x.payload());
                std::vector<T> wt(size_t(cout) * cin * kh * kw);
                for (int co = 0; co < cout; ++co)
                    for (int ci = 0; ci < cin; ++ci)
                        for (int k = 0; k < kh * kw; ++k)
                            wt[((int64_t(ci) * cout + co) * kh * kw) + k] =
                                w.data()[((int64_t(co) * cin + ci) * kh * kw) + kh * kw - 1 - k];
                std::vector<T> dypad(size_t(cout) * hp * wp);
                std::vector<T> dx(size_t(cin) * h * ww);
                for (int ni = 0; ni < n; ++ni) {
                    const T* dys = dy + int64_t(ni) * cout * h * ww;
                    detail::pad_sample(dys, cout, h, ww, ph, dypad.data());
                    if (use3x3) {
                        detail::conv3x3_fwd(dypad.data(), wp, cout, wt.data(), (const T*)nullptr,
                                            dx.data(), h, ww, cin);
                    } else {
                        std::fill(dx.begin(), dx.end(), T(0));
                        for (int ci = 0; ci < cin; ++ci) {
                            T* acc = dx.data() + int64_t(ci) * h * ww;
                            for (int co = 0; co < cout; ++co) {
                                const T* xp = dypad.data() + int64_t(co) * hp * wp;
                                const T* wk = wt.data() + ((int64_t(ci) * cout + co) * kh) * kw;
                                for (int y = 0; y < h; ++y)
                                    for (int dyk = 0; dyk < kh; ++dyk)
                                        for (int dxk = 0; dxk < kw; ++dxk) {
                                            const T wv = wk[dyk * kw + dxk];
                                            const T* xrow = xp + int64_t(y + dyk) * wp + dxk;
                                            T* arow = acc + int64_t(y) * ww;
                                            for (int xx = 0; xx < ww; ++xx) arow[xx] += wv * xrow[xx];
                                        }
                            }
                        }
                    }
                    T* gxs = gx.data() + int64_t(ni) * cin * h * ww;
                    for (size_t i = 0; i < dx.size(); ++i) gxs[i] += dx[i];
                }
            }
        },
        "conv2d");
    return out;
}

// ---------------------------------------------------------------------------
// elementwise activations

enum class Activation { relu, leaky_relu, sigmoid, softplus };

template <typename T>
Tensor<T> activation(Tape<T>* tape, const Tensor<T>& x, Activation kind, T slope = T(0.1)) {
    Tensor<T> out(x.shape());
    const T* in = x.data();
    T* o = out.data();
    const int64_t n = x.numel();
    switch (kind) {
        case Activation::relu:
            for (int64_t i = 0; i < n; ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
            break;
        case Activation::leaky_relu:
            for (int64_t i = 0; i < n; ++i) o[i] = in[i] > T(0) ? in[i] : slope * in[i];
            break;
        case Activation::sigmoid:
            for (int64_t i = 0; i < n; ++i) {
                const T v = in[i];
                if (v >= T(0)) {
                    o[i] = T(1) / (T(1) + std::exp(-v));
                } else {
                    const T e = std::exp(v);
                    o[i] = e / (T(1) + e);
                }
            }
            break;
        case Activation::softplus:
            for (int64_t i = 0; i < n; ++i) {
                const T v = in[i];
                if (v > T(30))
                    o[i] = v;
                else if (v < T(-30))
                    o[i] = std::exp(v);
                else
                    o[i] = std::log1p(std::exp(-std::abs(v))) + (v > T(0) ? v : T(0));
            }
            break;
    }
    if (!tape || !detail::needs_grad(x)) return out;
    out.mark_tracked();
    tape->record(
        out, {x},
        [tape, x, out, kind, slope, n]() mutable {
            const T* g = out.payload()->grad.data();
            const T* in = x.data();
            const T* y = out.data();
            auto gx = tape->grad_buffer(*x.payload());
            switch (kind) {
                case Activation::relu:
                    for (int64_t i = 0; i < n; ++i) gx[i] += in[i] > T(0) ? g[i] : T(0);
                    break;
                case Activation::leaky_relu:
                    // derivative at exactly 0 is the slope
                    for (int64_t i = 0; i < n; ++i) gx[i] += in[i] > T(0) ? g[i] : slope * g[i];
                    break;
                case Activation::sigmoid:
                    for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
                    break;
                case Activation::softplus:
                    for (int64_t i = 0; i < n; ++i) {
                        const T v = in[i];
                        const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                              : std::exp(v) / (T(1) + std::exp(v));
                        gx[i] += g[i] * s;
                    }
                    break;
            }
        },
        "activation");
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* t, const Tensor<T>& x) {
    return activation(t, x, Activation::relu);
}
template <typename T>
Tensor<T> leaky_relu(Tape<T>* t, const Tensor<T>& x, T slope = T(0.1)) {
    return activation(t, x, Activation::leaky_relu, slope);
}
template <typename T>
Tensor<T> sigmoid(Tape<T>* t, const Tensor<T>& x) {
    return activation(t, x, Activation::sigmoid);
}
template <typename T>
Tensor<T> softplus(Tape<T>* t, const Tensor<T>& x) {
    return activation(t, x, Activation::softplus);
}

// ---------------------------------------------------------------------------
// broadcasting arithmetic

namespace detail {

struct BcastPlan {
    int64_t dims[4];      // output extents, padded to 4-d
    int64_t stride_a[4];  // 0 on broadcast axes
    int64_t stride_b[4];
    int64_t numel;
};

template <typename T>
BcastPlan bcast_plan(const Tensor<T>& a, const Tensor<T>& b, const char* opname, Shape* out_shape) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size() || sa.empty() || sa.size() > 4)
        throw InternalError(std::string(opname) + ": incompatible shapes " + shape_str(sa) + " vs " +
                            shape_str(sb));
    const int r = static_cast<int>(sa.size());
    Shape os(sa.size());
    for (int i = 0; i < r; ++i) {
        if (sa[i] != sb[i] && sa[i] != 1 && sb[i] != 1)
            throw InternalError(std::string(opname) + ": incompatible shapes " + shape_str(sa) +
                                " vs " + shape_str(sb) + " at dim " + std::to_string(i));
        os[static_cast<size_t>(i)] = std::max(sa[i], sb[i]);
    }
    BcastPlan p{};
    int64_t ra = 1, rb = 1;
    for (int i = 3; i >= 0; --i) {
        const int j = i - (4 - r);
        const int64_t da = j >= 0 ? sa[static_cast<size_t>(j)] : 1;
        const int64_t db = j >= 0 ? sb[static_cast<size_t>(j)] : 1;
        p.dims[i] = std::max(da, db);
        p.stride_a[i] = da == 1 ? 0 : ra;
        p.stride_b[i] = db == 1 ? 0 : rb;
        ra *= da;
        rb *= db;
    }
    p.numel = p.dims[0] * p.dims[1] * p.dims[2] * p.dims[3];
    *out_shape = os;
    return p;
}

}  // namespace detail

namespace detail {

enum class Arith { add, sub, mul };

template <typename T, Arith Op>
Tensor<T> broadcast_arith(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b, const char* name) {
    Shape os;
    const BcastPlan p = bcast_plan(a, b, name, &os);
    Tensor<T> out(os);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    if (shape_eq(a.shape(), b.shape())) {
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) {
            if constexpr (Op == Arith::add) po[i] = pa[i] + pb[i];
            if constexpr (Op == Arith::sub) po[i] = pa[i] - pb[i];
            if constexpr (Op == Arith::mul) po[i] = pa[i] * pb[i];
        }
    } else {
        int64_t o = 0;
        for (int64_t i0 = 0; i0 < p.dims[0]; ++i0)
            for (int64_t i1 = 0; i1 < p.dims[1]; ++i1)
                for (int64_t i2 = 0; i2 < p.dims[2]; ++i2) {
                    const int64_t base_a = i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2];
                    const int64_t base_b = i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2];
                    for (int64_t i3 = 0; i3 < p.dims[3]; ++i3, ++o) {
                        const T va = pa[base_a + i3 * p.stride_a[3]];
                        const T vb = pb[base_b + i3 * p.stride_b[3]];
                        if constexpr (Op == Arith::add) po[o] = va + vb;
                        if constexpr (Op == Arith::sub) po[o] = va - vb;
                        if constexpr (Op == Arith::mul) po[o] = va * vb;
                    }
                }
    }
    if (!tape || !any_tracked<T>({&a, &b})) return out;
    out.mark_tracked();
    tape->record(
        out, {a, b},
        [tape, a, b, out, p]() mutable {
            const T* og = out.payload()->grad.data();
            const bool ga = needs_grad(a), gb = needs_grad(b);
            std::span<T> da = ga ? tape->grad_buffer(*a.payload()) : std::span<T>{};
            std::span<T> db = gb ? tape->grad_buffer(*b.payload()) : std::span<T>{};
            const T* pa = a.data();
            const T* pb = b.data();
            int64_t o = 0;
            for (int64_t i0 = 0; i0 < p.dims[0]; ++i0)
                for (int64_t i1 = 0; i1 < p.dims[1]; ++i1)
                    for (int64_t i2 = 0; i2 < p.dims[2]; ++i2) {
                        const int64_t base_a =
                            i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2];
                        const int64_t base_b =
                            i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2];
                        for (int64_t i3 = 0; i3 < p.dims[3]; ++i3, ++o) {
                            const int64_t ia = base_a + i3 * p.stride_a[3];
                            const int64_t ib = base_b + i3 * p.stride_b[3];
                            const T g = og[o];
                            if constexpr (Op == Arith::add) {
                                if (ga) da[ia] += g;
                                if (gb) db[ib] += g;
                            }
                            if constexpr (Op == Arith::sub) {
                                if (ga) da[ia] += g;
                                if (gb) db[ib] -= g;
                            }
                            if constexpr (Op == Arith::mul) {
                                if (ga) da[ia] += g * pb[ib];
                                if (gb) db[ib] += g * pa[ia];
                            }
                        }
                    }
        },
        name);
    return out;
}

}  // namespace detail

/// Elementwise sum with numpy-style broadcasting over size-1 dims.
template <typename T>
Tensor<T> add(Tape<T>* t, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_arith<T, detail::Arith::add>(t, a, b, "broadcast_add");
}
template <typename T>
Tensor<T> sub(Tape<T>* t, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_arith<T, detail::Arith::sub>(t, a, b, "broadcast_sub");
}
/// Elementwise product; gradients of a broadcast operand are summed over
/// the broadcast dims.
template <typename T>
Tensor<T> mul(Tape<T>* t, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_arith<T, detail::Arith::mul>(t, a, b, "broadcast_mul");
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T c) {
    Tensor<T> out(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = c * x[i];
    if (!tape || !detail::needs_grad(x)) return out;
    out.mark_tracked();
    tape->record(
        out, {x},
        [tape, x, out, c, n]() mutable {
            const T* g = out.payload()->grad.data();
            auto gx = tape->grad_buffer(*x.payload());
            for (int64_t i = 0; i < n; ++i) gx[i] += c * g[i];
        },
        "scale");
    return out;
}

template <typename T>
Tensor<T> absolute(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = std::abs(x[i]);
    if (!tape || !detail::needs_grad(x)) return out;
    out.mark_tracked();
    tape->record(
        out, {x},
        [tape, x, out, n]() mutable {
            const T* g = out.payload()->grad.data();
            auto gx = tape->grad_buffer(*x.payload());
            // subgradient 0 at x == 0
            for (int64_t i = 0; i < n; ++i)
                gx[i] += x[i] > T(0) ? g[i] : (x[i] < T(0) ? -g[i] : T(0));
        },
        "abs");
    return out;
}

// ---------------------------------------------------------------------------
// reductions and pooling

/// Mean over H and W per channel: [N,C,H,W] -> [N,C,1,1].
template <typename T>
Tensor<T> global_avg_pool_spatial(Tape<T>* tape, const Tensor<T>& x) {
    if (x.ndim() != 4) throw InternalError("global_avg_pool_spatial expects 4-d, got " + shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> out(Shape{n, c, 1, 1});
    const int64_t hw = int64_t(h) * w;
    for (int64_t nc = 0; nc < int64_t(n) * c; ++nc) {
        const T* p = x.data() + nc * hw;
        T s = T(0);
        for (int64_t i = 0; i < hw; ++i) s += p[i];
        out[nc] = s / static_cast<T>(hw);
    }
    if (!tape || !detail::needs_grad(x)) return out;
    out.mark_tracked();
    tape->record(
        out, {x},
        [tape, x, out, n, c, hw]() mutable {
            const T* g = out.payload()->grad.data();
            auto gx = tape->grad_buffer(*x.payload());
            for (int64_t nc = 0; nc < int64_t(n) * c; ++nc) {
                const T gv = g[nc] / static_cast<T>(hw);
                T* p = gx.data() + nc * hw;
                for (int64_t i = 0; i < hw; ++i) p[i] += gv;
            }
        },
        "global_avg_pool_spatial");
    return out;
}

/// Mean over channels per pixel: [N,C,H,W] -> [N,1,H,W].
template <typename T>
Tensor<T> mean_over_channels(Tape<T>* tape, const Tensor<T>& x) {
    if (x.ndim() != 4) throw InternalError("mean_over_channels expects 4-d, got " + shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t hw = int64_t(h) * w;
    Tensor<T> out(Shape{n, 1, h, w});
    for (int ni = 0; ni < n; ++ni) {
        T* o = out.data() + int64_t(ni) * hw;
        const T* p = x.data() + int64_t(ni) * c * hw;
        for (int64_t i = 0; i < hw; ++i) o[i] = p[i];
        for (int ci = 1; ci < c; ++ci) {
            const T* q = p + int64_t(ci) * hw;
            for (int64_t i = 0; i < hw; ++i) o[i] += q[i];
        }
        const T inv = T(1) / static_cast<T>(c);
        for (int64_t i = 0; i < hw; ++i) o[i] *= inv;
    }
    if (!tape || !detail::needs_grad(x)) return out;
    out.mark_tracked();
    tape->record(
        out, {x},
        [tape, x, out, n, c, hw]() mutable {
            const T* g = out.payload()->grad.data();
            auto gx = tape->grad_buffer(*x.payload());
            const T inv = T(1) / static_cast<T>(c);
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    T* p = gx.data() + (int64_t(ni) * c + ci) * hw;
                    const T* gs = g + int64_t(ni) * hw;
                    for (int64_t i = 0; i < hw; ++i) p[i] += gs[i] * inv;
                }
        },
        "mean_over_channels");
    return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(Shape{1});
    T s = T(0);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) s += x[i];
    out[0] = s;
    if (!tape || !detail::needs_grad(x)) return out;
    out.mark_tracked();
    tape->record(
        out, {x},
        [tape, x, out, n]() mutable {
            const T g = out.payload()->grad[0];
            auto gx = tape->grad_buffer(*x.payload());
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        },
        "sum_all");
    return out;
}

template <typename T>
Tensor<T> mean_all(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(Shape{1});
    T s = T(0);
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) s += x[i];
    out[0] = s / static_cast<T>(n);
    if (!tape || !detail::needs_grad(x)) return out;
    out.mark_tracked();
    tape->record(
        out, {x},
        [tape, x, out, n]() mutable {
            const T g = out.payload()->grad[0] / static_cast<T>(n);
            auto gx = tape->grad_buffer(*x.payload());
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        },
        "mean_all");
    return out;
}

/// Concatenate along the channel dim: [N,Ca,H,W] + [N,Cb,H,W] -> [N,Ca+Cb,H,W].
template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
        a.dim(3) != b.dim(3))
        throw InternalError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    const int64_t hw = int64_t(h) * w;
    Tensor<T> out(Shape{n, ca + cb, h, w});
    for (int ni = 0; ni < n; ++ni) {
        std::memcpy(out.data() + int64_t(ni) * (ca + cb) * hw, a.data() + int64_t(ni) * ca * hw,
                    sizeof(T) * size_t(ca) * hw);
        std::memcpy(out.data() + (int64_t(ni) * (ca + cb) + ca) * hw, b.data() + int64_t(ni) * cb * hw,
                    sizeof(T) * size_t(cb) * hw);
    }
    if (!tape || !detail::any_tracked<T>({&a, &b})) return out;
    out.mark_tracked();
    tape->record(
        out, {a, b},
        [tape, a, b, out, n, ca, cb, hw]() mutable {
            const T* g = out.payload()->grad.data();
            if (detail::needs_grad(a)) {
                auto ga = tape->grad_buffer(*a.payload());
                for (int ni = 0; ni < n; ++ni) {
                    const T* gs = g + int64_t(ni) * (ca + cb) * hw;
                    T* p = ga.data() + int64_t(ni) * ca * hw;
                    for (int64_t i = 0; i < ca * hw; ++i) p[i] += gs[i];
                }
            }
            if (detail::needs_grad(b)) {
                auto gb = tape->grad_buffer(*b.payload());
                for (int ni = 0; ni < n; ++ni) {
                    const T* gs = g + (int64_t(ni) * (ca + cb) + ca) * hw;
                    T* p = gb.data() + int64_t(ni) * cb * hw;
                    for (int64_t i = 0; i < cb * hw; ++i) p[i] += gs[i];
                }
            }
        },
        "concat_channels");
    return out;
}

/// Inference-time clamp to [0,1]. Not differentiable, never recorded.
template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = std::clamp(x[i], T(0), T(1));
    return out;
}

}  // namespace defocus
