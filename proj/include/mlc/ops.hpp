#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mlc/tensor.hpp"

namespace mlc {

// ---------------------------------------------------------------------------
// Parameter records
// ---------------------------------------------------------------------------

template <typename T>
struct ConvParams {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int padding = 0; // symmetric zero padding
    int groups = 1;
    Tensor<T> weight;       // (out_channels, in_channels/groups, kernel_h, kernel_w)
    std::vector<T> bias;    // empty means no bias

    bool has_bias() const { return !bias.empty(); }
    bool is_depthwise() const {
        return groups == in_channels && groups == out_channels;
    }

    static ConvParams make(int cin, int cout, int kh, int kw, int stride, int pad, int groups,
                           bool with_bias) {
        ConvParams p;
        p.in_channels = cin;
        p.out_channels = cout;
        p.kernel_h = kh;
        p.kernel_w = kw;
        p.stride = stride;
        p.padding = pad;
        p.groups = groups;
        if (groups < 1 || cin % groups != 0 || cout % groups != 0)
            throw std::invalid_argument(detail::format_msg(
                "conv groups ", groups, " must divide in_channels ", cin,
                " and out_channels ", cout));
        p.weight = Tensor<T>(cout, cin / groups, kh, kw);
        if (with_bias) p.bias.assign(static_cast<std::size_t>(cout), T(0));
        return p;
    }
};

enum class BnMode { train, infer };

template <typename T>
struct BatchNormParams {
    std::vector<T> gamma, beta, running_mean, running_var;
    T epsilon = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.1);

    static BatchNormParams make(int channels) {
        BatchNormParams p;
        p.gamma.assign(static_cast<std::size_t>(channels), T(1));
        p.beta.assign(static_cast<std::size_t>(channels), T(0));
        p.running_mean.assign(static_cast<std::size_t>(channels), T(0));
        p.running_var.assign(static_cast<std::size_t>(channels), T(1));
        return p;
    }
    int channels() const { return static_cast<int>(gamma.size()); }
};


namespace detail {

// Fixed-order 16-lane reductions: the lane pattern is part of the
// definition, so results stay bit-identical run to run and independent of
// threading, while the fixed-width independent lanes map onto vector
// registers.
inline constexpr int kLanes = 16;

template <typename T>
inline T reduce_lanes(const T* lanes) {
    T s = T(0);
    for (int j = 0; j < kLanes; ++j) s += lanes[j];
    return s;
}

template <typename T>
inline T sum_lanes(const T* a, int n) {
    T lanes[kLanes] = {};
    int i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (int j = 0; j < kLanes; ++j) lanes[j] += a[i + j];
    T tail = T(0);
    for (; i < n; ++i) tail += a[i];
    return reduce_lanes(lanes) + tail;
}

template <typename T>
inline T dot_lanes(const T* a, const T* b, int n) {
    T lanes[kLanes] = {};
    int i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (int j = 0; j < kLanes; ++j) lanes[j] += a[i + j] * b[i + j];
    T tail = T(0);
    for (; i < n; ++i) tail += a[i] * b[i];
    return reduce_lanes(lanes) + tail;
}

template <typename T>
inline T sumsq_dev_lanes(const T* a, T mean, int n) {
    T lanes[kLanes] = {};
    int i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (int j = 0; j < kLanes; ++j) {
            const T d = a[i + j] - mean;
            lanes[j] += d * d;
        }
    T tail = T(0);
    for (; i < n; ++i) {
        const T d = a[i] - mean;
        tail += d * d;
    }
    return reduce_lanes(lanes) + tail;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

template <typename T>
inline Shape conv_output_shape(const Shape& in, const ConvParams<T>& p) {
    int ho = (in.h + 2 * p.padding - p.kernel_h) / p.stride + 1;
    int wo = (in.w + 2 * p.padding - p.kernel_w) / p.stride + 1;
    return Shape{in.b, p.out_channels, ho, wo};
}

template <typename T>
inline void conv_validate(const Tensor<T>& x, const ConvParams<T>& p) {
    if (p.groups < 1 || p.in_channels % p.groups != 0 || p.out_channels % p.groups != 0)
        throw std::invalid_argument(detail::format_msg(
            "conv groups ", p.groups, " must divide in_channels ", p.in_channels,
            " and out_channels ", p.out_channels));
    if (x.shape().c != p.in_channels)
        throw std::invalid_argument(detail::format_msg(
            "conv input ", x.shape().str(), " does not match in_channels ", p.in_channels));
    if (p.stride < 1 || p.padding < 0)
        throw std::invalid_argument("conv stride must be >= 1 and padding >= 0");
    Shape out = conv_output_shape(x.shape(), p);
    if (out.h < 1 || out.w < 1)
        throw std::invalid_argument(detail::format_msg(
            "conv input ", x.shape().str(), " too small for kernel ", p.kernel_h, "x",
            p.kernel_w, " stride ", p.stride, " pad ", p.padding));
}

namespace detail {

// Pixel-unshuffle: (B, C, H, W) -> (B, C*k*k, H/k, W/k) with channel order
// (c, kh, kw); a k x k stride-k conv then becomes pointwise with the same
// flat weight layout.
template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, int k) {
    const Shape s = x.shape();
    Tensor<T> out(s.b, s.c * k * k, s.h / k, s.w / k);
    const int HO = s.h / k, WO = s.w / k;
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const T* xp = x.plane(b, c);
            for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                    T* op = out.plane(b, (c * k + kh) * k + kw);
                    for (int oy = 0; oy < HO; ++oy)
                        for (int ox = 0; ox < WO; ++ox)
                            op[oy * WO + ox] = xp[(oy * k + kh) * s.w + ox * k + kw];
                }
        }
    return out;
}

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& x, int k, const Shape& target) {
    Tensor<T> out(target);
    const int HO = x.shape().h, WO = x.shape().w;
    for (int b = 0; b < target.b; ++b)
        for (int c = 0; c < target.c; ++c) {
            T* op = out.plane(b, c);
            for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                    const T* xp = x.plane(b, (c * k + kh) * k + kw);
                    for (int oy = 0; oy < HO; ++oy)
                        for (int ox = 0; ox < WO; ++ox)
                            op[(oy * k + kh) * target.w + ox * k + kw] = xp[oy * WO + ox];
                }
        }
    return out;
}

template <typename T>
bool is_patch_conv(const ConvParams<T>& p) {
    return !p.is_depthwise() && p.padding == 0 && p.kernel_h > 1 &&
           p.kernel_h == p.kernel_w && p.stride == p.kernel_h;
}

template <typename T>
ConvParams<T> as_pointwise(const ConvParams<T>& p) {
    ConvParams<T> pp = p;
    const int k2 = p.kernel_h * p.kernel_w;
    pp.in_channels = p.in_channels * k2;
    pp.kernel_h = pp.kernel_w = 1;
    pp.stride = 1;
    pp.padding = 0;
    // Flat layout (oc, icg, kh, kw) == (oc, icg*k*k, 1, 1): share the data.
    pp.weight = Tensor<T>(Shape{p.out_channels, p.in_channels / p.groups * k2, 1, 1},
                          std::vector<T>(p.weight.data(), p.weight.data() + p.weight.size()));
    return pp;
}

} // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
    conv_validate(x, p);
    if (detail::is_patch_conv(p) && x.shape().h % p.stride == 0 &&
        x.shape().w % p.stride == 0) {
        return conv2d(detail::space_to_depth(x, p.kernel_h), detail::as_pointwise(p));
    }
    const Shape in = x.shape();
    const Shape os = conv_output_shape(in, p);
    Tensor<T> y(os);

    const int B = in.b, H = in.h, W = in.w;
    const int OC = p.out_channels, HO = os.h, WO = os.w;
    const int icg = p.in_channels / p.groups;
    const int ocg = p.out_channels / p.groups;
    const long long work = 1LL * B * OC * HO * WO * icg * p.kernel_h * p.kernel_w;

    if (p.kernel_h == 1 && p.kernel_w == 1 && p.stride == 1 && p.padding == 0) {
        const int HW = H * W;
        if (HW <= 16 && icg >= 32) {
            // Deep, spatially tiny maps (late stages): gather each pixel's
            // channel column once, then run contiguous dot products against
            // the weight rows.
            const T* bias = p.has_bias() ? p.bias.data() : nullptr;
            MLC_OMP_FOR(work > (1 << 14))
            for (int b = 0; b < B; ++b) {
                std::vector<T> xcol(static_cast<std::size_t>(p.in_channels));
                for (int i = 0; i < HW; ++i) {
                    for (int ic = 0; ic < p.in_channels; ++ic)
                        xcol[static_cast<std::size_t>(ic)] = x.plane(b, ic)[i];
                    for (int oc = 0; oc < OC; ++oc) {
                        const int g = oc / ocg;
                        const T* wrow = p.weight.plane(oc, 0);
                        T acc = detail::dot_lanes(wrow, xcol.data() + g * icg, icg);
                        if (bias) acc += bias[oc];
                        y.plane(b, oc)[i] = acc;
                    }
                }
            }
        } else {
            // Pointwise: per (b, oc), accumulate scaled input planes.
            MLC_OMP_FOR(work > (1 << 14))
            for (long long bo = 0; bo < 1LL * B * OC; ++bo) {
                const int b = static_cast<int>(bo / OC);
                const int oc = static_cast<int>(bo % OC);
                const int g = oc / ocg;
                T* yp = y.plane(b, oc);
                const T init = p.has_bias() ? p.bias[oc] : T(0);
                for (int i = 0; i < HW; ++i) yp[i] = init;
                for (int k = 0; k < icg; ++k) {
                    const T wv = p.weight.at(oc, k, 0, 0);
                    const T* xp = x.plane(b, g * icg + k);
                    for (int i = 0; i < HW; ++i) yp[i] += wv * xp[i];
                }
            }
        }
    } else if (p.is_depthwise() && p.stride == 1 && p.kernel_h == 3 && p.kernel_w == 3 &&
               p.padding == 1) {
        // 3x3 stencil with a zero row standing in for out-of-range rows;
        // adding a 0*w term leaves the sum bit-identical, so the interior
        // loop is branchless.
        MLC_OMP_FOR(work > (1 << 14))
        for (long long bc = 0; bc < 1LL * B * OC; ++bc) {
            const int b = static_cast<int>(bc / OC);
            const int c = static_cast<int>(bc % OC);
            const T* xp = x.plane(b, c);
            T* yp = y.plane(b, c);
            const T* w = p.weight.plane(c, 0);
            const T bias = p.has_bias() ? p.bias[c] : T(0);
            std::vector<T> zero_row(static_cast<std::size_t>(W), T(0));
            for (int oy = 0; oy < H; ++oy) {
                const T* r0 = oy > 0 ? xp + static_cast<std::size_t>(oy - 1) * W
                                     : zero_row.data();
                const T* r1 = xp + static_cast<std::size_t>(oy) * W;
                const T* r2 = oy + 1 < H ? xp + static_cast<std::size_t>(oy + 1) * W
                                         : zero_row.data();
                T* yrow = yp + static_cast<std::size_t>(oy) * W;
                for (int ox = 1; ox + 1 < W; ++ox) {
                    T acc = bias;
                    acc += w[0] * r0[ox - 1] + w[1] * r0[ox] + w[2] * r0[ox + 1];
                    acc += w[3] * r1[ox - 1] + w[4] * r1[ox] + w[5] * r1[ox + 1];
                    acc += w[6] * r2[ox - 1] + w[7] * r2[ox] + w[8] * r2[ox + 1];
                    yrow[ox] = acc;
                }
                {
                    T acc = bias;
                    acc += w[1] * r0[0] + w[2] * (W > 1 ? r0[1] : T(0));
                    acc += w[4] * r1[0] + w[5] * (W > 1 ? r1[1] : T(0));
                    acc += w[7] * r2[0] + w[8] * (W > 1 ? r2[1] : T(0));
                    yrow[0] = acc;
                }
                if (W > 1) {
                    const int ox = W - 1;
                    T acc = bias;
                    acc += w[0] * r0[ox - 1] + w[1] * r0[ox];
                    acc += w[3] * r1[ox - 1] + w[4] * r1[ox];
                    acc += w[6] * r2[ox - 1] + w[7] * r2[ox];
                    yrow[ox] = acc;
                }
            }
        }
    } else if (p.is_depthwise() && p.stride == 1) {
        // Row-wise shifted accumulation: bounds resolved per (kh, kw) once,
        // inner loops stay contiguous.
        MLC_OMP_FOR(work > (1 << 14))
        for (long long bc = 0; bc < 1LL * B * OC; ++bc) {
            const int b = static_cast<int>(bc / OC);
            const int c = static_cast<int>(bc % OC);
            const T* xp = x.plane(b, c);
            T* yp = y.plane(b, c);
            const T* wp = p.weight.plane(c, 0);
            const T bias = p.has_bias() ? p.bias[c] : T(0);
            for (int oy = 0; oy < HO; ++oy) {
                T* yrow = yp + static_cast<std::size_t>(oy) * WO;
                for (int ox = 0; ox < WO; ++ox) yrow[ox] = bias;
                for (int kh = 0; kh < p.kernel_h; ++kh) {
                    const int iy = oy - p.padding + kh;
                    if (iy < 0 || iy >= H) continue;
                    const T* xrow = xp + static_cast<std::size_t>(iy) * W;
                    for (int kw = 0; kw < p.kernel_w; ++kw) {
                        const T wv = wp[kh * p.kernel_w + kw];
                        const int shift = kw - p.padding;
                        const int lo = shift < 0 ? -shift : 0;
                        const int hi = shift > W - WO ? W - shift : WO;
                        for (int ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox + shift];
                    }
                }
            }
        }
    } else if (p.is_depthwise()) {
        MLC_OMP_FOR(work > (1 << 14))
        for (long long bc = 0; bc < 1LL * B * OC; ++bc) {
            const int b = static_cast<int>(bc / OC);
            const int c = static_cast<int>(bc % OC);
            const T* xp = x.plane(b, c);
            T* yp = y.plane(b, c);
            const T* wp = p.weight.plane(c, 0);
            const T bias = p.has_bias() ? p.bias[c] : T(0);
            for (int oy = 0; oy < HO; ++oy) {
                const int iy0 = oy * p.stride - p.padding;
                for (int ox = 0; ox < WO; ++ox) {
                    const int ix0 = ox * p.stride - p.padding;
                    T acc = bias;
                    for (int kh = 0; kh < p.kernel_h; ++kh) {
                        const int iy = iy0 + kh;
                        if (iy < 0 || iy >= H) continue;
                        for (int kw = 0; kw < p.kernel_w; ++kw) {
                            const int ix = ix0 + kw;
                            if (ix < 0 || ix >= W) continue;
                            acc += xp[iy * W + ix] * wp[kh * p.kernel_w + kw];
                        }
                    }
                    yp[oy * WO + ox] = acc;
                }
            }
        }
    } else {
        MLC_OMP_FOR(work > (1 << 14))
        for (long long bo = 0; bo < 1LL * B * OC; ++bo) {
            const int b = static_cast<int>(bo / OC);
            const int oc = static_cast<int>(bo % OC);
            const int g = oc / ocg;
            T* yp = y.plane(b, oc);
            const T bias = p.has_bias() ? p.bias[oc] : T(0);
            for (int oy = 0; oy < HO; ++oy) {
                const int iy0 = oy * p.stride - p.padding;
                for (int ox = 0; ox < WO; ++ox) {
                    const int ix0 = ox * p.stride - p.padding;
                    T acc = bias;
                    for (int k = 0; k < icg; ++k) {
                        const T* xp = x.plane(b, g * icg + k);
                        const T* wp = p.weight.plane(oc, k);
                        for (int kh = 0; kh < p.kernel_h; ++kh) {
                            const int iy = iy0 + kh;
                            if (iy < 0 || iy >= H) continue;
                            for (int kw = 0; kw < p.kernel_w; ++kw) {
                                const int ix = ix0 + kw;
                                if (ix < 0 || ix >= W) continue;
                                acc += xp[iy * W + ix] * wp[kh * p.kernel_w + kw];
                            }
                        }
                    }
                    yp[oy * WO + ox] = acc;
                }
            }
        }
    }
    check_finite(y, "conv2d");
    return y;
}

// Gradient w.r.t. the input. Gather formulation: every input element is
// written by exactly one iteration, so the batch/channel loop parallelizes
// without changing the reduction order.
template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& gy, const Shape& in_shape, const ConvParams<T>& p) {
    if (detail::is_patch_conv(p) && in_shape.h % p.stride == 0 && in_shape.w % p.stride == 0) {
        const Shape folded{in_shape.b, in_shape.c * p.kernel_h * p.kernel_w,
                           in_shape.h / p.stride, in_shape.w / p.stride};
        Tensor<T> gxs = conv2d_grad_input(gy, folded, detail::as_pointwise(p));
        return detail::depth_to_space(gxs, p.kernel_h, in_shape);
    }
    Tensor<T> gx(in_shape);
    const int B = in_shape.b, H = in_shape.h, W = in_shape.w;
    const int HO = gy.shape().h, WO = gy.shape().w;
    const int icg = p.in_channels / p.groups;
    const int ocg = p.out_channels / p.groups;
    const long long work = 1LL * B * p.in_channels * H * W * ocg;

    if (p.kernel_h == 1 && p.kernel_w == 1 && p.stride == 1 && p.padding == 0) {
        const int HW = H * W;
        if (HW <= 16 && ocg >= 32) {
            // Gather the gy channel column per pixel; dot against transposed
            // weight rows.
            std::vector<T> wt(p.weight.size()); // wt[g][k][o] = w[g*ocg+o][k]
            for (int g = 0; g < p.groups; ++g)
                for (int o = 0; o < ocg; ++o)
                    for (int k = 0; k < icg; ++k)
                        wt[(static_cast<std::size_t>(g) * icg + k) * ocg + o] =
                            p.weight.at(g * ocg + o, k, 0, 0);
            MLC_OMP_FOR(work > (1 << 14))
            for (int b = 0; b < B; ++b) {
                std::vector<T> gycol(static_cast<std::size_t>(p.out_channels));
                for (int i = 0; i < HW; ++i) {
                    for (int oc = 0; oc < p.out_channels; ++oc)
                        gycol[static_cast<std::size_t>(oc)] = gy.plane(b, oc)[i];
                    for (int ic = 0; ic < p.in_channels; ++ic) {
                        const int g = ic / icg;
                        const int k = ic % icg;
                        gx.plane(b, ic)[i] = detail::dot_lanes(
                            wt.data() + (static_cast<std::size_t>(g) * icg + k) * ocg,
                            gycol.data() + g * ocg, ocg);
                    }
                }
            }
            return gx;
        }
        // Pointwise: dx[b][ic] accumulates scaled gy planes (contiguous).
        MLC_OMP_FOR(work > (1 << 14))
        for (long long bi = 0; bi < 1LL * B * p.in_channels; ++bi) {
            const int b = static_cast<int>(bi / p.in_channels);
            const int ic = static_cast<int>(bi % p.in_channels);
            const int g = ic / icg;
            const int k = ic % icg;
            T* gxp = gx.plane(b, ic);
            for (int i = 0; i < HW; ++i) gxp[i] = T(0);
            for (int o = 0; o < ocg; ++o) {
                const int oc = g * ocg + o;
                const T wv = p.weight.at(oc, k, 0, 0);
                const T* gyp = gy.plane(b, oc);
                for (int i = 0; i < HW; ++i) gxp[i] += wv * gyp[i];
            }
        }
        return gx;
    }
    if (p.is_depthwise() && p.stride == 1 && p.kernel_h == 3 && p.kernel_w == 3 &&
        p.padding == 1) {
        // Flipped 3x3 stencil over gy with zero rows for the borders.
        MLC_OMP_FOR(work > (1 << 14))
        for (long long bc = 0; bc < 1LL * B * p.in_channels; ++bc) {
            const int b = static_cast<int>(bc / p.in_channels);
            const int c = static_cast<int>(bc % p.in_channels);
            const T* gyp = gy.plane(b, c);
            const T* w = p.weight.plane(c, 0);
            T* gxp = gx.plane(b, c);
            std::vector<T> zero_row(static_cast<std::size_t>(W), T(0));
            for (int iy = 0; iy < H; ++iy) {
                const T* r0 = iy > 0 ? gyp + static_cast<std::size_t>(iy - 1) * W
                                     : zero_row.data();
                const T* r1 = gyp + static_cast<std::size_t>(iy) * W;
                const T* r2 = iy + 1 < H ? gyp + static_cast<std::size_t>(iy + 1) * W
                                         : zero_row.data();
                T* gxrow = gxp + static_cast<std::size_t>(iy) * W;
                for (int ix = 1; ix + 1 < W; ++ix) {
                    T acc = w[0] * r2[ix + 1] + w[1] * r2[ix] + w[2] * r2[ix - 1];
                    acc += w[3] * r1[ix + 1] + w[4] * r1[ix] + w[5] * r1[ix - 1];
                    acc += w[6] * r0[ix + 1] + w[7] * r0[ix] + w[8] * r0[ix - 1];
                    gxrow[ix] = acc;
                }
                {
                    T acc = (W > 1 ? w[0] * r2[1] : T(0)) + w[1] * r2[0];
                    acc += (W > 1 ? w[3] * r1[1] : T(0)) + w[4] * r1[0];
                    acc += (W > 1 ? w[6] * r0[1] : T(0)) + w[7] * r0[0];
                    gxrow[0] = acc;
                }
                if (W > 1) {
                    const int ix = W - 1;
                    T acc = w[1] * r2[ix] + w[2] * r2[ix - 1];
                    acc += w[4] * r1[ix] + w[5] * r1[ix - 1];
                    acc += w[7] * r0[ix] + w[8] * r0[ix - 1];
                    gxrow[ix] = acc;
                }
            }
        }
        return gx;
    }
    if (p.is_depthwise() && p.stride == 1) {
        // Depthwise stride 1: per-row correlation with the flipped kernel;
        // bounds resolved once per (kh, kw).
        MLC_OMP_FOR(work > (1 << 14))
        for (long long bc = 0; bc < 1LL * B * p.in_channels; ++bc) {
            const int b = static_cast<int>(bc / p.in_channels);
            const int c = static_cast<int>(bc % p.in_channels);
            const T* gyp = gy.plane(b, c);
            const T* wp = p.weight.plane(c, 0);
            T* gxp = gx.plane(b, c);
            for (int iy = 0; iy < H; ++iy) {
                T* gxrow = gxp + static_cast<std::size_t>(iy) * W;
                for (int ix = 0; ix < W; ++ix) gxrow[ix] = T(0);
                for (int kh = 0; kh < p.kernel_h; ++kh) {
                    const int oy = iy + p.padding - kh;
                    if (oy < 0 || oy >= HO) continue;
                    const T* gyrow = gyp + static_cast<std::size_t>(oy) * WO;
                    for (int kw = 0; kw < p.kernel_w; ++kw) {
                        const T wv = wp[kh * p.kernel_w + kw];
                        const int shift = p.padding - kw;
                        const int lo = shift < 0 ? -shift : 0;
                        const int hi = shift > WO - W ? WO - shift : W;
                        for (int ix = lo; ix < hi; ++ix) gxrow[ix] += wv * gyrow[ix + shift];
                    }
                }
            }
        }
        return gx;
    }

    MLC_OMP_FOR(work > (1 << 14))
    for (long long bi = 0; bi < 1LL * B * p.in_channels; ++bi) {
        const int b = static_cast<int>(bi / p.in_channels);
        const int ic = static_cast<int>(bi % p.in_channels);
        const int g = ic / icg;
        const int k = ic % icg;
        T* gxp = gx.plane(b, ic);
        for (int iy = 0; iy < H; ++iy) {
            for (int ix = 0; ix < W; ++ix) {
                T acc = T(0);
                for (int kh = 0; kh < p.kernel_h; ++kh) {
                    const int num_y = iy + p.padding - kh;
                    if (num_y < 0 || num_y % p.stride != 0) continue;
                    const int oy = num_y / p.stride;
                    if (oy >= HO) continue;
                    for (int kw = 0; kw < p.kernel_w; ++kw) {
                        const int num_x = ix + p.padding - kw;
                        if (num_x < 0 || num_x % p.stride != 0) continue;
                        const int ox = num_x / p.stride;
                        if (ox >= WO) continue;
                        for (int o = 0; o < ocg; ++o) {
                            const int oc = g * ocg + o;
                            acc += gy.at(b, oc, oy, ox) * p.weight.at(oc, k, kh, kw);
                        }
                    }
                }
                gxp[iy * W + ix] = acc;
            }
        }
    }
    return gx;
}

// Gradient w.r.t. the weights. Owner-computes per weight slice; the batch
// reduction stays in a fixed serial order.
template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& gy, const Tensor<T>& x, const ConvParams<T>& p) {
    if (detail::is_patch_conv(p) && x.shape().h % p.stride == 0 && x.shape().w % p.stride == 0) {
        Tensor<T> gws = conv2d_grad_weight(gy, detail::space_to_depth(x, p.kernel_h),
                                           detail::as_pointwise(p));
        return Tensor<T>(p.weight.shape(),
                         std::vector<T>(gws.data(), gws.data() + gws.size()));
    }
    Tensor<T> gw(p.weight.shape());
    const Shape in = x.shape();
    const int B = in.b, H = in.h, W = in.w;
    const int HO = gy.shape().h, WO = gy.shape().w;
    const int icg = p.in_channels / p.groups;
    const int ocg = p.out_channels / p.groups;
    const long long work = 1LL * p.out_channels * icg * p.kernel_h * p.kernel_w * B * HO * WO;

    if (p.kernel_h == 1 && p.kernel_w == 1 && p.stride == 1 && p.padding == 0) {
        const int HW = H * W;
        if (HW <= 16 && icg >= 32) {
            // Pre-gather channel columns, then accumulate rank-1 updates per
            // output-channel row in a fixed (b, pixel) order.
            const int cols = B * HW;
            std::vector<T> xt(static_cast<std::size_t>(cols) * p.in_channels);
            std::vector<T> gyt(static_cast<std::size_t>(cols) * p.out_channels);
            for (int b = 0; b < B; ++b)
                for (int i = 0; i < HW; ++i) {
                    const std::size_t bi = static_cast<std::size_t>(b) * HW + i;
                    for (int ic = 0; ic < p.in_channels; ++ic)
                        xt[bi * p.in_channels + ic] = x.plane(b, ic)[i];
                    for (int oc = 0; oc < p.out_channels; ++oc)
                        gyt[bi * p.out_channels + oc] = gy.plane(b, oc)[i];
                }
            MLC_OMP_FOR(work > (1 << 14))
            for (int oc = 0; oc < p.out_channels; ++oc) {
                const int g = oc / ocg;
                T* gwrow = gw.plane(oc, 0);
                for (int bi = 0; bi < cols; ++bi) {
                    const T gyv = gyt[static_cast<std::size_t>(bi) * p.out_channels + oc];
                    const T* xrow =
                        xt.data() + static_cast<std::size_t>(bi) * p.in_channels + g * icg;
                    for (int k = 0; k < icg; ++k) gwrow[k] += gyv * xrow[k];
                }
            }
        } else {
            MLC_OMP_FOR(work > (1 << 14))
            for (long long ok = 0; ok < 1LL * p.out_channels * icg; ++ok) {
                const int oc = static_cast<int>(ok / icg);
                const int k = static_cast<int>(ok % icg);
                const int g = oc / ocg;
                T acc = T(0);
                for (int b = 0; b < B; ++b)
                    acc += detail::dot_lanes(gy.plane(b, oc), x.plane(b, g * icg + k), HW);
                gw.at(oc, k, 0, 0) = acc;
            }
        }
    } else if (p.is_depthwise() && p.stride == 1) {
        // Per-(channel, tap) row dot products with bounds resolved once.
        MLC_OMP_FOR(work > (1 << 14))
        for (int c = 0; c < p.out_channels; ++c) {
            for (int kh = 0; kh < p.kernel_h; ++kh) {
                for (int kw = 0; kw < p.kernel_w; ++kw) {
                    const int shift = kw - p.padding;
                    const int lo = shift < 0 ? -shift : 0;
                    const int hi = shift > W - WO ? W - shift : WO;
                    T acc = T(0);
                    for (int b = 0; b < B; ++b) {
                        const T* gyp = gy.plane(b, c);
                        const T* xp = x.plane(b, c);
                        for (int oy = 0; oy < HO; ++oy) {
                            const int iy = oy - p.padding + kh;
                            if (iy < 0 || iy >= H) continue;
                            if (hi > lo)
                                acc += detail::dot_lanes(
                                    gyp + static_cast<std::size_t>(oy) * WO + lo,
                                    xp + static_cast<std::size_t>(iy) * W + lo + shift,
                                    hi - lo);
                        }
                    }
                    gw.at(c, 0, kh, kw) = acc;
                }
            }
        }
    } else {
        MLC_OMP_FOR(work > (1 << 14))
        for (int oc = 0; oc < p.out_channels; ++oc) {
            const int g = oc / ocg;
            for (int k = 0; k < icg; ++k) {
                const int ic = g * icg + k;
                for (int kh = 0; kh < p.kernel_h; ++kh) {
                    for (int kw = 0; kw < p.kernel_w; ++kw) {
                        T acc = T(0);
                        for (int b = 0; b < B; ++b) {
                            const T* gyp = gy.plane(b, oc);
                            const T* xp = x.plane(b, ic);
                            for (int oy = 0; oy < HO; ++oy) {
                                const int iy = oy * p.stride - p.padding + kh;
                                if (iy < 0 || iy >= H) continue;
                                for (int ox = 0; ox < WO; ++ox) {
                                    const int ix = ox * p.stride - p.padding + kw;
                                    if (ix < 0 || ix >= W) continue;
                                    acc += gyp[oy * WO + ox] * xp[iy * W + ix];
                                }
                            }
                        }
                        gw.at(oc, k, kh, kw) = acc;
                    }
                }
            }
        }
    }
    return gw;
}

template <typename T>
std::vector<T> conv2d_grad_bias(const Tensor<T>& gy) {
    const Shape s = gy.shape();
    std::vector<T> gb(static_cast<std::size_t>(s.c), T(0));
    for (int c = 0; c < s.c; ++c) {
        T acc = T(0);
        for (int b = 0; b < s.b; ++b) {
            const T* gyp = gy.plane(b, c);
            for (int i = 0; i < s.h * s.w; ++i) acc += gyp[i];
        }
        gb[static_cast<std::size_t>(c)] = acc;
    }
    return gb;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
inline void bn_validate(const Tensor<T>& x, const BatchNormParams<T>& p) {
    if (p.channels() != x.shape().c)
        throw std::invalid_argument(detail::format_msg(
            "batch_norm parameter channels ", p.channels(), " do not match input ",
            x.shape().str()));
    if (!(p.epsilon > T(0))) throw numeric_error("batch_norm epsilon must be > 0");
}

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const BatchNormParams<T>& p) {
    bn_validate(x, p);
    const Shape s = x.shape();
    Tensor<T> y(s);
    const int HW = s.h * s.w;
    for (int c = 0; c < s.c; ++c)
        if (!(p.running_var[c] + p.epsilon > T(0)))
            throw numeric_error("batch_norm running_var + epsilon must be positive");
    MLC_OMP_FOR(1LL * s.b * s.c * HW > (1 << 14))
    for (int c = 0; c < s.c; ++c) {
        const T scale = p.gamma[c] / std::sqrt(p.running_var[c] + p.epsilon);
        const T shift = p.beta[c] - p.running_mean[c] * scale;
        for (int b = 0; b < s.b; ++b) {
            const T* xp = x.plane(b, c);
            T* yp = y.plane(b, c);
            for (int i = 0; i < HW; ++i) yp[i] = xp[i] * scale + shift;
        }
    }
    check_finite(y, "batch_norm_infer");
    return y;
}

// Saved forward state needed by the train-mode backward pass.
template <typename T>
struct BnSaved {
    std::vector<T> mean, var; // biased batch statistics
};

// Train mode: normalizes with batch statistics (biased variance over B*H*W)
// and updates running stats in place: running <- (1-m)*running + m*batch.
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, BatchNormParams<T>& p, BnSaved<T>& saved) {
    bn_validate(x, p);
    const Shape s = x.shape();
    const long long n = 1LL * s.b * s.h * s.w;
    if (n < 2)
        throw degenerate_batch_error(detail::format_msg(
            "batch_norm train mode needs >= 2 elements per channel, got ", n));
    Tensor<T> y(s);
    saved.mean.assign(static_cast<std::size_t>(s.c), T(0));
    saved.var.assign(static_cast<std::size_t>(s.c), T(0));
    const int HW = s.h * s.w;

    MLC_OMP_FOR(1LL * s.c * n > (1 << 14))
    for (int c = 0; c < s.c; ++c) {
        T sum = T(0);
        for (int b = 0; b < s.b; ++b) sum += detail::sum_lanes(x.plane(b, c), HW);
        const T mean = sum / static_cast<T>(n);
        T sq = T(0);
        for (int b = 0; b < s.b; ++b) sq += detail::sumsq_dev_lanes(x.plane(b, c), mean, HW);
        const T var = sq / static_cast<T>(n);
        saved.mean[c] = mean;
        saved.var[c] = var;
        const T scale = p.gamma[c] / std::sqrt(var + p.epsilon);
        const T shift = p.beta[c] - mean * scale;
        for (int b = 0; b < s.b; ++b) {
            const T* xp = x.plane(b, c);
            T* yp = y.plane(b, c);
            for (int i = 0; i < HW; ++i) yp[i] = xp[i] * scale + shift;
        }
    }
    for (int c = 0; c < s.c; ++c) {
        p.running_mean[c] = (T(1) - p.momentum) * p.running_mean[c] + p.momentum * saved.mean[c];
        p.running_var[c] = (T(1) - p.momentum) * p.running_var[c] + p.momentum * saved.var[c];
    }
    check_finite(y, "batch_norm_train");
    return y;
}

// Backward through the batch-statistics path (mean/var are functions of x).
template <typename T>
void batch_norm_train_backward(const Tensor<T>& gy, const Tensor<T>& x,
                               const BatchNormParams<T>& p, const BnSaved<T>& saved,
                               Tensor<T>& gx, std::vector<T>& ggamma, std::vector<T>& gbeta) {
    const Shape s = x.shape();
    const long long n = 1LL * s.b * s.h * s.w;
    gx = Tensor<T>(s);
    ggamma.assign(static_cast<std::size_t>(s.c), T(0));
    gbeta.assign(static_cast<std::size_t>(s.c), T(0));
    const int HW = s.h * s.w;

    MLC_OMP_FOR(1LL * s.c * n > (1 << 13))
    for (int c = 0; c < s.c; ++c) {
        const T mean = saved.mean[c];
        const T inv_std = T(1) / std::sqrt(saved.var[c] + p.epsilon);
        T sum_gy = T(0), sum_gy_x = T(0);
        for (int b = 0; b < s.b; ++b) {
            sum_gy += detail::sum_lanes(gy.plane(b, c), HW);
            sum_gy_x += detail::dot_lanes(gy.plane(b, c), x.plane(b, c), HW);
        }
        const T sum_gy_xhat = (sum_gy_x - mean * sum_gy) * inv_std;
        ggamma[c] = sum_gy_xhat;
        gbeta[c] = sum_gy;
        const T k1 = p.gamma[c] * inv_std;
        const T mg = sum_gy / static_cast<T>(n);
        const T mgx = sum_gy_xhat / static_cast<T>(n);
        for (int b = 0; b < s.b; ++b) {
            const T* gyp = gy.plane(b, c);
            const T* xp = x.plane(b, c);
            T* gxp = gx.plane(b, c);
            for (int i = 0; i < HW; ++i) {
                const T xhat = (xp[i] - mean) * inv_std;
                gxp[i] = k1 * (gyp[i] - mg - xhat * mgx);
            }
        }
    }
}

// Infer mode is a per-channel affine map.
template <typename T>
void batch_norm_infer_backward(const Tensor<T>& gy, const Tensor<T>& x,
                               const BatchNormParams<T>& p, Tensor<T>& gx,
                               std::vector<T>& ggamma, std::vector<T>& gbeta) {
    const Shape s = x.shape();
    gx = Tensor<T>(s);
    ggamma.assign(static_cast<std::size_t>(s.c), T(0));
    gbeta.assign(static_cast<std::size_t>(s.c), T(0));
    const int HW = s.h * s.w;
    for (int c = 0; c < s.c; ++c) {
        const T inv_std = T(1) / std::sqrt(p.running_var[c] + p.epsilon);
        const T scale = p.gamma[c] * inv_std;
        T sg = T(0), sb = T(0);
        for (int b = 0; b < s.b; ++b) {
            const T* gyp = gy.plane(b, c);
            const T* xp = x.plane(b, c);
            T* gxp = gx.plane(b, c);
            for (int i = 0; i < HW; ++i) {
                gxp[i] = gyp[i] * scale;
                sg += gyp[i] * (xp[i] - p.running_mean[c]) * inv_std;
                sb += gyp[i];
            }
        }
        ggamma[c] = sg;
        gbeta[c] = sb;
    }
}

// ---------------------------------------------------------------------------
// Channel shuffle, pooling, concat/split
// ---------------------------------------------------------------------------

// Output channel i reads input channel (i % g) * (C/g) + i / g
// (reshape (g, C/g) -> transpose -> flatten).
template <typename T>
Tensor<T> channel_shuffle(const Tensor<T>& x, int g) {
    const Shape s = x.shape();
    if (g < 1 || s.c % g != 0)
        throw std::invalid_argument(detail::format_msg(
            "channel_shuffle groups ", g, " must divide channels ", s.c));
    if (g == 1) return x;
    Tensor<T> y(s);
    const int per = s.c / g;
    const int HW = s.h * s.w;
    for (int b = 0; b < s.b; ++b) {
        for (int i = 0; i < s.c; ++i) {
            const int src = (i % g) * per + i / g;
            const T* xp = x.plane(b, src);
            T* yp = y.plane(b, i);
            for (int k = 0; k < HW; ++k) yp[k] = xp[k];
        }
    }
    return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape s = x.shape();
    if (s.h * s.w < 1) throw std::invalid_argument("global_avg_pool on empty plane");
    Tensor<T> y(s.b, s.c, 1, 1);
    const int HW = s.h * s.w;
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c)
            y.at(b, c, 0, 0) = detail::sum_lanes(x.plane(b, c), HW) / static_cast<T>(HW);
    return y;
}

// Per-sample flattened feature vector; numerically identical to
// global_avg_pool, shape (B, C, 1, 1) read as (B, C).
template <typename T>
Tensor<T> adaptive_avg_pool_1x1(const Tensor<T>& x) {
    return global_avg_pool(x);
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels of empty list");
    Shape s0 = parts[0].shape();
    int ctot = 0;
    for (const auto& t : parts) {
        const Shape s = t.shape();
        if (s.b != s0.b || s.h != s0.h || s.w != s0.w)
            throw std::invalid_argument(detail::format_msg(
                "concat_channels shape mismatch: ", s.str(), " vs ", s0.str()));
        ctot += s.c;
    }
    Tensor<T> y(s0.b, ctot, s0.h, s0.w);
    const int HW = s0.h * s0.w;
    for (int b = 0; b < s0.b; ++b) {
        int co = 0;
        for (const auto& t : parts) {
            for (int c = 0; c < t.shape().c; ++c, ++co) {
                const T* xp = t.plane(b, c);
                T* yp = y.plane(b, co);
                for (int i = 0; i < HW; ++i) yp[i] = xp[i];
            }
        }
    }
    return y;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<int>& widths) {
    const Shape s = x.shape();
    int sum = 0;
    for (int w : widths) {
        if (w < 0) throw std::invalid_argument("split_channels width must be >= 0");
        sum += w;
    }
    if (sum != s.c)
        throw std::invalid_argument(detail::format_msg(
            "split_channels widths sum ", sum, " != channels ", s.c));
    std::vector<Tensor<T>> parts;
    parts.reserve(widths.size());
    const int HW = s.h * s.w;
    int c0 = 0;
    for (int w : widths) {
        Tensor<T> t(s.b, w, s.h, s.w);
        for (int b = 0; b < s.b; ++b)
            for (int c = 0; c < w; ++c) {
                const T* xp = x.plane(b, c0 + c);
                T* yp = t.plane(b, c);
                for (int i = 0; i < HW; ++i) yp[i] = xp[i];
            }
        parts.push_back(std::move(t));
        c0 += w;
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Elementwise, activations, softmax
// ---------------------------------------------------------------------------

enum class EwKind { add, mul, max, sub, min };
enum class ActKind { relu, gelu, sigmoid };

namespace detail {

// Shapes must match exactly, or one operand may be (B, C, 1, 1) against the
// other's (B, C, H, W); the small operand broadcasts over the plane.
template <typename T>
inline int broadcast_mode(const Shape& a, const Shape& b) {
    if (a == b) return 0;
    if (a.b == b.b && a.c == b.c && b.h == 1 && b.w == 1) return 1; // b broadcasts
    if (a.b == b.b && a.c == b.c && a.h == 1 && a.w == 1) return 2; // a broadcasts
    throw std::invalid_argument(format_msg(
        "elementwise shapes incompatible: ", a.str(), " vs ", b.str()));
}

} // namespace detail

namespace detail {

template <typename T, typename F>
Tensor<T> ew_apply(const Tensor<T>& a, const Tensor<T>& b, int mode, F&& f) {
    const Shape os = mode == 2 ? b.shape() : a.shape();
    Tensor<T> y(os);
    const int HW = os.h * os.w;
    MLC_OMP_FOR(1LL * os.b * os.c * HW > (1 << 15))
    for (int bb = 0; bb < os.b; ++bb) {
        for (int c = 0; c < os.c; ++c) {
            T* yp = y.plane(bb, c);
            if (mode == 0) {
                const T* ap = a.plane(bb, c);
                const T* bp = b.plane(bb, c);
                for (int i = 0; i < HW; ++i) yp[i] = f(ap[i], bp[i]);
            } else if (mode == 1) {
                const T* ap = a.plane(bb, c);
                const T bv = b.at(bb, c, 0, 0);
                for (int i = 0; i < HW; ++i) yp[i] = f(ap[i], bv);
            } else {
                const T av = a.at(bb, c, 0, 0);
                const T* bp = b.plane(bb, c);
                for (int i = 0; i < HW; ++i) yp[i] = f(av, bp[i]);
            }
        }
    }
    return y;
}

} // namespace detail

template <typename T>
Tensor<T> elementwise(EwKind kind, const Tensor<T>& a, const Tensor<T>& b) {
    const int mode = detail::broadcast_mode<T>(a.shape(), b.shape());
    Tensor<T> y;
    switch (kind) {
        case EwKind::add:
            y = detail::ew_apply(a, b, mode, [](T u, T v) { return u + v; });
            break;
        case EwKind::mul:
            y = detail::ew_apply(a, b, mode, [](T u, T v) { return u * v; });
            break;
        case EwKind::max:
            y = detail::ew_apply(a, b, mode, [](T u, T v) { return u >= v ? u : v; });
            break;
        case EwKind::min:
            y = detail::ew_apply(a, b, mode, [](T u, T v) { return u <= v ? u : v; });
            break;
        case EwKind::sub:
            y = detail::ew_apply(a, b, mode, [](T u, T v) { return u - v; });
            break;
    }
    check_finite(y, "elementwise");
    return y;
}

template <typename T>
inline T gelu_scalar(T x) {
    return static_cast<T>(0.5) * x * (T(1) + std::erf(x * static_cast<T>(0.7071067811865475244)));
}
template <typename T>
inline T gelu_grad_scalar(T x) {
    const T cdf = static_cast<T>(0.5) * (T(1) + std::erf(x * static_cast<T>(0.7071067811865475244)));
    const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(0.3989422804014326779);
    return cdf + x * pdf;
}
template <typename T>
inline T sigmoid_scalar(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Tensor<T> activation(ActKind kind, const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    const long long n = static_cast<long long>(x.size());
    switch (kind) {
        case ActKind::relu:
            MLC_OMP_FOR(n > (1 << 15))
            for (long long i = 0; i < n; ++i)
                y[static_cast<std::size_t>(i)] =
                    x[static_cast<std::size_t>(i)] > T(0) ? x[static_cast<std::size_t>(i)] : T(0);
            break;
        case ActKind::gelu:
            MLC_OMP_FOR(n > (1 << 12))
            for (long long i = 0; i < n; ++i)
                y[static_cast<std::size_t>(i)] = gelu_scalar(x[static_cast<std::size_t>(i)]);
            break;
        case ActKind::sigmoid:
            MLC_OMP_FOR(n > (1 << 12))
            for (long long i = 0; i < n; ++i)
                y[static_cast<std::size_t>(i)] = sigmoid_scalar(x[static_cast<std::size_t>(i)]);
            break;
    }
    check_finite(y, "activation");
    return y;
}

// Row-wise softmax over a (B, K, 1, 1) tensor, stabilized by max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    const Shape s = logits.shape();
    if (s.h != 1 || s.w != 1)
        throw std::invalid_argument("softmax expects a (B, K, 1, 1) tensor");
    Tensor<T> y(s);
    for (int b = 0; b < s.b; ++b) {
        T mx = logits.at(b, 0, 0, 0);
        for (int k = 1; k < s.c; ++k) mx = std::max(mx, logits.at(b, k, 0, 0));
        T sum = T(0);
        for (int k = 0; k < s.c; ++k) {
            const T e = std::exp(logits.at(b, k, 0, 0) - mx);
            y.at(b, k, 0, 0) = e;
            sum += e;
        }
        for (int k = 0; k < s.c; ++k) y.at(b, k, 0, 0) /= sum;
    }
    return y;
}

} // namespace mlc
