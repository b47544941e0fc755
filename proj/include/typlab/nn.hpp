#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "typlab/common.hpp"
#include "typlab/tensor.hpp"

namespace typlab::nn {

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value;
    Tensor<T>* grad;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
void zero_grads(ParamList<T>& params) {
    for (auto& p : params) p.grad->zero();
}

template <typename T>
std::size_t param_count(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value->numel();
    return n;
}

// ---------------------------------------------------------------------------
// 2D convolution over [C, H, W] maps, stride 1 or 2, zero padding.
// Forward caches its input; backward must follow the matching forward.
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2d {
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    Tensor<T> w, b, gw, gb;
    Tensor<T> x_cache;

    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride_ = 1, int pad_ = -1)
        : in_c(in_channels),
          out_c(out_channels),
          k(kernel),
          stride(stride_),
          pad(pad_ < 0 ? kernel / 2 : pad_),
          w(Tensor<T>({out_channels, in_channels, kernel, kernel})),
          b(Tensor<T>({out_channels})),
          gw(Tensor<T>(w.shape)),
          gb(Tensor<T>(b.shape)) {}

    void init(Rng& rng) {
        const double std = std::sqrt(2.0 / (in_c * k * k));
        for (auto& v : w.data) v = static_cast<T>(rng.normal() * std);
        b.zero();
    }
    void zero_init() {
        w.zero();
        b.zero();
    }

    int out_dim(int in) const { return (in + 2 * pad - k) / stride + 1; }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.dim(0) != in_c) throw ShapeError("Conv2d: expected " + std::to_string(in_c) +
                                               " input channels, got " + std::to_string(x.dim(0)));
        x_cache = x;
        const int h = x.dim(1), wd = x.dim(2);
        const int oh = out_dim(h), ow = out_dim(wd);
        if (k == 3 && stride == 1 && pad == 1 && wd >= 2) return forward3x3(x, h, wd);
        Tensor<T> y({out_c, oh, ow});
        for (int oc = 0; oc < out_c; ++oc) {
            T* __restrict__ yb = &y.data[static_cast<std::size_t>(oc) * oh * ow];
            const T bias = b.data[static_cast<std::size_t>(oc)];
            for (int i = 0; i < oh * ow; ++i) yb[i] = bias;
            for (int ic = 0; ic < in_c; ++ic) {
                const T* __restrict__ xb = &x.data[static_cast<std::size_t>(ic) * h * wd];
                const T* __restrict__ wb =
                    &w.data[((static_cast<std::size_t>(oc) * in_c + ic) * k) * k];
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wb[ky * k + kx];
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            T* __restrict__ yrow = yb + static_cast<std::size_t>(oy) * ow;
                            const T* __restrict__ xrow = xb + static_cast<std::size_t>(iy) * wd;
                            if (stride == 1) {
                                const int off = kx - pad;
                                const int x0 = std::max(0, -off);
                                const int x1 = std::min(ow, wd - off);
                                for (int ox = x0; ox < x1; ++ox) yrow[ox] += wv * xrow[ox + off];
                            } else {
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int ix = ox * stride + kx - pad;
                                    if (ix >= 0 && ix < wd) yrow[ox] += wv * xrow[ix];
                                }
                            }
                        }
                    }
            }
        }
        return y;
    }

    /// Fused-tap fast path for the ubiquitous 3x3 stride-1 case.
    Tensor<T> forward3x3(const Tensor<T>& x, int h, int wd) {
        Tensor<T> y({out_c, h, wd});
        for (int oc = 0; oc < out_c; ++oc) {
            T* __restrict__ yb = &y.data[static_cast<std::size_t>(oc) * h * wd];
            const T bias = b.data[static_cast<std::size_t>(oc)];
            for (int i = 0; i < h * wd; ++i) yb[i] = bias;
            for (int ic = 0; ic < in_c; ++ic) {
                const T* __restrict__ xb = &x.data[static_cast<std::size_t>(ic) * h * wd];
                const T* __restrict__ wb =
                    &w.data[((static_cast<std::size_t>(oc) * in_c + ic) * 3) * 3];
                for (int ky = 0; ky < 3; ++ky) {
                    const T w0 = wb[ky * 3 + 0], w1 = wb[ky * 3 + 1], w2 = wb[ky * 3 + 2];
                    for (int oy = 0; oy < h; ++oy) {
                        const int iy = oy + ky - 1;
                        if (iy < 0 || iy >= h) continue;
                        T* __restrict__ yrow = yb + static_cast<std::size_t>(oy) * wd;
                        const T* __restrict__ xrow = xb + static_cast<std::size_t>(iy) * wd;
                        yrow[0] += w1 * xrow[0] + w2 * xrow[1];
                        for (int ox = 1; ox < wd - 1; ++ox)
                            yrow[ox] += w0 * xrow[ox - 1] + w1 * xrow[ox] + w2 * xrow[ox + 1];
                        yrow[wd - 1] += w0 * xrow[wd - 2] + w1 * xrow[wd - 1];
                    }
                }
            }
        }
        return y;
    }

    Tensor<T> backward3x3(const Tensor<T>& gy, int h, int wd) {
        const Tensor<T>& x = x_cache;
        Tensor<T> gx(x.shape);
        for (int oc = 0; oc < out_c; ++oc) {
            const T* __restrict__ gyb = &gy.data[static_cast<std::size_t>(oc) * h * wd];
            T acc = T(0);
            for (int i = 0; i < h * wd; ++i) acc += gyb[i];
            gb.data[static_cast<std::size_t>(oc)] += acc;
            for (int ic = 0; ic < in_c; ++ic) {
                const T* __restrict__ xb = &x.data[static_cast<std::size_t>(ic) * h * wd];
                T* __restrict__ gxb = &gx.data[static_cast<std::size_t>(ic) * h * wd];
                const std::size_t wbase = ((static_cast<std::size_t>(oc) * in_c + ic) * 3) * 3;
                T gw_acc[9] = {};
                for (int ky = 0; ky < 3; ++ky) {
                    const T w0 = w.data[wbase + ky * 3 + 0];
                    const T w1 = w.data[wbase + ky * 3 + 1];
                    const T w2 = w.data[wbase + ky * 3 + 2];
                    for (int oy = 0; oy < h; ++oy) {
                        const int iy = oy + ky - 1;
                        if (iy < 0 || iy >= h) continue;
                        const T* __restrict__ gyrow = gyb + static_cast<std::size_t>(oy) * wd;
                        const T* __restrict__ xrow = xb + static_cast<std::size_t>(iy) * wd;
                        T* __restrict__ gxrow = gxb + static_cast<std::size_t>(iy) * wd;
                        // dX as a correlation with the flipped taps: no
                        // overlapping writes, single pass
                        gxrow[0] += w0 * gyrow[1] + w1 * gyrow[0];
                        for (int ix = 1; ix < wd - 1; ++ix)
                            gxrow[ix] += w0 * gyrow[ix + 1] + w1 * gyrow[ix] + w2 * gyrow[ix - 1];
                        gxrow[wd - 1] += w1 * gyrow[wd - 1] + w2 * gyrow[wd - 2];
                        // three tap reductions in the same pass
                        T a0 = 0, a1 = 0, a2 = 0;
                        a1 += xrow[0] * gyrow[0];
                        a0 += xrow[0] * gyrow[1];
                        for (int ox = 1; ox < wd - 1; ++ox) {
                            a0 += xrow[ox] * gyrow[ox + 1];
                            a1 += xrow[ox] * gyrow[ox];
                            a2 += xrow[ox] * gyrow[ox - 1];
                        }
                        a1 += xrow[wd - 1] * gyrow[wd - 1];
                        a2 += xrow[wd - 1] * gyrow[wd - 2];
                        gw_acc[ky * 3 + 0] += a0;
                        gw_acc[ky * 3 + 1] += a1;
                        gw_acc[ky * 3 + 2] += a2;
                    }
                }
                for (int i = 0; i < 9; ++i) gw.data[wbase + i] += gw_acc[i];
            }
        }
        return gx;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const Tensor<T>& x = x_cache;
        const int h = x.dim(1), wd = x.dim(2);
        const int oh = gy.dim(1), ow = gy.dim(2);
        if (k == 3 && stride == 1 && pad == 1 && wd >= 2) return backward3x3(gy, h, wd);
        Tensor<T> gx(x.shape);
        for (int oc = 0; oc < out_c; ++oc) {
            const T* __restrict__ gyb = &gy.data[static_cast<std::size_t>(oc) * oh * ow];
            T acc = T(0);
            for (int i = 0; i < oh * ow; ++i) acc += gyb[i];
            gb.data[static_cast<std::size_t>(oc)] += acc;
            for (int ic = 0; ic < in_c; ++ic) {
                const T* __restrict__ xb = &x.data[static_cast<std::size_t>(ic) * h * wd];
                T* __restrict__ gxb = &gx.data[static_cast<std::size_t>(ic) * h * wd];
                const std::size_t wbase = ((static_cast<std::size_t>(oc) * in_c + ic) * k) * k;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = w.data[wbase + ky * k + kx];
                        T gw_acc = T(0);
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const T* __restrict__ gyrow = gyb + static_cast<std::size_t>(oy) * ow;
                            const T* __restrict__ xrow = xb + static_cast<std::size_t>(iy) * wd;
                            T* __restrict__ gxrow = gxb + static_cast<std::size_t>(iy) * wd;
                            if (stride == 1) {
                                const int off = kx - pad;
                                const int x0 = std::max(0, -off);
                                const int x1 = std::min(ow, wd - off);
                                for (int ox = x0; ox < x1; ++ox) {
                                    gw_acc += xrow[ox + off] * gyrow[ox];
                                    gxrow[ox + off] += wv * gyrow[ox];
                                }
                            } else {
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= wd) continue;
                                    gw_acc += xrow[ix] * gyrow[ox];
                                    gxrow[ix] += wv * gyrow[ox];
                                }
                            }
                        }
                        gw.data[wbase + ky * k + kx] += gw_acc;
                    }
            }
        }
        return gx;
    }

    void collect(ParamList<T>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w, &gw});
        out.push_back({prefix + ".b", &b, &gb});
    }
};

// ---------------------------------------------------------------------------
// Nearest-neighbor 2x upsampling
// ---------------------------------------------------------------------------

template <typename T>
struct Upsample2x {
    std::vector<int> in_shape;

    Tensor<T> forward(const Tensor<T>& x) {
        in_shape = x.shape;
        const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        Tensor<T> y({c, h * 2, w * 2});
        for (int ci = 0; ci < c; ++ci)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < w; ++ix) {
                    const T v = x.at(ci, iy, ix);
                    y.at(ci, 2 * iy, 2 * ix) = v;
                    y.at(ci, 2 * iy, 2 * ix + 1) = v;
                    y.at(ci, 2 * iy + 1, 2 * ix) = v;
                    y.at(ci, 2 * iy + 1, 2 * ix + 1) = v;
                }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(in_shape);
        const int c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
        for (int ci = 0; ci < c; ++ci)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < w; ++ix)
                    gx.at(ci, iy, ix) = gy.at(ci, 2 * iy, 2 * ix) + gy.at(ci, 2 * iy, 2 * ix + 1) +
                                        gy.at(ci, 2 * iy + 1, 2 * ix) +
                                        gy.at(ci, 2 * iy + 1, 2 * ix + 1);
        return gx;
    }
};

/// Nearest-neighbor resize to an arbitrary target size (identity when the
/// target matches); backward is the exact adjoint.
template <typename T>
struct NearestResize {
    std::vector<int> in_shape;
    int oh = 0, ow = 0;

    Tensor<T> forward(const Tensor<T>& x, int oh_, int ow_) {
        in_shape = x.shape;
        oh = oh_;
        ow = ow_;
        const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        Tensor<T> y({c, oh, ow});
        for (int ci = 0; ci < c; ++ci)
            for (int iy = 0; iy < oh; ++iy)
                for (int ix = 0; ix < ow; ++ix)
                    y.at(ci, iy, ix) = x.at(ci, iy * h / oh, ix * w / ow);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(in_shape);
        const int c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
        for (int ci = 0; ci < c; ++ci)
            for (int iy = 0; iy < oh; ++iy)
                for (int ix = 0; ix < ow; ++ix)
                    gx.at(ci, iy * h / oh, ix * w / ow) += gy.at(ci, iy, ix);
        return gx;
    }
};

/// Rearranges [C*r^2, H, W] into [C, H*r, W*r] (r = 2).
template <typename T>
struct DepthToSpace2 {
    std::vector<int> in_shape;

    Tensor<T> forward(const Tensor<T>& x) {
        in_shape = x.shape;
        const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
        if (c_in % 4 != 0) throw ShapeError("DepthToSpace2: channels must be divisible by 4");
        const int c = c_in / 4;
        Tensor<T> y({c, h * 2, w * 2});
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    for (int iy = 0; iy < h; ++iy)
                        for (int ix = 0; ix < w; ++ix)
                            y.at(ci, 2 * iy + dy, 2 * ix + dx) =
                                x.at(ci * 4 + dy * 2 + dx, iy, ix);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(in_shape);
        const int c = gy.dim(0), h = in_shape[1], w = in_shape[2];
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    for (int iy = 0; iy < h; ++iy)
                        for (int ix = 0; ix < w; ++ix)
                            gx.at(ci * 4 + dy * 2 + dx, iy, ix) =
                                gy.at(ci, 2 * iy + dy, 2 * ix + dx);
        return gx;
    }
};

// ---------------------------------------------------------------------------
// GroupNorm with per-channel affine parameters
// ---------------------------------------------------------------------------

template <typename T>
struct GroupNorm {
    int channels = 0, groups = 1;
    double eps = 1e-5;
    Tensor<T> gamma, beta, ggamma, gbeta;
    Tensor<T> xhat_cache;
    std::vector<T> inv_std_cache;

    GroupNorm() = default;
    explicit GroupNorm(int channels_, int groups_ = -1)
        : channels(channels_),
          groups(groups_ > 0 ? groups_ : std::min(8, channels_)),
          gamma(Tensor<T>({channels_})),
          beta(Tensor<T>({channels_})),
          ggamma(Tensor<T>({channels_})),
          gbeta(Tensor<T>({channels_})) {
        while (channels % groups != 0) --groups;  // keep divisibility
        gamma.fill(T(1));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.dim(0) != channels) throw ShapeError("GroupNorm: channel mismatch");
        const int h = x.dim(1), w = x.dim(2);
        const int gs = channels / groups;
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        Tensor<T> y(x.shape);
        xhat_cache = Tensor<T>(x.shape);
        inv_std_cache.assign(static_cast<std::size_t>(groups), T(0));
        for (int g = 0; g < groups; ++g) {
            const std::size_t base = static_cast<std::size_t>(g) * gs * plane;
            const std::size_t n = static_cast<std::size_t>(gs) * plane;
            T mean = 0;
            for (std::size_t i = 0; i < n; ++i) mean += x.data[base + i];
            mean /= static_cast<T>(n);
            T var = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const T d = x.data[base + i] - mean;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T inv_std = T(1) / std::sqrt(var + static_cast<T>(eps));
            inv_std_cache[static_cast<std::size_t>(g)] = inv_std;
            for (int c = 0; c < gs; ++c) {
                const int ch = g * gs + c;
                const T gm = gamma.data[static_cast<std::size_t>(ch)];
                const T bt = beta.data[static_cast<std::size_t>(ch)];
                const std::size_t cb = static_cast<std::size_t>(ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T xh = (x.data[cb + i] - mean) * inv_std;
                    xhat_cache.data[cb + i] = xh;
                    y.data[cb + i] = gm * xh + bt;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        const int h = gy.dim(1), w = gy.dim(2);
        const int gs = channels / groups;
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        Tensor<T> gx(gy.shape);
        for (int g = 0; g < groups; ++g) {
            const std::size_t n = static_cast<std::size_t>(gs) * plane;
            const T inv_std = inv_std_cache[static_cast<std::size_t>(g)];
            T sum_dxhat = 0, sum_dxhat_xhat = 0;
            for (int c = 0; c < gs; ++c) {
                const int ch = g * gs + c;
                const T gm = gamma.data[static_cast<std::size_t>(ch)];
                const std::size_t cb = static_cast<std::size_t>(ch) * plane;
                T dg = 0, db = 0;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T dy = gy.data[cb + i];
                    const T xh = xhat_cache.data[cb + i];
                    dg += dy * xh;
                    db += dy;
                    const T dxhat = dy * gm;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xh;
                }
                ggamma.data[static_cast<std::size_t>(ch)] += dg;
                gbeta.data[static_cast<std::size_t>(ch)] += db;
            }
            const T mean_dxhat = sum_dxhat / static_cast<T>(n);
            const T mean_dxhat_xhat = sum_dxhat_xhat / static_cast<T>(n);
            for (int c = 0; c < gs; ++c) {
                const int ch = g * gs + c;
                const T gm = gamma.data[static_cast<std::size_t>(ch)];
                const std::size_t cb = static_cast<std::size_t>(ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T dxhat = gy.data[cb + i] * gm;
                    const T xh = xhat_cache.data[cb + i];
                    gx.data[cb + i] = inv_std * (dxhat - mean_dxhat - xh * mean_dxhat_xhat);
                }
            }
        }
        return gx;
    }

    void collect(ParamList<T>& out, const std::string& prefix) {
        out.push_back({prefix + ".gamma", &gamma, &ggamma});
        out.push_back({prefix + ".beta", &beta, &gbeta});
    }
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
struct SiLU {
    Tensor<T> x_cache;

    Tensor<T> forward(const Tensor<T>& x) {
        x_cache = x;
        Tensor<T> y(x.shape);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-x.data[i]));
            y.data[i] = x.data[i] * s;
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(gy.shape);
        for (std::size_t i = 0; i < gy.numel(); ++i) {
            const T x = x_cache.data[i];
            const T s = T(1) / (T(1) + std::exp(-x));
            gx.data[i] = gy.data[i] * s * (T(1) + x * (T(1) - s));
        }
        return gx;
    }
};

template <typename T>
struct LeakyReLU {
    double slope = 0.2;
    Tensor<T> x_cache;

    Tensor<T> forward(const Tensor<T>& x) {
        x_cache = x;
        Tensor<T> y(x.shape);
        for (std::size_t i = 0; i < x.numel(); ++i)
            y.data[i] = x.data[i] > T(0) ? x.data[i] : static_cast<T>(slope) * x.data[i];
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(gy.shape);
        for (std::size_t i = 0; i < gy.numel(); ++i)
            gx.data[i] = x_cache.data[i] > T(0) ? gy.data[i] : static_cast<T>(slope) * gy.data[i];
        return gx;
    }
};

// ---------------------------------------------------------------------------
// Fully connected layer on flat vectors
// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
    int in_n = 0, out_n = 0;
    Tensor<T> w, b, gw, gb;
    Tensor<T> x_cache;

    Linear() = default;
    Linear(int in, int out)
        : in_n(in),
          out_n(out),
          w(Tensor<T>({out, in})),
          b(Tensor<T>({out})),
          gw(Tensor<T>(w.shape)),
          gb(Tensor<T>(b.shape)) {}

    void init(Rng& rng) {
        const double std = std::sqrt(2.0 / in_n);
        for (auto& v : w.data) v = static_cast<T>(rng.normal() * std);
        b.zero();
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (static_cast<int>(x.numel()) != in_n) throw ShapeError("Linear: input size mismatch");
        x_cache = x;
        Tensor<T> y({out_n});
        for (int o = 0; o < out_n; ++o) {
            T acc = b.data[static_cast<std::size_t>(o)];
            const T* wr = &w.data[static_cast<std::size_t>(o) * in_n];
            for (int i = 0; i < in_n; ++i) acc += wr[i] * x.data[static_cast<std::size_t>(i)];
            y.data[static_cast<std::size_t>(o)] = acc;
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx({in_n});
        for (int o = 0; o < out_n; ++o) {
            const T g = gy.data[static_cast<std::size_t>(o)];
            gb.data[static_cast<std::size_t>(o)] += g;
            const T* wr = &w.data[static_cast<std::size_t>(o) * in_n];
            T* gwr = &gw.data[static_cast<std::size_t>(o) * in_n];
            for (int i = 0; i < in_n; ++i) {
                gwr[i] += g * x_cache.data[static_cast<std::size_t>(i)];
                gx.data[static_cast<std::size_t>(i)] += g * wr[i];
            }
        }
        return gx;
    }

    void collect(ParamList<T>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w, &gw});
        out.push_back({prefix + ".b", &b, &gb});
    }
};

// ---------------------------------------------------------------------------
// Adam optimizer over a parameter list
// ---------------------------------------------------------------------------

template <typename T>
struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step_count = 0;
    std::vector<std::vector<double>> m, v;

    explicit Adam(double lr_ = 1e-3) : lr(lr_) {}

    void step(ParamList<T>& params) {
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m[i].assign(params[i].value->numel(), 0.0);
                v[i].assign(params[i].value->numel(), 0.0);
            }
        }
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, step_count);
        const double bc2 = 1.0 - std::pow(beta2, step_count);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& value = *params[i].value;
            const Tensor<T>& grad = *params[i].grad;
            for (std::size_t j = 0; j < value.numel(); ++j) {
                const double g = static_cast<double>(grad.data[j]);
                m[i][j] = beta1 * m[i][j] + (1 - beta1) * g;
                v[i][j] = beta2 * v[i][j] + (1 - beta2) * g * g;
                const double mh = m[i][j] / bc1;
                const double vh = v[i][j] / bc2;
                value.data[j] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps));
            }
        }
    }
};

/// Sinusoidal position embedding of an integer timestep.
template <typename T>
Tensor<T> timestep_embedding(int t, int dim) {
    Tensor<T> emb({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        emb.data[static_cast<std::size_t>(i)] = static_cast<T>(std::sin(t * freq));
        emb.data[static_cast<std::size_t>(half + i)] = static_cast<T>(std::cos(t * freq));
    }
    return emb;
}

/// Channel concatenation of two [C,H,W] maps.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw ShapeError("concat_channels: spatial dims differ");
    Tensor<T> y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.numel()));
    return y;
}

template <typename T>
void split_channels(const Tensor<T>& g, Tensor<T>& ga, Tensor<T>& gb) {
    std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(ga.numel()),
              ga.data.begin());
    std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(ga.numel()), g.data.end(),
              gb.data.begin());
}

/// Nearest-neighbor spatial resize (used to align condition maps with the
/// latent resolution).
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int oh, int ow) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h == oh && w == ow) return x;
    Tensor<T> y({c, oh, ow});
    for (int ci = 0; ci < c; ++ci)
        for (int iy = 0; iy < oh; ++iy)
            for (int ix = 0; ix < ow; ++ix)
                y.at(ci, iy, ix) = x.at(ci, iy * h / oh, ix * w / ow);
    return y;
}

}  // namespace typlab::nn
