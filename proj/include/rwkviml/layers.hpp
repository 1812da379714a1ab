#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rwkviml/rng.hpp"
#include "rwkviml/tensor.hpp"

namespace iml {

// Modules cache whatever the backward pass needs during forward, so the call
// pattern is strictly forward(x) then backward(dy) per sample; gradients
// accumulate until zero_grad.

template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;

    void init(std::vector<int> shape) {
        value = Tensor<T>(shape);
        grad = Tensor<T>(std::move(shape));
    }
    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
struct ParamRef {
    std::string name;
    Param<T>* p;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

// ---- linear ----------------------------------------------------------------

template <typename T>
struct Linear {
    Param<T> weight;  // (in, out)
    Param<T> bias;    // (out)
    int in = 0, out = 0;

    void init(int in_c, int out_c, Rng& rng) {
        in = in_c;
        out = out_c;
        weight.init({in_c, out_c});
        bias.init({out_c});
        const double s = std::sqrt(2.0 / (in_c + out_c));
        for (std::int64_t i = 0; i < weight.value.numel(); ++i)
            weight.value[i] = static_cast<T>(rng.normal() * s);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        in_shape_ = x.shape();
        const int rows = static_cast<int>(x.numel() / in);
        x2_ = x.reshaped({rows, in});
        auto y = matmul(x2_, weight.value);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < out; ++c) y.at(r, c) += bias.value[c];
        auto os = in_shape_;
        os.back() = out;
        return y.reshaped(os);
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int rows = x2_.dim(0);
        auto dy2 = dy.reshaped({rows, out});
        auto dw = matmul_tn(x2_, dy2);
        for (std::int64_t i = 0; i < dw.numel(); ++i) weight.grad[i] += dw[i];
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < out; ++c) bias.grad[c] += dy2.at(r, c);
        auto dx = matmul_nt(dy2, weight.value);
        return dx.reshaped(in_shape_);
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        out_list.push_back({prefix + ".weight", &weight});
        out_list.push_back({prefix + ".bias", &bias});
    }

private:
    Tensor<T> x2_;
    std::vector<int> in_shape_;
};

// ---- full conv (im2col + GEMM) ----------------------------------------------

template <typename T>
struct Conv2d {
    Param<T> weight;  // (K*K*in, out); row index (ky*K + kx)*in + ci
    Param<T> bias;    // (out)
    int in = 0, out = 0, k = 0, stride = 1;

    void init(int in_c, int out_c, int kernel, int stride_, Rng& rng) {
        in = in_c;
        out = out_c;
        k = kernel;
        stride = stride_;
        weight.init({k * k * in_c, out_c});
        bias.init({out_c});
        const double s = std::sqrt(2.0 / (static_cast<double>(k) * k * in_c));
        for (std::int64_t i = 0; i < weight.value.numel(); ++i)
            weight.value[i] = static_cast<T>(rng.normal() * s);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (x.rank() != 3 || x.dim(2) != in)
            throw ShapeError("conv2d: want (H,W," + std::to_string(in) + "), got " +
                             shape_str(x.shape()));
        h_ = x.dim(0);
        w_ = x.dim(1);
        ho_ = (h_ + stride - 1) / stride;
        wo_ = (w_ + stride - 1) / stride;
        const int pad = k / 2;
        col_ = Tensor<T>({ho_ * wo_, k * k * in});
        for (int oy = 0; oy < ho_; ++oy)
            for (int ox = 0; ox < wo_; ++ox) {
                T* row = col_.data() + (static_cast<std::int64_t>(oy) * wo_ + ox) * (k * k * in);
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        T* dst = row + (ky * k + kx) * in;
                        if (iy < 0 || iy >= h_ || ix < 0 || ix >= w_) {
                            for (int ci = 0; ci < in; ++ci) dst[ci] = T(0);
                        } else {
                            const T* src = &x.at(iy, ix, 0);
                            for (int ci = 0; ci < in; ++ci) dst[ci] = src[ci];
                        }
                    }
                }
            }
        auto y = matmul(col_, weight.value);
        for (int r = 0; r < ho_ * wo_; ++r)
            for (int c = 0; c < out; ++c) y.at(r, c) += bias.value[c];
        return y.reshaped({ho_, wo_, out});
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        auto dy2 = dy.reshaped({ho_ * wo_, out});
        auto dw = matmul_tn(col_, dy2);
        for (std::int64_t i = 0; i < dw.numel(); ++i) weight.grad[i] += dw[i];
        for (int r = 0; r < ho_ * wo_; ++r)
            for (int c = 0; c < out; ++c) bias.grad[c] += dy2.at(r, c);
        auto dcol = matmul_nt(dy2, weight.value);
        Tensor<T> dx({h_, w_, in});
        const int pad = k / 2;
        for (int oy = 0; oy < ho_; ++oy)
            for (int ox = 0; ox < wo_; ++ox) {
                const T* row = dcol.data() + (static_cast<std::int64_t>(oy) * wo_ + ox) * (k * k * in);
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h_) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w_) continue;
                        const T* src = row + (ky * k + kx) * in;
                        T* dst = &dx.at(iy, ix, 0);
                        for (int ci = 0; ci < in; ++ci) dst[ci] += src[ci];
                    }
                }
            }
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        out_list.push_back({prefix + ".weight", &weight});
        out_list.push_back({prefix + ".bias", &bias});
    }

private:
    Tensor<T> col_;
    int h_ = 0, w_ = 0, ho_ = 0, wo_ = 0;
};

// ---- depthwise conv ----------------------------------------------------------

template <typename T>
struct DepthwiseConv2d {
    Param<T> weight;  // (K, K, C)
    Param<T> bias;    // (C)
    int channels = 0, k = 0, stride = 1;

    void init(int c, int kernel, int stride_, Rng& rng) {
        channels = c;
        k = kernel;
        stride = stride_;
        weight.init({k, k, c});
        bias.init({c});
        const double s = std::sqrt(2.0 / (static_cast<double>(k) * k));
        for (std::int64_t i = 0; i < weight.value.numel(); ++i)
            weight.value[i] = static_cast<T>(rng.normal() * s);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        auto y = depthwise_conv2d(x, weight.value, stride);
        for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += bias.value[i % channels];
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int h = x_.dim(0), w = x_.dim(1);
        const int ho = dy.dim(0), wo = dy.dim(1);
        const int pad = k / 2;
        Tensor<T> dx(x_.shape());
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox)
                for (int c = 0; c < channels; ++c) {
                    const T g = dy.at(oy, ox, c);
                    bias.grad[c] += g;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= w) continue;
                            dx.at(iy, ix, c) += g * weight.value.at(ky, kx, c);
                            weight.grad.at(ky, kx, c) += g * x_.at(iy, ix, c);
                        }
                    }
                }
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        out_list.push_back({prefix + ".weight", &weight});
        out_list.push_back({prefix + ".bias", &bias});
    }

private:
    Tensor<T> x_;
};

// ---- layer norm ---------------------------------------------------------------

template <typename T>
struct LayerNorm {
    Param<T> gamma;
    Param<T> beta;
    int channels = 0;
    T eps = T(1e-5);

    void init(int c) {
        channels = c;
        gamma.init({c});
        beta.init({c});
        gamma.value.fill(T(1));
    }

    Tensor<T> forward(const Tensor<T>& x) {
        in_shape_ = x.shape();
        const int rows = static_cast<int>(x.numel() / channels);
        xhat_ = Tensor<T>({rows, channels});
        inv_ = Tensor<T>({rows});
        Tensor<T> y(x.shape());
        for (int r = 0; r < rows; ++r) {
            const T* xr = x.data() + static_cast<std::int64_t>(r) * channels;
            T mean = T(0);
            for (int i = 0; i < channels; ++i) mean += xr[i];
            mean /= T(channels);
            T var = T(0);
            for (int i = 0; i < channels; ++i) {
                const T d = xr[i] - mean;
                var += d * d;
            }
            var /= T(channels);
            const T inv = T(1) / std::sqrt(var + eps);
            inv_[r] = inv;
            T* hr = xhat_.data() + static_cast<std::int64_t>(r) * channels;
            T* yr = y.data() + static_cast<std::int64_t>(r) * channels;
            for (int i = 0; i < channels; ++i) {
                hr[i] = (xr[i] - mean) * inv;
                yr[i] = gamma.value[i] * hr[i] + beta.value[i];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int rows = xhat_.dim(0);
        Tensor<T> dx(in_shape_);
        for (int r = 0; r < rows; ++r) {
            const T* gr = dy.data() + static_cast<std::int64_t>(r) * channels;
            const T* hr = xhat_.data() + static_cast<std::int64_t>(r) * channels;
            T* dr = dx.data() + static_cast<std::int64_t>(r) * channels;
            T mean_t = T(0), mean_th = T(0);
            for (int i = 0; i < channels; ++i) {
                const T t = gr[i] * gamma.value[i];
                mean_t += t;
                mean_th += t * hr[i];
                gamma.grad[i] += gr[i] * hr[i];
                beta.grad[i] += gr[i];
            }
            mean_t /= T(channels);
            mean_th /= T(channels);
            const T inv = inv_[r];
            for (int i = 0; i < channels; ++i)
                dr[i] = inv * (gr[i] * gamma.value[i] - mean_t - hr[i] * mean_th);
        }
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out_list) {
        out_list.push_back({prefix + ".gamma", &gamma});
        out_list.push_back({prefix + ".beta", &beta});
    }

private:
    Tensor<T> xhat_, inv_;
    std::vector<int> in_shape_;
};

// ---- activations -------------------------------------------------------------

template <typename T>
T gelu_scalar(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865476)));
}

template <typename T>
T gelu_grad_scalar(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
    return cdf + x * pdf;
}

template <typename T>
struct Gelu {
    Tensor<T> forward(const Tensor<T>& x) {
        x_ = x;
        return map(x, [](T v) { return gelu_scalar(v); });
    }
    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> dx(dy.shape());
        for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * gelu_grad_scalar(x_[i]);
        return dx;
    }

private:
    Tensor<T> x_;
};

// ---- quad-directional token shift ---------------------------------------------
//
// Channel quarters move one pixel right / left / down / up; vacated borders
// are zero. Channels past the last full quarter pass through unshifted.

inline void qshift_group_delta(int group, int& dy, int& dx) {
    switch (group) {
        case 0: dy = 0; dx = 1; break;   // sample from the left neighbor
        case 1: dy = 0; dx = -1; break;  // from the right
        case 2: dy = 1; dx = 0; break;   // from above
        default: dy = -1; dx = 0; break; // from below
    }
}

template <typename T>
Tensor<T> qshift_apply(const Tensor<T>& x, int sign) {
    if (x.rank() != 3) throw ShapeError("qshift: want (H,W,C), got " + shape_str(x.shape()));
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const int q = c / 4;
    Tensor<T> out(x.shape());
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            for (int g = 0; g < 4; ++g) {
                int dy = 0, dx = 0;
                qshift_group_delta(g, dy, dx);
                const int sy = y - sign * dy;
                const int sx = xx - sign * dx;
                const bool ok = sy >= 0 && sy < h && sx >= 0 && sx < w;
                for (int ch = g * q; ch < (g + 1) * q; ++ch)
                    out.at(y, xx, ch) = ok ? x.at(sy, sx, ch) : T(0);
            }
            for (int ch = 4 * q; ch < c; ++ch) out.at(y, xx, ch) = x.at(y, xx, ch);
        }
    return out;
}

template <typename T>
Tensor<T> qshift(const Tensor<T>& x) {
    return qshift_apply(x, 1);
}

// transpose of the forward shift: every group moves the opposite way
template <typename T>
Tensor<T> qshift_backward(const Tensor<T>& dy) {
    return qshift_apply(dy, -1);
}

// ---- bilinear upsample gradient -------------------------------------------------

template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& dy, int h, int w, int factor) {
    const int c = dy.dim(2);
    Tensor<T> dx({h, w, c});
    if (factor == 1) return dy;
    const int ho = dy.dim(0), wo = dy.dim(1);
    for (int oy = 0; oy < ho; ++oy) {
        T sy = (T(oy) + T(0.5)) / T(factor) - T(0.5);
        sy = std::clamp(sy, T(0), T(h - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, h - 1);
        const T fy = sy - T(y0);
        for (int ox = 0; ox < wo; ++ox) {
            T sx = (T(ox) + T(0.5)) / T(factor) - T(0.5);
            sx = std::clamp(sx, T(0), T(w - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, w - 1);
            const T fx = sx - T(x0);
            for (int ch = 0; ch < c; ++ch) {
                const T g = dy.at(oy, ox, ch);
                dx.at(y0, x0, ch) += g * (T(1) - fx) * (T(1) - fy);
                dx.at(y0, x1, ch) += g * fx * (T(1) - fy);
                dx.at(y1, x0, ch) += g * (T(1) - fx) * fy;
                dx.at(y1, x1, ch) += g * fx * fy;
            }
        }
    }
    return dx;
}

}  // namespace iml
