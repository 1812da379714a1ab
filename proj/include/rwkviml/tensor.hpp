#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rwkviml/error.hpp"

namespace iml {

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major tensor. Spatial maps use channels-last (H, W, C) so the
// token scan in the WKV kernel walks memory contiguously.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<size_t>(numel()), T(0));
    }

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<std::int64_t>(data_.size()) != numel())
            throw ShapeError("tensor: data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int e : shape_) n *= e;
        return n;
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // rank-2 (rows, cols)
    T& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    const T& at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }

    // rank-3 (H, W, C)
    T& at(int y, int x, int c) {
        return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + c];
    }
    const T& at(int y, int x, int c) const {
        return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + c];
    }

    Tensor reshaped(std::vector<int> new_shape) const {
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.validate_shape();
        std::int64_t n = 1;
        for (int e : t.shape_) n *= e;
        if (n != numel())
            throw ShapeError("reshape: " + shape_str(shape_) + " -> " +
                             shape_str(t.shape_) + " changes element count");
        t.data_ = data_;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t = Tensor<U>(shape_);
        for (std::int64_t i = 0; i < numel(); ++i) t[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return t;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    void validate_shape() const {
        for (int e : shape_)
            if (e < 0) throw ShapeError("tensor: negative extent in shape " + shape_str(shape_));
        // Zero extents are tolerated so empty channel slices (e.g. an identity
        // branch of width 0) stay representable.
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape();
}

// ---- elementwise ops -------------------------------------------------------
//
// Broadcasting is deliberately narrow: equal shapes, a scalar right operand,
// or a right operand matching the trailing axis. Anything else is an error.

namespace detail {

enum class BroadcastKind { kSame, kScalar, kTrailing };

template <typename T>
BroadcastKind broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (same_shape(a, b)) return BroadcastKind::kSame;
    if (b.numel() == 1) return BroadcastKind::kScalar;
    if (b.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == b.dim(0))
        return BroadcastKind::kTrailing;
    throw ShapeError(std::string(op) + ": shapes not broadcastable: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <typename T, typename F>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, F f, const char* name) {
    auto kind = detail::broadcast_kind(a, b, name);
    Tensor<T> out(a.shape());
    const std::int64_t n = a.numel();
    switch (kind) {
        case detail::BroadcastKind::kSame:
            for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
            break;
        case detail::BroadcastKind::kScalar: {
            const T s = b[0];
            for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], s);
            break;
        }
        case detail::BroadcastKind::kTrailing: {
            const std::int64_t c = b.numel();
            for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i % c]);
            break;
        }
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, [](T x, T y) { return x + y; }, "add");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, [](T x, T y) { return x * y; }, "mul");
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F f) {
    Tensor<T> out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
    return out;
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return map(x, [](T v) { return sigmoid_scalar(v); });
}

template <typename T>
Tensor<T> exp_elem(const Tensor<T>& x) {
    return map(x, [](T v) { return std::exp(v); });
}

// ---- matmul ----------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// ---- layer norm (channel axis, per position) -------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    if (eps <= T(0)) throw ShapeError("layer_norm: eps must be > 0");
    const int c = x.dim(x.rank() - 1);
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("layer_norm: affine size mismatch: x " + shape_str(x.shape()) +
                         ", gamma " + shape_str(gamma.shape()));
    Tensor<T> out(x.shape());
    const std::int64_t rows = x.numel() / c;
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * c;
        T* yr = out.data() + r * c;
        T mean = T(0);
        for (int i = 0; i < c; ++i) mean += xr[i];
        mean /= T(c);
        T var = T(0);
        for (int i = 0; i < c; ++i) {
            const T d = xr[i] - mean;
            var += d * d;
        }
        var /= T(c);
        const T inv = T(1) / std::sqrt(var + eps);
        for (int i = 0; i < c; ++i) yr[i] = gamma[i] * ((xr[i] - mean) * inv) + beta[i];
    }
    return out;
}

// ---- depthwise conv --------------------------------------------------------

// Each channel is convolved with its own K x K kernel; zero padding keeps the
// output at ceil(H / stride).
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernels, int stride) {
    if (x.rank() != 3 || kernels.rank() != 3)
        throw ShapeError("depthwise_conv2d: want (H,W,C) input and (K,K,C) kernels, got " +
                         shape_str(x.shape()) + " and " + shape_str(kernels.shape()));
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const int k = kernels.dim(0);
    if (kernels.dim(1) != k || kernels.dim(2) != c)
        throw ShapeError("depthwise_conv2d: kernel shape " + shape_str(kernels.shape()) +
                         " does not match input " + shape_str(x.shape()));
    if (k % 2 == 0) throw ShapeError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
    if (stride != 1 && stride != 2)
        throw ShapeError("depthwise_conv2d: stride must be 1 or 2, got " + std::to_string(stride));
    const int pad = k / 2;
    const int ho = (h + stride - 1) / stride;
    const int wo = (w + stride - 1) / stride;
    Tensor<T> out({ho, wo, c});
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            for (int ch = 0; ch < c; ++ch) {
                T acc = T(0);
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        acc += x.at(iy, ix, ch) * kernels.at(ky, kx, ch);
                    }
                }
                out.at(oy, ox, ch) = acc;
            }
        }
    }
    return out;
}

// ---- bilinear upsample -----------------------------------------------------

// Half-pixel sampling (src = (dst + 0.5)/f - 0.5) with edge clamping.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor) {
    if (x.rank() != 3)
        throw ShapeError("bilinear_upsample: want (H,W,C), got " + shape_str(x.shape()));
    if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
    if (factor == 1) return x;
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const int ho = h * factor, wo = w * factor;
    Tensor<T> out({ho, wo, c});
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
                const T top = x.at(y0, x0, ch) * (T(1) - fx) + x.at(y0, x1, ch) * fx;
                const T bot = x.at(y1, x0, ch) * (T(1) - fx) + x.at(y1, x1, ch) * fx;
                out.at(oy, ox, ch) = top * (T(1) - fy) + bot * fy;
            }
        }
    }
    return out;
}

// Numerically careful sum with pairwise splitting; used wherever a reduction
// feeds a reported value, so results do not depend on accumulation tricks.
template <typename T>
T pairwise_sum(const T* v, std::int64_t n) {
    if (n <= 8) {
        T s = T(0);
        for (std::int64_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::int64_t half = n / 2;
    return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

template <typename T>
T pairwise_sum(const std::vector<T>& v) {
    return pairwise_sum(v.data(), static_cast<std::int64_t>(v.size()));
}

}  // namespace iml

// Eigen-backed matmul kept out of line so only this header pulls Eigen in.
#include <Eigen/Core>

namespace iml {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    if (m == 0 || n == 0 || k == 0) return out;
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> ma(a.data(), m, k);
    Eigen::Map<const Mat> mb(b.data(), k, n);
    Eigen::Map<Mat> mo(out.data(), m, n);
    mo.noalias() = ma * mb;
    return out;
}

// a^T * b without materializing the transpose
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw ShapeError("matmul_tn: incompatible shapes " + shape_str(a.shape()) + "^T x " +
                         shape_str(b.shape()));
    const int m = a.dim(1), k = a.dim(0), n = b.dim(1);
    Tensor<T> out({m, n});
    if (m == 0 || n == 0 || k == 0) return out;
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> ma(a.data(), k, m);
    Eigen::Map<const Mat> mb(b.data(), k, n);
    Eigen::Map<Mat> mo(out.data(), m, n);
    mo.noalias() = ma.transpose() * mb;
    return out;
}

// a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<T> out({m, n});
    if (m == 0 || n == 0 || k == 0) return out;
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> ma(a.data(), m, k);
    Eigen::Map<const Mat> mb(b.data(), n, k);
    Eigen::Map<Mat> mo(out.data(), m, n);
    mo.noalias() = ma * mb.transpose();
    return out;
}

}  // namespace iml
