#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rwkviml/decoder.hpp"

namespace iml {

// Supervision weights: one per intermediate scale, one for the fused map,
// one shared multiplier for all edge-restricted terms.
template <typename T>
struct LossWeights {
    T lambda1 = T(0.15);
    T lambda2 = T(0.35);
    T lambda3 = T(0.55);
    T lambda_final = T(1.0);
    T lambda_edge = T(1.0);

    void validate() const {
        const T vals[5] = {lambda1, lambda2, lambda3, lambda_final, lambda_edge};
        T sum = T(0);
        for (T v : vals) {
            if (v < T(0)) throw ConfigError("loss weights must be >= 0");
            sum += v;
        }
        if (sum <= T(0)) throw ConfigError("at least one loss weight must be > 0");
    }
};

template <typename T>
void check_binary(const Tensor<T>& m, const char* what) {
    for (std::int64_t i = 0; i < m.numel(); ++i)
        if (m[i] != T(0) && m[i] != T(1))
            throw DataError(std::string(what) + ": expected a strictly 0/1 tensor");
}

// Boundary band: dilation XOR erosion with a (2r+1) square window clipped at
// the image border (replicate-style handling). A constant mask therefore
// produces an empty band, including the all-ones case.
template <typename T>
Tensor<T> make_edge_mask(const Tensor<T>& m, int radius) {
    if (m.rank() != 3 || m.dim(2) != 1)
        throw ShapeError("edge mask: want (H,W,1), got " + shape_str(m.shape()));
    if (radius < 1) throw ConfigError("edge mask: radius must be >= 1");
    check_binary(m, "edge mask input");
    const int h = m.dim(0), w = m.dim(1);
    Tensor<T> e({h, w, 1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool any0 = false, any1 = false;
            const int y0 = std::max(0, y - radius), y1 = std::min(h - 1, y + radius);
            const int x0 = std::max(0, x - radius), x1 = std::min(w - 1, x + radius);
            for (int yy = y0; yy <= y1 && !(any0 && any1); ++yy)
                for (int xx = x0; xx <= x1; ++xx) {
                    if (m.at(yy, xx, 0) == T(0)) any0 = true;
                    else any1 = true;
                }
            e.at(y, x, 0) = (any0 && any1) ? T(1) : T(0);
        }
    return e;
}

// Ground-truth reduction to a coarser grid: each factor x factor cell votes,
// ties and above go to 1. Preserves thin manipulated structures better than
// picking one corner pixel.
template <typename T>
Tensor<T> downsample_mask(const Tensor<T>& m, int factor) {
    if (m.rank() != 3 || m.dim(2) != 1)
        throw ShapeError("mask downsample: want (H,W,1), got " + shape_str(m.shape()));
    if (factor < 1 || m.dim(0) % factor != 0 || m.dim(1) % factor != 0)
        throw ShapeError("mask downsample: extents " + shape_str(m.shape()) +
                         " not divisible by " + std::to_string(factor));
    if (factor == 1) return m;
    const int ho = m.dim(0) / factor, wo = m.dim(1) / factor;
    Tensor<T> out({ho, wo, 1});
    const T half = T(0.5) * T(factor) * T(factor);
    for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
            T s = T(0);
            for (int yy = 0; yy < factor; ++yy)
                for (int xx = 0; xx < factor; ++xx) s += m.at(y * factor + yy, x * factor + xx, 0);
            out.at(y, x, 0) = s >= half ? T(1) : T(0);
        }
    return out;
}

// Mean binary cross entropy straight from logits:
//   bce(z, y) = max(z,0) - z*y + log(1 + e^{-|z|})
// With a mask, only mask==1 pixels enter the mean; an empty mask gives 0.
// Terms are reduced with a pairwise tree sum so the result is independent of
// traversal tricks and stable run to run.
template <typename T>
T bce_from_logits(const Tensor<T>& z, const Tensor<T>& y, const Tensor<T>* mask = nullptr) {
    if (!same_shape(z, y))
        throw ShapeError("bce: logits " + shape_str(z.shape()) + " vs targets " +
                         shape_str(y.shape()));
    if (mask && !same_shape(*mask, z))
        throw ShapeError("bce: mask " + shape_str(mask->shape()) + " vs logits " +
                         shape_str(z.shape()));
    check_binary(y, "bce targets");
    std::vector<T> terms;
    terms.reserve(static_cast<size_t>(z.numel()));
    for (std::int64_t i = 0; i < z.numel(); ++i) {
        if (mask && (*mask)[i] == T(0)) continue;
        const T zi = z[i];
        terms.push_back(std::max(zi, T(0)) - zi * y[i] + std::log1p(std::exp(-std::abs(zi))));
    }
    if (terms.empty()) return T(0);
    return pairwise_sum(terms) / T(terms.size());
}

// d(mean bce)/dz = (sigmoid(z) - y) / count on counted pixels, 0 elsewhere
template <typename T>
Tensor<T> bce_from_logits_backward(const Tensor<T>& z, const Tensor<T>& y,
                                   const Tensor<T>* mask = nullptr) {
    Tensor<T> dz(z.shape());
    std::int64_t count = 0;
    if (mask) {
        for (std::int64_t i = 0; i < mask->numel(); ++i)
            if ((*mask)[i] != T(0)) ++count;
    } else {
        count = z.numel();
    }
    if (count == 0) return dz;
    const T inv = T(1) / T(count);
    for (std::int64_t i = 0; i < z.numel(); ++i) {
        if (mask && (*mask)[i] == T(0)) continue;
        dz[i] = (sigmoid_scalar(z[i]) - y[i]) * inv;
    }
    return dz;
}

// Every individual term of the objective, exposed for logging; `total` is
// the weighted sum actually optimized.
template <typename T>
struct LossBreakdown {
    std::array<T, 3> scale{};   // plain BCE at 1/16, 1/32, 1/64
    std::array<T, 3> edge{};    // edge-restricted BCE at the same scales
    T final_plain = T(0);
    T final_edge = T(0);
    T total = T(0);
};

template <typename T>
struct LossGrads {
    Tensor<T> d1, d2, d3, dfinal;
};

// Total objective:
//   sum_i lambda_i * BCE(m_i, M_i)
//   + lambda_edge * sum_i BCE(m_i, M_i; E_i)
//   + lambda_final * BCE(m_final, M)
//   + lambda_edge * BCE(m_final, M; E)
// M_i are majority-downsampled targets, E_i boundary bands with the
// full-resolution radius halved per level (floor, at least 1). An optional
// validity mask excludes padded pixels from every term.
template <typename T>
LossBreakdown<T> total_loss(const Predictions<T>& pred, const Tensor<T>& gt,
                            const LossWeights<T>& w, int edge_radius = 4,
                            const Tensor<T>* valid = nullptr, LossGrads<T>* grads = nullptr) {
    w.validate();
    if (!same_shape(gt, pred.logit_final))
        throw ShapeError("loss: ground truth " + shape_str(gt.shape()) +
                         " vs final logits " + shape_str(pred.logit_final.shape()));
    check_binary(gt, "loss ground truth");
    if (valid) check_binary(*valid, "loss validity mask");

    const Tensor<T>* logits[4] = {&pred.logit1, &pred.logit2, &pred.logit3, &pred.logit_final};
    const int full_h = gt.dim(0);
    LossBreakdown<T> out;
    std::array<Tensor<T>*, 4> gslots{};
    if (grads) gslots = {&grads->d1, &grads->d2, &grads->d3, &grads->dfinal};

    for (int lvl = 0; lvl < 4; ++lvl) {
        const int factor = full_h / logits[lvl]->dim(0);
        const int radius = lvl == 3 ? edge_radius : std::max(1, edge_radius >> (lvl + 1));
        auto target = downsample_mask(gt, factor);
        auto band = make_edge_mask(target, radius);
        Tensor<T> vmask;
        if (valid) {
            vmask = downsample_mask(*valid, factor);
            for (std::int64_t i = 0; i < band.numel(); ++i) band[i] *= vmask[i];
        }
        const Tensor<T>* plain_mask = valid ? &vmask : nullptr;
        const T plain = bce_from_logits(*logits[lvl], target, plain_mask);
        const T edged = bce_from_logits(*logits[lvl], target, &band);
        T lambda_plain;
        if (lvl == 0) lambda_plain = w.lambda1;
        else if (lvl == 1) lambda_plain = w.lambda2;
        else if (lvl == 2) lambda_plain = w.lambda3;
        else lambda_plain = w.lambda_final;
        if (lvl < 3) {
            out.scale[static_cast<size_t>(lvl)] = plain;
            out.edge[static_cast<size_t>(lvl)] = edged;
        } else {
            out.final_plain = plain;
            out.final_edge = edged;
        }
        out.total += lambda_plain * plain + w.lambda_edge * edged;
        if (grads) {
            auto dz = bce_from_logits_backward(*logits[lvl], target, plain_mask);
            auto dze = bce_from_logits_backward(*logits[lvl], target, &band);
            Tensor<T> d(logits[lvl]->shape());
            for (std::int64_t i = 0; i < d.numel(); ++i)
                d[i] = lambda_plain * dz[i] + w.lambda_edge * dze[i];
            *gslots[static_cast<size_t>(lvl)] = std::move(d);
        }
    }
    return out;
}

}  // namespace iml
