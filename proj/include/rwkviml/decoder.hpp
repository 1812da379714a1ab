#pragma once

#include <array>
#include <string>

#include "rwkviml/backbone.hpp"

namespace iml {

// Raw (pre-sigmoid) predictions at each pyramid scale plus the fused
// full-resolution map. Probabilities are derived views; the loss consumes
// logits directly.
template <typename T>
struct Predictions {
    Tensor<T> logit1;      // (H/16, W/16, 1)
    Tensor<T> logit2;      // (H/32, W/32, 1)
    Tensor<T> logit3;      // (H/64, W/64, 1)
    Tensor<T> logit_final; // (H, W, 1)
};

// sigmoid clamped away from {0,1} so log terms and binarization stay sane
// even for saturated logits
template <typename T>
Tensor<T> prob_map(const Tensor<T>& logits) {
    const T eps = T(1e-7);
    return map(logits, [eps](T z) {
        const T p = sigmoid_scalar(z);
        return std::min(std::max(p, eps), T(1) - eps);
    });
}

// Per-stage head: 1x1 reduce -> norm -> 1x1 to one channel. Fusion upsamples
// the three normed 64-wide head features to 1/16 scale, concatenates,
// applies the same head pattern, and scales the logit map up to full
// resolution with one x16 bilinear interpolation.
template <typename T>
struct Decoder {
    std::array<Linear<T>, 3> reduce;
    std::array<LayerNorm<T>, 3> norm;
    std::array<Linear<T>, 3> head;
    Linear<T> fuse;
    LayerNorm<T> fuse_norm;
    Linear<T> fuse_head;
    int width = 64;

    void init(const std::array<int, 3>& in_channels, int head_width, Rng& rng) {
        width = head_width;
        for (int s = 0; s < 3; ++s) {
            reduce[static_cast<size_t>(s)].init(in_channels[static_cast<size_t>(s)], width, rng);
            norm[static_cast<size_t>(s)].init(width);
            head[static_cast<size_t>(s)].init(width, 1, rng);
            // bias the heads toward "authentic": random init otherwise starts
            // at p ~ 0.5 everywhere, which swamps early training with edge loss
            head[static_cast<size_t>(s)].bias.value[0] = T(-2);
        }
        fuse.init(3 * width, width, rng);
        fuse_norm.init(width);
        fuse_head.init(width, 1, rng);
        fuse_head.bias.value[0] = T(-2);
    }

    Predictions<T> forward(const PyramidFeatures<T>& feats) {
        const Tensor<T>* fs[3] = {&feats.f1, &feats.f2, &feats.f3};
        Predictions<T> out;
        Tensor<T>* logits[3] = {&out.logit1, &out.logit2, &out.logit3};
        for (int s = 0; s < 3; ++s) {
            n_[static_cast<size_t>(s)] = norm[static_cast<size_t>(s)].forward(
                reduce[static_cast<size_t>(s)].forward(*fs[s]));
            *logits[s] = head[static_cast<size_t>(s)].forward(n_[static_cast<size_t>(s)]);
        }
        h1_ = feats.f1.dim(0);
        w1_ = feats.f1.dim(1);
        auto up2 = bilinear_upsample(n_[1], 2);
        auto up3 = bilinear_upsample(n_[2], 4);
        auto cat = concat_channels<T>({&n_[0], &up2, &up3});
        nf_ = fuse_norm.forward(fuse.forward(cat));
        auto logit16 = fuse_head.forward(nf_);
        out.logit_final = bilinear_upsample(logit16, 16);
        return out;
    }

    // dlogit* are gradients w.r.t. the four logit maps
    PyramidFeatures<T> backward(const Tensor<T>& dlogit1, const Tensor<T>& dlogit2,
                                const Tensor<T>& dlogit3, const Tensor<T>& dlogit_final) {
        auto dlogit16 = bilinear_upsample_backward(dlogit_final, h1_, w1_, 16);
        auto dcat = fuse.backward(fuse_norm.backward(fuse_head.backward(dlogit16)));
        auto dn0 = slice_channels(dcat, 0, width);
        auto dup2 = slice_channels(dcat, width, 2 * width);
        auto dup3 = slice_channels(dcat, 2 * width, 3 * width);
        auto dn1 = bilinear_upsample_backward(dup2, h1_ / 2, w1_ / 2, 2);
        auto dn2 = bilinear_upsample_backward(dup3, h1_ / 4, w1_ / 4, 4);

        const Tensor<T>* dls[3] = {&dlogit1, &dlogit2, &dlogit3};
        Tensor<T>* dfuse[3] = {&dn0, &dn1, &dn2};
        PyramidFeatures<T> dfeats;
        Tensor<T>* outs[3] = {&dfeats.f1, &dfeats.f2, &dfeats.f3};
        for (int s = 0; s < 3; ++s) {
            auto dn = head[static_cast<size_t>(s)].backward(*dls[s]);
            dn = add(dn, *dfuse[s]);
            *outs[s] = reduce[static_cast<size_t>(s)].backward(
                norm[static_cast<size_t>(s)].backward(dn));
        }
        return dfeats;
    }

    void collect(ParamList<T>& out) {
        for (int s = 0; s < 3; ++s) {
            const std::string p = "decoder.stage" + std::to_string(s + 1);
            reduce[static_cast<size_t>(s)].collect(p + ".reduce", out);
            norm[static_cast<size_t>(s)].collect(p + ".norm", out);
            head[static_cast<size_t>(s)].collect(p + ".head", out);
        }
        fuse.collect("decoder.fuse", out);
        fuse_norm.collect("decoder.fuse_norm", out);
        fuse_head.collect("decoder.fuse_head", out);
    }

private:
    std::array<Tensor<T>, 3> n_;
    Tensor<T> nf_;
    int h1_ = 0, w1_ = 0;
};

}  // namespace iml
