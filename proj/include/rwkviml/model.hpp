#pragma once

#include "rwkviml/decoder.hpp"

namespace iml {

struct ModelConfig {
    BackboneConfig backbone;
    int head_width = 64;

    void validate() const {
        backbone.validate();
        if (head_width < 1) throw ConfigError("model: head width must be positive");
    }
};

template <typename T>
struct Model {
    ModelConfig cfg;
    Backbone<T> backbone;
    Decoder<T> decoder;

    void init(const ModelConfig& c, std::uint64_t seed) {
        cfg = c;
        cfg.validate();
        Rng rng(seed);
        backbone.init(cfg.backbone, rng);
        decoder.init(cfg.backbone.channels, cfg.head_width, rng);
    }

    Predictions<T> forward(const Tensor<T>& img) {
        return decoder.forward(backbone.forward(img));
    }

    // gradients w.r.t. the four logit maps; parameter gradients accumulate
    void backward(const Tensor<T>& d1, const Tensor<T>& d2, const Tensor<T>& d3,
                  const Tensor<T>& dfinal) {
        auto df = decoder.backward(d1, d2, d3, dfinal);
        backbone.backward(df.f1, df.f2, df.f3);
    }

    void collect(ParamList<T>& out) {
        backbone.collect(out);
        decoder.collect(out);
    }

    void zero_grad() {
        ParamList<T> params;
        collect(params);
        for (auto& pr : params) pr.p->zero_grad();
    }

    std::int64_t param_count() {
        ParamList<T> params;
        collect(params);
        std::int64_t n = 0;
        for (auto& pr : params) n += pr.p->value.numel();
        return n;
    }
};

}  // namespace iml
