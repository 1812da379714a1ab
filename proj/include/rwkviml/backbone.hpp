#pragma once

#include <array>
#include <string>
#include <vector>

#include "rwkviml/block.hpp"

namespace iml {

struct BackboneConfig {
    std::array<int, 3> channels{200, 376, 448};
    std::array<int, 3> depths{2, 2, 6};
    std::array<int, 3> local_k{3, 5, 7};
    // branch ratios per stage in order global / local / identity
    std::array<double, 3> ratio_v{0.8, 0.7, 0.6};
    std::array<double, 3> ratio_con{0.2, 0.2, 0.3};
    std::array<double, 3> ratio_i{0.0, 0.1, 0.1};
    // widths of the three intermediate stem convs (the fourth is channels[0])
    std::array<int, 3> stem{16, 32, 64};
    int dw_k = 3;
    int ffn_ratio = 4;
    int merge_ffn_ratio = 2;

    void validate() const {
        if (!(channels[0] < channels[1] && channels[1] < channels[2]))
            throw ConfigError("backbone: channels must be strictly increasing");
        for (int d : depths)
            if (d < 1) throw ConfigError("backbone: every stage needs at least one block");
        for (int s : stem)
            if (s < 1) throw ConfigError("backbone: stem widths must be positive");
        for (int k : local_k)
            if (k < 1 || k % 2 == 0) throw ConfigError("backbone: local kernels must be odd");
        if (ffn_ratio < 1 || merge_ffn_ratio < 1)
            throw ConfigError("backbone: FFN ratios must be >= 1");
        for (int s = 0; s < 3; ++s)
            ChannelSplit::from_ratio(channels[static_cast<size_t>(s)],
                                     ratio_v[static_cast<size_t>(s)],
                                     ratio_con[static_cast<size_t>(s)],
                                     ratio_i[static_cast<size_t>(s)]);
    }

    ChannelSplit split(int stage) const {
        return ChannelSplit::from_ratio(channels[static_cast<size_t>(stage)],
                                        ratio_v[static_cast<size_t>(stage)],
                                        ratio_con[static_cast<size_t>(stage)],
                                        ratio_i[static_cast<size_t>(stage)]);
    }
};

inline void check_input_size(int h, int w) {
    if (h < 128 || w < 128 || h % 64 != 0 || w % 64 != 0) {
        const int ph = std::max(128, (h + 63) / 64 * 64);
        const int pw = std::max(128, (w + 63) / 64 * 64);
        throw ConfigError("input " + std::to_string(h) + "x" + std::to_string(w) +
                          " not supported: sides must be multiples of 64 and >= 128; pad to " +
                          std::to_string(ph) + "x" + std::to_string(pw));
    }
}

// Four stride-2 3x3 convolutions take the image to 1/16 scale. The first
// three are followed by norm + GELU; the last by norm only.
template <typename T>
struct PatchEmbed {
    Conv2d<T> conv[4];
    LayerNorm<T> norm[4];
    Gelu<T> act[3];

    void init(const BackboneConfig& cfg, Rng& rng) {
        const int widths[5] = {3, cfg.stem[0], cfg.stem[1], cfg.stem[2], cfg.channels[0]};
        for (int i = 0; i < 4; ++i) {
            conv[i].init(widths[i], widths[i + 1], 3, 2, rng);
            norm[i].init(widths[i + 1]);
        }
    }

    Tensor<T> forward(const Tensor<T>& img) {
        // inputs arrive in [0,1]; standardize to [-1,1]
        auto x = map(img, [](T v) { return (v - T(0.5)) * T(2); });
        for (int i = 0; i < 4; ++i) {
            x = norm[i].forward(conv[i].forward(x));
            if (i < 3) x = act[i].forward(x);
        }
        return x;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        auto d = dy;
        for (int i = 3; i >= 0; --i) {
            if (i < 3) d = act[i].backward(d);
            d = conv[i].backward(norm[i].backward(d));
        }
        return map(d, [](T v) { return v * T(2); });
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        for (int i = 0; i < 4; ++i) {
            conv[i].collect(prefix + ".conv" + std::to_string(i + 1), out);
            norm[i].collect(prefix + ".norm" + std::to_string(i + 1), out);
        }
    }
};

// 2x2 neighborhood concatenation in quadrant order (tl, tr, bl, br).
template <typename T>
Tensor<T> space_to_depth2(const Tensor<T>& x) {
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("patch merge: spatial extents must be even, got " + shape_str(x.shape()));
    Tensor<T> out({h / 2, w / 2, 4 * c});
    for (int y = 0; y < h / 2; ++y)
        for (int xx = 0; xx < w / 2; ++xx)
            for (int q = 0; q < 4; ++q) {
                const int sy = 2 * y + q / 2, sx = 2 * xx + q % 2;
                for (int ch = 0; ch < c; ++ch) out.at(y, xx, q * c + ch) = x.at(sy, sx, ch);
            }
    return out;
}

template <typename T>
Tensor<T> space_to_depth2_backward(const Tensor<T>& dy) {
    const int ho = dy.dim(0), wo = dy.dim(1), c4 = dy.dim(2);
    const int c = c4 / 4;
    Tensor<T> dx({ho * 2, wo * 2, c});
    for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx)
            for (int q = 0; q < 4; ++q) {
                const int sy = 2 * y + q / 2, sx = 2 * xx + q % 2;
                for (int ch = 0; ch < c; ++ch) dx.at(sy, sx, ch) = dy.at(y, xx, q * c + ch);
            }
    return dx;
}

// Downsampling between stages: concatenate 2x2 neighborhoods, project to the
// next width, then one residual FFN.
template <typename T>
struct PatchMerge {
    Linear<T> proj;
    LayerNorm<T> norm;
    Linear<T> fc1, fc2;
    Gelu<T> act;

    void init(int c_in, int c_out, int ffn_ratio, Rng& rng) {
        proj.init(4 * c_in, c_out, rng);
        norm.init(c_out);
        fc1.init(c_out, c_out * ffn_ratio, rng);
        fc2.init(c_out * ffn_ratio, c_out, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        auto y = proj.forward(space_to_depth2(x));
        return add(y, fc2.forward(act.forward(fc1.forward(norm.forward(y)))));
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        auto dn = norm.backward(fc1.backward(act.backward(fc2.backward(dy))));
        auto dproj = add(dy, dn);
        return space_to_depth2_backward(proj.backward(dproj));
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        proj.collect(prefix + ".proj", out);
        norm.collect(prefix + ".norm", out);
        fc1.collect(prefix + ".ffn.fc1", out);
        fc2.collect(prefix + ".ffn.fc2", out);
    }
};

template <typename T>
struct PyramidFeatures {
    Tensor<T> f1;  // (H/16, W/16, C1)
    Tensor<T> f2;  // (H/32, W/32, C2)
    Tensor<T> f3;  // (H/64, W/64, C3)
};

template <typename T>
struct Backbone {
    BackboneConfig cfg;
    PatchEmbed<T> embed;
    std::vector<Block<T>> stage[3];
    PatchMerge<T> merge[2];

    void init(const BackboneConfig& c, Rng& rng) {
        cfg = c;
        cfg.validate();
        embed.init(cfg, rng);
        for (int s = 0; s < 3; ++s) {
            BlockConfig bc;
            bc.channels = cfg.channels[static_cast<size_t>(s)];
            bc.split = cfg.split(s);
            bc.local_k = cfg.local_k[static_cast<size_t>(s)];
            bc.dw_k = cfg.dw_k;
            bc.ffn_ratio = cfg.ffn_ratio;
            stage[s].resize(static_cast<size_t>(cfg.depths[static_cast<size_t>(s)]));
            for (auto& b : stage[s]) b.init(bc, rng);
        }
        merge[0].init(cfg.channels[0], cfg.channels[1], cfg.merge_ffn_ratio, rng);
        merge[1].init(cfg.channels[1], cfg.channels[2], cfg.merge_ffn_ratio, rng);
    }

    PyramidFeatures<T> forward(const Tensor<T>& img) {
        if (img.rank() != 3 || img.dim(2) != 3)
            throw ShapeError("backbone: want (H,W,3) image, got " + shape_str(img.shape()));
        check_input_size(img.dim(0), img.dim(1));
        PyramidFeatures<T> out;
        auto x = embed.forward(img);
        for (auto& b : stage[0]) x = b.forward(x);
        out.f1 = x;
        x = merge[0].forward(x);
        for (auto& b : stage[1]) x = b.forward(x);
        out.f2 = x;
        x = merge[1].forward(x);
        for (auto& b : stage[2]) x = b.forward(x);
        out.f3 = x;
        return out;
    }

    // All three pyramid levels receive decoder gradients.
    Tensor<T> backward(const Tensor<T>& df1, const Tensor<T>& df2, const Tensor<T>& df3) {
        auto d = df3;
        for (auto it = stage[2].rbegin(); it != stage[2].rend(); ++it) d = it->backward(d);
        d = merge[1].backward(d);
        d = add(d, df2);
        for (auto it = stage[1].rbegin(); it != stage[1].rend(); ++it) d = it->backward(d);
        d = merge[0].backward(d);
        d = add(d, df1);
        for (auto it = stage[0].rbegin(); it != stage[0].rend(); ++it) d = it->backward(d);
        return embed.backward(d);
    }

    void collect(ParamList<T>& out) {
        embed.collect("backbone.embed", out);
        for (int s = 0; s < 3; ++s)
            for (size_t b = 0; b < stage[s].size(); ++b)
                stage[s][b].collect("backbone.stage" + std::to_string(s + 1) + ".block" +
                                        std::to_string(b + 1),
                                    out);
        merge[0].collect("backbone.merge1", out);
        merge[1].collect("backbone.merge2", out);
    }
};

}  // namespace iml
