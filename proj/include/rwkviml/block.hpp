#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rwkviml/layers.hpp"
#include "rwkviml/wkv.hpp"

namespace iml {

// Channel partition of a block's width across the three mixer branches,
// listed in concatenation order: global (wkv), local (conv), identity.
struct ChannelSplit {
    int c_v = 0;    // global
    int c_con = 0;  // local
    int c_i = 0;    // identity

    // Local and identity widths round to nearest; the remainder goes to the
    // global branch. For (0.6, 0.3, 0.1) at C=448 this yields (269, 134, 45).
    static ChannelSplit from_ratio(int channels, double r_v, double r_con, double r_i) {
        if (channels < 1) throw ConfigError("channel split: need at least one channel");
        const double sum = r_v + r_con + r_i;
        if (std::abs(sum - 1.0) > 1e-9)
            throw ConfigError("channel split: ratios must sum to 1, got " + std::to_string(sum));
        ChannelSplit s;
        s.c_con = static_cast<int>(std::lround(r_con * channels));
        s.c_i = static_cast<int>(std::lround(r_i * channels));
        s.c_v = channels - s.c_con - s.c_i;
        s.validate(channels);
        return s;
    }

    void validate(int channels) const {
        if (c_v < 1 || c_con < 0 || c_i < 0 || c_v + c_con + c_i != channels)
            throw ConfigError("channel split (" + std::to_string(c_v) + "," +
                              std::to_string(c_con) + "," + std::to_string(c_i) +
                              ") invalid for C=" + std::to_string(channels));
    }
};

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int from, int to) {
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    Tensor<T> out({h, w, to - from});
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
            for (int ch = from; ch < to; ++ch) out.at(y, xx, ch - from) = x.at(y, xx, ch);
    return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
    const int h = parts[0]->dim(0), w = parts[0]->dim(1);
    int c = 0;
    for (auto* p : parts) c += p->dim(2);
    Tensor<T> out({h, w, c});
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            int off = 0;
            for (auto* p : parts) {
                const int pc = p->dim(2);
                for (int ch = 0; ch < pc; ++ch) out.at(y, xx, off + ch) = p->at(y, xx, ch);
                off += pc;
            }
        }
    return out;
}

// Spatial mixing over all tokens: quad-shift, k/v/r projections, the wkv
// scan over the row-major token order, receptance gating, output projection.
template <typename T>
struct GlobalBranch {
    Linear<T> key, value, receptance, out_proj;
    Param<T> w_free;  // effective decay = softplus(w_free)
    Param<T> u;
    int channels = 0;

    void init(int c, Rng& rng) {
        channels = c;
        key.init(c, c, rng);
        value.init(c, c, rng);
        receptance.init(c, c, rng);
        out_proj.init(c, c, rng);
        w_free.init({c});
        u.init({c});
        // decay spread over a moderate range; one channel per rate
        for (int i = 0; i < c; ++i) {
            const double frac = c > 1 ? static_cast<double>(i) / (c - 1) : 0.5;
            w_free.value[i] = static_cast<T>(softplus_inv(0.2 + 1.8 * frac));
        }
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const int h = x.dim(0), w = x.dim(1);
        auto xs = qshift(x);
        k_ = key.forward(xs).reshaped({h * w, channels});
        v_ = value.forward(xs).reshaped({h * w, channels});
        auto r = receptance.forward(xs);
        wkv_ = wkv_scan(k_, v_, effective_w(), u.value);
        sr_ = sigmoid(r).reshaped({h * w, channels});
        Tensor<T> gated({h * w, channels});
        for (std::int64_t i = 0; i < gated.numel(); ++i) gated[i] = sr_[i] * wkv_[i];
        return out_proj.forward(gated.reshaped({h, w, channels}));
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const int h = dy.dim(0), w = dy.dim(1);
        auto dgated = out_proj.backward(dy).reshaped({h * w, channels});
        Tensor<T> dwkv({h * w, channels});
        Tensor<T> dr({h * w, channels});
        for (std::int64_t i = 0; i < dgated.numel(); ++i) {
            dwkv[i] = dgated[i] * sr_[i];
            dr[i] = dgated[i] * wkv_[i] * sr_[i] * (T(1) - sr_[i]);
        }
        auto wg = wkv_backward(k_, v_, effective_w(), u.value, dwkv);
        for (int i = 0; i < channels; ++i) {
            w_free.grad[i] += wg.w[i] * sigmoid_scalar(w_free.value[i]);
            u.grad[i] += wg.u[i];
        }
        auto dxs = key.backward(wg.k.reshaped({h, w, channels}));
        auto dxs2 = value.backward(wg.v.reshaped({h, w, channels}));
        auto dxs3 = receptance.backward(dr.reshaped({h, w, channels}));
        for (std::int64_t i = 0; i < dxs.numel(); ++i) dxs[i] += dxs2[i] + dxs3[i];
        return qshift_backward(dxs);
    }

    Tensor<T> effective_w() const {
        return map(w_free.value, [](T x) { return softplus(x); });
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        key.collect(prefix + ".key", out);
        value.collect(prefix + ".value", out);
        receptance.collect(prefix + ".receptance", out);
        out_proj.collect(prefix + ".out", out);
        out.push_back({prefix + ".w_free", &w_free});
        out.push_back({prefix + ".u", &u});
    }

private:
    Tensor<T> k_, v_, wkv_, sr_;
};

// Depthwise K x K followed by a pointwise projection, no nonlinearity.
template <typename T>
struct LocalBranch {
    DepthwiseConv2d<T> dw;
    Linear<T> pw;

    void init(int c, int k, Rng& rng) {
        if (k % 2 == 0) throw ConfigError("local branch: kernel size must be odd, got " + std::to_string(k));
        dw.init(c, k, 1, rng);
        pw.init(c, c, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) { return pw.forward(dw.forward(x)); }
    Tensor<T> backward(const Tensor<T>& dy) { return dw.backward(pw.backward(dy)); }

    void collect(const std::string& prefix, ParamList<T>& out) {
        dw.collect(prefix + ".dw", out);
        pw.collect(prefix + ".pw", out);
    }
};

struct BlockConfig {
    int channels = 0;
    ChannelSplit split;
    int local_k = 3;
    int dw_k = 3;
    int ffn_ratio = 4;
};

// One EfficientRWKV block:
//   x2 = x + dwconv(x)
//   x3 = x2 + concat(global(LN1(x2)_g), local(LN1(x2)_l), LN1(x2)_i)
//   y  = x3 + FFN(LN2(x3))
template <typename T>
struct Block {
    BlockConfig cfg;
    DepthwiseConv2d<T> dwres;
    LayerNorm<T> ln1, ln2;
    GlobalBranch<T> global;
    LocalBranch<T> local;
    Linear<T> fc1, fc2;
    Gelu<T> act;

    void init(const BlockConfig& c, Rng& rng) {
        cfg = c;
        cfg.split.validate(cfg.channels);
        dwres.init(cfg.channels, cfg.dw_k, 1, rng);
        ln1.init(cfg.channels);
        ln2.init(cfg.channels);
        global.init(cfg.split.c_v, rng);
        if (cfg.split.c_con > 0) local.init(cfg.split.c_con, cfg.local_k, rng);
        fc1.init(cfg.channels, cfg.channels * cfg.ffn_ratio, rng);
        fc2.init(cfg.channels * cfg.ffn_ratio, cfg.channels, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) {
        const auto& s = cfg.split;
        auto d = dwres.forward(x);
        auto x2 = add(x, d);
        auto n1 = ln1.forward(x2);
        auto ng = slice_channels(n1, 0, s.c_v);
        auto g = global.forward(ng);
        Tensor<T> mix;
        if (s.c_con > 0) {
            auto nl = slice_channels(n1, s.c_v, s.c_v + s.c_con);
            auto l = local.forward(nl);
            if (s.c_i > 0) {
                auto ni = slice_channels(n1, s.c_v + s.c_con, cfg.channels);
                mix = concat_channels<T>({&g, &l, &ni});
            } else {
                mix = concat_channels<T>({&g, &l});
            }
        } else if (s.c_i > 0) {
            auto ni = slice_channels(n1, s.c_v, cfg.channels);
            mix = concat_channels<T>({&g, &ni});
        } else {
            mix = g;
        }
        auto x3 = add(x2, mix);
        auto n2 = ln2.forward(x3);
        auto y = add(x3, fc2.forward(act.forward(fc1.forward(n2))));
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const auto& s = cfg.split;
        auto dn2 = fc1.backward(act.backward(fc2.backward(dy)));
        auto dx3 = add(dy, ln2.backward(dn2));

        // dx3 feeds both the residual and the mixer output
        auto dg = slice_channels(dx3, 0, s.c_v);
        auto dn1 = global.backward(dg);
        Tensor<T> dn1_full;
        if (s.c_con > 0) {
            auto dl = slice_channels(dx3, s.c_v, s.c_v + s.c_con);
            auto dnl = local.backward(dl);
            if (s.c_i > 0) {
                auto dni = slice_channels(dx3, s.c_v + s.c_con, cfg.channels);
                dn1_full = concat_channels<T>({&dn1, &dnl, &dni});
            } else {
                dn1_full = concat_channels<T>({&dn1, &dnl});
            }
        } else if (s.c_i > 0) {
            auto dni = slice_channels(dx3, s.c_v, cfg.channels);
            dn1_full = concat_channels<T>({&dn1, &dni});
        } else {
            dn1_full = dn1;
        }
        auto dx2 = add(dx3, ln1.backward(dn1_full));
        auto dx = add(dx2, dwres.backward(dx2));
        return dx;
    }

    void collect(const std::string& prefix, ParamList<T>& out) {
        dwres.collect(prefix + ".dwres", out);
        ln1.collect(prefix + ".ln1", out);
        ln2.collect(prefix + ".ln2", out);
        global.collect(prefix + ".global", out);
        if (cfg.split.c_con > 0) local.collect(prefix + ".local", out);
        fc1.collect(prefix + ".ffn.fc1", out);
        fc2.collect(prefix + ".ffn.fc2", out);
    }
};

}  // namespace iml
