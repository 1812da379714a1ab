// Release gate: every blocking property of the library is checked here with
// pinned tolerances and fixed seeds, one PASS/FAIL line per criterion. Run
// via ctest or directly; --cli <path> additionally smoke-tests the binary.

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rwkviml/backbone.hpp"
#include "rwkviml/bench.hpp"
#include "rwkviml/block.hpp"
#include "rwkviml/config.hpp"
#include "rwkviml/data.hpp"
#include "rwkviml/flops.hpp"
#include "rwkviml/loss.hpp"
#include "rwkviml/metrics.hpp"
#include "rwkviml/model.hpp"
#include "rwkviml/rng.hpp"
#include "rwkviml/tensor.hpp"
#include "rwkviml/trainer.hpp"
#include "rwkviml/wkv.hpp"

namespace fs = std::filesystem;
using namespace iml;

namespace {

int g_failed = 0;

void report(int idx, const std::string& what, bool ok, const std::string& detail) {
    std::printf("[%d/9] %s: %s: %s\n", idx, what.c_str(), detail.c_str(),
                ok ? "PASS" : "FAIL");
    std::fflush(stdout);
    if (!ok) ++g_failed;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
Tensor<T> randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor<T> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * scale);
    return t;
}

template <typename T>
Tensor<T> rand_decay(int c, Rng& rng, double lo = 0.0, double hi = 3.0) {
    Tensor<T> w({c});
    for (int i = 0; i < c; ++i) w[i] = static_cast<T>(rng.uniform(lo, hi));
    return w;
}

// distance normalized per channel by the peak value magnitude; outputs are
// convex combinations of v, so max|v| is the natural scale
template <typename T>
double channel_rel_diff(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& v) {
    const int t_len = a.dim(0), c_len = a.dim(1);
    double worst = 0.0;
    for (int c = 0; c < c_len; ++c) {
        double scale = 1e-30;
        for (int t = 0; t < t_len; ++t)
            scale = std::max(scale, std::abs(static_cast<double>(v.at(t, c))));
        for (int t = 0; t < t_len; ++t)
            worst = std::max(worst, std::abs(static_cast<double>(a.at(t, c)) -
                                             static_cast<double>(b.at(t, c))) /
                                        scale);
    }
    return worst;
}

// relative error with a small absolute floor so near-zero gradients compare
// on an absolute scale
double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// ---- criterion 1: scan kernel agrees with the quadratic reference ----

void criterion_1() {
    constexpr double kTolF32 = 1e-5, kTolF64 = 1e-12, kLimitSec = 10.0;
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(4001);
    double worst32 = 0, worst64 = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const int t = static_cast<int>(rng.uniform_int(1, 128));
        const int c = static_cast<int>(rng.uniform_int(1, 16));
        const auto k = randn<double>({t, c}, rng, 2.0);
        const auto v = randn<double>({t, c}, rng, 3.0);
        const auto w = rand_decay<double>(c, rng);
        const auto u = randn<double>({c}, rng);
        worst64 = std::max(worst64,
                           channel_rel_diff(wkv_scan(k, v, w, u), wkv_naive(k, v, w, u), v));
        Tensor<float> kf(k.shape()), vf(v.shape()), wf(w.shape()), uf(u.shape());
        for (std::int64_t i = 0; i < k.numel(); ++i) kf[i] = static_cast<float>(k[i]);
        for (std::int64_t i = 0; i < v.numel(); ++i) vf[i] = static_cast<float>(v[i]);
        for (std::int64_t i = 0; i < w.numel(); ++i) wf[i] = static_cast<float>(w[i]);
        for (std::int64_t i = 0; i < u.numel(); ++i) uf[i] = static_cast<float>(u[i]);
        worst32 = std::max(
            worst32, channel_rel_diff(wkv_scan(kf, vf, wf, uf), wkv_naive(kf, vf, wf, uf), vf));
    }
    const double sec = seconds_since(t0);
    report(1, "scan kernel vs quadratic reference (200 cases, T<=128, C<=16)",
           worst32 <= kTolF32 && worst64 <= kTolF64 && sec < kLimitSec,
           "f32 worst rel err " + fmt(worst32) + " (tol 1e-5), f64 worst " + fmt(worst64) +
               " (tol 1e-12), " + fmt(sec) + "s (limit 10s)");
}

// ---- criterion 2: kernel invariances ----

void criterion_2() {
    constexpr double kTolShift = 1e-6, kTolRev = 1e-6;
    Rng rng(4002);

    double worst_shift = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const int t = static_cast<int>(rng.uniform_int(2, 64));
        const int c = static_cast<int>(rng.uniform_int(1, 8));
        const auto k = randn<double>({t, c}, rng, 2.0);
        const auto v = randn<double>({t, c}, rng, 3.0);
        const auto w = rand_decay<double>(c, rng);
        const auto u = randn<double>({c}, rng);
        const double shift = rng.uniform(-50.0, 50.0);
        const auto k2 = map(k, [&](double x) { return x + shift; });
        worst_shift = std::max(
            worst_shift, channel_rel_diff(wkv_scan(k, v, w, u), wkv_scan(k2, v, w, u), v));
    }

    // outputs are convex combinations of the per-channel values; the bound
    // is required to hold with no tolerance at all
    double worst_excursion = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const int t = static_cast<int>(rng.uniform_int(1, 48));
        const int c = static_cast<int>(rng.uniform_int(1, 6));
        const auto k = randn<double>({t, c}, rng, 3.0);
        const auto v = randn<double>({t, c}, rng, 2.0);
        const auto w = rand_decay<double>(c, rng);
        const auto u = randn<double>({c}, rng, 2.0);
        const auto y = wkv_scan(k, v, w, u);
        for (int ch = 0; ch < c; ++ch) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (int i = 0; i < t; ++i) {
                lo = std::min(lo, v.at(i, ch));
                hi = std::max(hi, v.at(i, ch));
            }
            for (int i = 0; i < t; ++i)
                worst_excursion = std::max(
                    {worst_excursion, lo - y.at(i, ch), y.at(i, ch) - hi});
        }
    }

    double worst_rev = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const int t = static_cast<int>(rng.uniform_int(1, 64));
        const int c = static_cast<int>(rng.uniform_int(1, 8));
        const auto k = randn<double>({t, c}, rng, 2.0);
        const auto v = randn<double>({t, c}, rng, 2.0);
        const auto w = rand_decay<double>(c, rng);
        const auto u = randn<double>({c}, rng);
        TensorD kr({t, c}), vr({t, c});
        for (int i = 0; i < t; ++i)
            for (int ch = 0; ch < c; ++ch) {
                kr.at(i, ch) = k.at(t - 1 - i, ch);
                vr.at(i, ch) = v.at(t - 1 - i, ch);
            }
        const auto y = wkv_scan(k, v, w, u);
        const auto yr = wkv_scan(kr, vr, w, u);
        for (int i = 0; i < t; ++i)
            for (int ch = 0; ch < c; ++ch)
                worst_rev =
                    std::max(worst_rev, std::abs(y.at(i, ch) - yr.at(t - 1 - i, ch)));
    }

    report(2, "kernel invariances: key shift, convex bounds, reversal (100 cases each)",
           worst_shift <= kTolShift && worst_excursion <= 0.0 && worst_rev <= kTolRev,
           "shift err " + fmt(worst_shift) + " (tol 1e-6), bound excursion " +
               fmt(worst_excursion) + " (tol 0), reversal err " + fmt(worst_rev) +
               " (tol 1e-6)");
}

// ---- criterion 3: analytic gradients vs central finite differences ----

void criterion_3() {
    constexpr double kH = 1e-5, kTolKernel = 1e-4, kTolBlock = 1e-3;
    Rng rng(4003);

    double worst_kernel = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const int t = static_cast<int>(rng.uniform_int(1, 8));
        const int c = static_cast<int>(rng.uniform_int(1, 3));
        auto k = randn<double>({t, c}, rng, 1.5);
        auto v = randn<double>({t, c}, rng, 2.0);
        auto w = rand_decay<double>(c, rng, 0.05, 3.0);
        auto u = randn<double>({c}, rng);
        const auto go = randn<double>({t, c}, rng);
        auto loss = [&] {
            const auto y = wkv_scan(k, v, w, u);
            double s = 0;
            for (std::int64_t i = 0; i < y.numel(); ++i) s += go[i] * y[i];
            return s;
        };
        const auto g = wkv_backward(k, v, w, u, go);
        auto probe = [&](TensorD& tensor, const TensorD& analytic) {
            for (std::int64_t i = 0; i < tensor.numel(); ++i) {
                const double keep = tensor[i];
                tensor[i] = keep + kH;
                const double lp = loss();
                tensor[i] = keep - kH;
                const double lm = loss();
                tensor[i] = keep;
                worst_kernel =
                    std::max(worst_kernel, rel_err(analytic[i], (lp - lm) / (2 * kH)));
            }
        };
        probe(k, g.k);
        probe(v, g.v);
        probe(w, g.w);
        probe(u, g.u);
    }

    double worst_block = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const int c = static_cast<int>(rng.uniform_int(6, 12));
        const double r_con = 0.1 * static_cast<double>(rng.uniform_int(0, 3));
        const double r_i = 0.1 * static_cast<double>(rng.uniform_int(0, 2));
        BlockConfig bc;
        bc.channels = c;
        bc.split = ChannelSplit::from_ratio(c, 1.0 - r_con - r_i, r_con, r_i);
        bc.local_k = 3;
        bc.dw_k = 3;
        bc.ffn_ratio = 2;
        Block<double> blk;
        blk.init(bc, rng);
        const int hw = static_cast<int>(rng.uniform_int(3, 4));
        const auto x = randn<double>({hw, hw, c}, rng);
        const auto y0 = blk.forward(x);
        const auto go = randn<double>(y0.shape(), rng);
        ParamList<double> params;
        blk.collect("blk", params);
        for (auto& pr : params) pr.p->zero_grad();
        const auto dx = blk.backward(go);
        auto loss_at = [&](const TensorD& xx) {
            const auto yy = blk.forward(xx);
            double s = 0;
            for (std::int64_t i = 0; i < yy.numel(); ++i) s += go[i] * yy[i];
            return s;
        };
        for (std::int64_t i = 0; i < x.numel(); i += 11) {
            auto xp = x, xm = x;
            xp[i] += kH;
            xm[i] -= kH;
            worst_block = std::max(
                worst_block, rel_err(dx[i], (loss_at(xp) - loss_at(xm)) / (2 * kH)));
        }
        for (auto& pr : params)
            for (std::int64_t i = 0; i < pr.p->value.numel();
                 i += std::max<std::int64_t>(1, pr.p->value.numel() / 5)) {
                const double keep = pr.p->value[i];
                pr.p->value[i] = keep + kH;
                const double lp = loss_at(x);
                pr.p->value[i] = keep - kH;
                const double lm = loss_at(x);
                pr.p->value[i] = keep;
                worst_block =
                    std::max(worst_block, rel_err(pr.p->grad[i], (lp - lm) / (2 * kH)));
            }
    }

    report(3, "analytic gradients vs finite differences (f64, h=1e-5, 20+20 configs)",
           worst_kernel <= kTolKernel && worst_block <= kTolBlock,
           "kernel worst rel err " + fmt(worst_kernel) + " (tol 1e-4), block worst " +
               fmt(worst_block) + " (tol 1e-3)");
}

// ---- criterion 4: feature pyramid shapes and channel partitions ----

void criterion_4() {
    bool ok = true;
    std::string detail;
    BackboneConfig cfg;  // defaults: widths 200/376/448, depths 2/2/6
    Rng rng(4004);
    Backbone<float> bb;
    bb.init(cfg, rng);
    for (const int s : {128, 256, 1024}) {
        Tensor<float> img({s, s, 3});
        for (std::int64_t i = 0; i < img.numel(); ++i)
            img[i] = static_cast<float>(rng.uniform(0.0, 1.0));
        const auto pyr = bb.forward(img);
        const bool here = pyr.f1.dim(0) == s / 16 && pyr.f1.dim(1) == s / 16 &&
                          pyr.f1.dim(2) == 200 && pyr.f2.dim(0) == s / 32 &&
                          pyr.f2.dim(1) == s / 32 && pyr.f2.dim(2) == 376 &&
                          pyr.f3.dim(0) == s / 64 && pyr.f3.dim(1) == s / 64 &&
                          pyr.f3.dim(2) == 448;
        ok = ok && here;
        detail += std::to_string(s) + "->" + (here ? "ok " : "WRONG ");
    }

    const auto check_split = [&](int c, double rv, double rc, double ri, int ev, int ec,
                                 int ei) {
        const auto sp = ChannelSplit::from_ratio(c, rv, rc, ri);
        const bool here =
            sp.c_v == ev && sp.c_con == ec && sp.c_i == ei && sp.c_v + sp.c_con + sp.c_i == c;
        ok = ok && here;
        detail += "C" + std::to_string(c) + (here ? " ok " : " WRONG ");
    };
    check_split(200, 0.8, 0.2, 0.0, 160, 40, 0);
    check_split(376, 0.7, 0.2, 0.1, 263, 75, 38);
    check_split(448, 0.6, 0.3, 0.1, 269, 134, 45);
    check_split(10, 0.8, 0.2, 0.0, 8, 2, 0);

    report(4, "feature pyramid shapes at 128/256/1024 and stage channel partitions", ok,
           detail);
}

// ---- criterion 5: loss decomposition and default weights ----

void criterion_5() {
    constexpr double kTol = 1e-9;
    Rng rng(4005);
    double worst = 0;
    for (int rep = 0; rep < 10; ++rep) {
        const int h = 128, w = 128;
        Predictions<double> pred;
        pred.logit1 = randn<double>({h / 16, w / 16, 1}, rng, 2.0);
        pred.logit2 = randn<double>({h / 32, w / 32, 1}, rng, 2.0);
        pred.logit3 = randn<double>({h / 64, w / 64, 1}, rng, 2.0);
        pred.logit_final = randn<double>({h, w, 1}, rng, 2.0);
        TensorD gt({h, w, 1});
        const double cy = rng.uniform(h * 0.3, h * 0.7), cx = rng.uniform(w * 0.3, w * 0.7);
        const double ry = rng.uniform(8.0, 40.0), rx = rng.uniform(8.0, 40.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double dy = (y - cy) / ry, dx = (x - cx) / rx;
                gt.at(y, x, 0) = dy * dy + dx * dx <= 1.0 ? 1.0 : 0.0;
            }
        LossWeights<double> lw;
        lw.lambda_edge = 0.7;
        const int radius = 4;

        // oracle: each of the eight terms assembled independently from the
        // public pieces, then combined by hand
        const Tensor<double>* logits[3] = {&pred.logit1, &pred.logit2, &pred.logit3};
        const double lambdas[3] = {lw.lambda1, lw.lambda2, lw.lambda3};
        double want = 0;
        for (int lvl = 0; lvl < 3; ++lvl) {
            const auto target = downsample_mask(gt, 16 << lvl);
            const auto band = make_edge_mask(target, std::max(1, radius >> (lvl + 1)));
            want += lambdas[lvl] * bce_from_logits(*logits[lvl], target);
            want += lw.lambda_edge * bce_from_logits(*logits[lvl], target, &band);
        }
        const auto band_full = make_edge_mask(gt, radius);
        want += lw.lambda_final * bce_from_logits(pred.logit_final, gt);
        want += lw.lambda_edge * bce_from_logits(pred.logit_final, gt, &band_full);

        const auto got = total_loss(pred, gt, lw, radius, static_cast<const TensorD*>(nullptr),
                                    static_cast<LossGrads<double>*>(nullptr));
        worst = std::max(worst, std::abs(got.total - want));
    }

    const LossWeights<float> defaults;
    const bool defaults_ok =
        defaults.lambda1 == 0.15f && defaults.lambda2 == 0.35f && defaults.lambda3 == 0.55f &&
        defaults.lambda_final == 1.0f;

    report(5, "loss decomposition vs eight-term oracle; default scale weights",
           worst <= kTol && defaults_ok,
           "worst |total - oracle| " + fmt(worst) + " (tol 1e-9), defaults (0.15, 0.35, "
           "0.55, 1.0) " + std::string(defaults_ok ? "ok" : "WRONG"));
}

// ---- criterion 6: metric identities and the rank-based AUC ----

void criterion_6() {
    constexpr double kTol = 1e-9;
    Rng rng(4006);

    double worst_identity = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        ConfusionCounts c;
        c.tp = rng.uniform_int(0, 2000);
        c.fp = rng.uniform_int(0, 2000);
        c.fn = rng.uniform_int(0, 2000);
        c.tn = rng.uniform_int(0, 2000);
        const double f1 = f1_score(c), iou = iou_score(c);
        worst_identity = std::max(worst_identity, std::abs(f1 - 2.0 * iou / (1.0 + iou)));
    }

    // pair enumeration: wins + half ties over all (positive, negative) pairs
    auto pair_auc = [](const std::vector<float>& s,
                       const std::vector<std::uint8_t>& y) -> std::optional<double> {
        double wins = 0, ties = 0;
        std::int64_t pairs = 0;
        for (size_t i = 0; i < s.size(); ++i) {
            if (!y[i]) continue;
            for (size_t j = 0; j < s.size(); ++j) {
                if (y[j]) continue;
                ++pairs;
                if (s[i] > s[j]) ++wins;
                else if (s[i] == s[j]) ++ties;
            }
        }
        if (!pairs) return std::nullopt;
        return (wins + 0.5 * ties) / static_cast<double>(pairs);
    };

    int exact_matches = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const int n = static_cast<int>(rng.uniform_int(2, 24));
        std::vector<float> s(static_cast<size_t>(n));
        std::vector<std::uint8_t> y(static_cast<size_t>(n));
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            s[static_cast<size_t>(i)] =
                static_cast<float>(rng.uniform_int(0, 9)) / 10.0f;  // quantized: forces ties
            y[static_cast<size_t>(i)] = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
            (y[static_cast<size_t>(i)] ? has1 : has0) = true;
        }
        if (!has0) y[0] = 0;
        if (!has1) y[static_cast<size_t>(n - 1)] = 1;
        const auto got = auc_score(s, y);
        const auto want = pair_auc(s, y);
        if (got.has_value() == want.has_value() &&
            (!got.has_value() || *got == *want))  // bitwise: same U, same divisor
            ++exact_matches;
    }

    bool hand_ok = true;
    {
        const auto sep = auc_score({0.9f, 0.8f, 0.2f, 0.1f}, {1, 1, 0, 0});
        hand_ok = hand_ok && sep.has_value() && *sep == 1.0;
        const auto mixed = auc_score({0.9f, 0.4f, 0.35f, 0.8f}, {1, 0, 1, 0});
        hand_ok = hand_ok && mixed.has_value() && *mixed == 0.5;
        const auto ties = auc_score({0.5f, 0.5f, 0.5f, 0.5f}, {1, 0, 1, 0});
        hand_ok = hand_ok && ties.has_value() && *ties == 0.5;
        hand_ok = hand_ok && !auc_score({0.1f, 0.9f}, {1, 1}).has_value();
        ConfusionCounts both_empty;  // no positives predicted or present
        both_empty.tn = 4;
        hand_ok = hand_ok && f1_score(both_empty) == 1.0 && iou_score(both_empty) == 1.0;
        ConfusionCounts ones{1, 1, 1, 1};
        hand_ok = hand_ok && std::abs(f1_score(ones) - 0.5) < 1e-15 &&
                  std::abs(iou_score(ones) - 1.0 / 3.0) < 1e-15 &&
                  std::abs(accuracy_score(ones) - 0.5) < 1e-15;
    }

    report(6, "overlap-score identity (1000 cases), AUC vs pair oracle (100), hand cases",
           worst_identity <= kTol && exact_matches == 100 && hand_ok,
           "identity err " + fmt(worst_identity) + " (tol 1e-9), exact AUC matches " +
               std::to_string(exact_matches) + "/100, hand cases " +
               (hand_ok ? "ok" : "WRONG"));
}

// ---- criterion 7: complexity scaling ----

void criterion_7() {
    const ModelConfig cfg;  // full-scale defaults
    const auto r1024 = count_flops(cfg, 1024);
    const auto r2048 = count_flops(cfg, 2048);
    const double ratio =
        static_cast<double>(r2048.total_flops) / static_cast<double>(r1024.total_flops);
    const bool analytic_ok = ratio >= 3.9 && ratio <= 4.1 && r2048.total_flops < 100'000'000'000;

    const auto bench = bench_wkv({1024, 4096}, 16, 3, 4007);
    const double scan_ratio = bench.rows[1].scan_ns_per_token * 4096.0 /
                              (bench.rows[0].scan_ns_per_token * 1024.0);
    const double naive_ratio = bench.rows[1].naive_ns_per_token * 4096.0 /
                               (bench.rows[0].naive_ns_per_token * 1024.0);
    const bool timing_ok = scan_ratio <= 5.0 && naive_ratio >= 10.0;

    report(7, "cost model: 2048/1024 flop ratio, flop budget, linear-vs-quadratic timing",
           analytic_ok && timing_ok,
           "flop ratio " + fmt(ratio) + " (in [3.9, 4.1]), 2048 total " +
               fmt(static_cast<double>(r2048.total_flops) / 1e9) +
               " G (< 100 G), scan time x" + fmt(scan_ratio) + " (<= 5), reference time x" +
               fmt(naive_ratio) + " (>= 10)");
}

// ---- criterion 8: end-to-end overfit with deterministic repeat ----

RunSettings overfit_settings(const std::string& data_root, const std::string& out_dir,
                             std::string& resolved) {
    KvMap map{{"channels", "64,128,160"}, {"stem", "16,32,64"},     {"depths", "1,1,2"},
              {"ffn_ratio", "2"},         {"merge_ffn_ratio", "2"}, {"head_width", "64"},
              {"steps", "500"},           {"warmup_steps", "25"},   {"batch_size", "6"},
              {"lr_init", "0.0025"},      {"lambda_edge", "0.1"},   {"eval_every", "250"},
              {"eval_split", "train"},    {"seed", "3"},            {"data_root", data_root},
              {"out_dir", out_dir}};
    ConfigView view(std::move(map));
    auto settings = RunSettings::from_view(view);
    view.finish();
    resolved = view.resolved();
    return settings;
}

void criterion_8(const fs::path& workdir) {
    constexpr double kMinF1 = 0.95, kMinAcc = 0.99, kMaxLoss = 0.05, kMaxSec = 600.0;
    const std::string corpus = (workdir / "corpus").string();
    gen_synthetic(corpus, 8, 256, 13);
    {
        // overfit target: every image trains
        std::ofstream mani(fs::path(corpus) / "manifest.tsv", std::ios::binary);
        for (int i = 0; i < 8; ++i)
            mani << "synth_" << std::setw(4) << std::setfill('0') << i << "\ttrain\n";
    }

    std::ostringstream sink;
    std::string resolved_a, resolved_b;
    const auto t0 = std::chrono::steady_clock::now();
    Trainer first(overfit_settings(corpus, (workdir / "runA").string(), resolved_a),
                  resolved_a);
    const auto a = first.run(sink);
    const double sec = seconds_since(t0);

    Trainer second(overfit_settings(corpus, (workdir / "runB").string(), resolved_b),
                   resolved_b);
    const auto b = second.run(sink);

    bool identical = a.trace.size() == b.trace.size() && a.trace.size() == 500;
    for (size_t i = 0; identical && i < a.trace.size(); ++i)
        identical = a.trace[i].step == b.trace[i].step && a.trace[i].lr == b.trace[i].lr &&
                    a.trace[i].loss == b.trace[i].loss &&
                    a.trace[i].loss_final == b.trace[i].loss_final &&
                    a.trace[i].loss_edge == b.trace[i].loss_edge;

    const double f1 = a.final_metrics.f1;
    const double acc = a.final_metrics.acc;
    const double last_loss = a.trace.empty() ? 1e9 : a.trace.back().loss;
    report(8, "500-step overfit of an 8-image 256px corpus, bitwise-repeatable",
           f1 >= kMinF1 && acc >= kMinAcc && last_loss < kMaxLoss && identical &&
               sec < kMaxSec,
           "train f1 " + fmt(f1) + " (>= 0.95), acc " + fmt(acc) + " (>= 0.99), final loss " +
               fmt(last_loss) + " (< 0.05), repeat trace " +
               (identical ? "identical" : "DIVERGED") + ", " + fmt(sec) + "s (< 600s)");
}

// ---- criterion 9: published headline numbers are out of scope ----

void criterion_9() {
    std::printf(
        "    The published full-scale accuracy tables for this architecture (average\n"
        "    pixel-F1 around 42.6 across real-image benchmarks and 78.0 on the\n"
        "    2048px suite) depend on large-scale distillation pretraining and\n"
        "    licensed datasets. They are out of scope for this repository and are\n"
        "    not reproduced; criteria 1-8 gate the implementation through oracles,\n"
        "    invariances, gradient checks, and small-scale end-to-end training.\n");
    report(9, "full-scale benchmark rows declared out of scope", true,
           "statement printed above");
}

// ---- auxiliary: the installed command line binary round-trips ----

bool cli_smoke(const std::string& cli, const fs::path& workdir) {
    auto run = [](const std::string& cmd) {
        const int rc = std::system(cmd.c_str());
        return rc != -1 && WIFEXITED(rc) ? WEXITSTATUS(rc) : 127;
    };
    const std::string q = "'" + cli + "'";
    if (run(q + " --help > /dev/null 2>&1") != 0) return false;

    const fs::path mask = workdir / "corpus" / "masks" / "synth_0000.png";
    const fs::path out = workdir / "cli_pred";
    if (run(q + " predict --prob-map-input '" + mask.string() + "' --out '" + out.string() +
            "' > /dev/null 2>&1") != 0)
        return false;

    // thresholding a mask must reproduce it byte for byte
    std::ifstream a(mask, std::ios::binary), b(out / "synth_0000_mask.png", std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    return a && b && sa.str() == sb.str() && !sa.str().empty();
}

}  // namespace

int main(int argc, char** argv) {
    std::string cli;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--cli") cli = argv[i + 1];

    fs::path workdir =
        fs::temp_directory_path() / ("rwkviml-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(workdir);
    fs::create_directories(workdir);

    std::printf("acceptance gate: 9 criteria, fixed seeds, pinned tolerances\n");
    const auto guard = [](int idx, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            report(idx, "criterion aborted by exception", false, e.what());
        }
    };
    guard(1, [] { criterion_1(); });
    guard(2, [] { criterion_2(); });
    guard(3, [] { criterion_3(); });
    guard(4, [] { criterion_4(); });
    guard(5, [] { criterion_5(); });
    guard(6, [] { criterion_6(); });
    guard(7, [] { criterion_7(); });
    guard(8, [&] { criterion_8(workdir); });
    guard(9, [] { criterion_9(); });
    const int criteria_failed = g_failed;

    if (!cli.empty()) {
        bool ok = false;
        try {
            ok = cli_smoke(cli, workdir);
        } catch (const std::exception&) {
        }
        std::printf("[cli] binary smoke (help exit code, mask round trip): %s\n",
                    ok ? "PASS" : "FAIL");
        if (!ok) ++g_failed;
    }

    fs::remove_all(workdir);
    std::printf("acceptance: %d/9 criteria passed\n", 9 - criteria_failed);
    return g_failed == 0 ? 0 : 1;
}
