#include "rwkviml/flops.hpp"

#include <cstdio>
#include <sstream>

#include "rwkviml/backbone.hpp"
#include "rwkviml/wkv.hpp"

namespace iml {

std::int64_t linear_flops(std::int64_t tokens, std::int64_t cin, std::int64_t cout) {
    return 2 * tokens * cin * cout;
}

std::int64_t conv2d_flops(std::int64_t h_out, std::int64_t w_out, std::int64_t k,
                          std::int64_t cin, std::int64_t cout) {
    return 2 * h_out * w_out * k * k * cin * cout;
}

std::int64_t depthwise_flops(std::int64_t tokens, std::int64_t k, std::int64_t c) {
    return 2 * tokens * k * k * c;
}

std::int64_t wkv_flops(std::int64_t tokens, std::int64_t c_v) {
    return kWkvScanOpsPerStep * tokens * c_v;
}

namespace {

std::int64_t linear_params(std::int64_t cin, std::int64_t cout) { return cin * cout + cout; }

std::int64_t layer_norm_params(std::int64_t c) { return 2 * c; }

}  // namespace

CostReport count_flops(const ModelConfig& cfg, int input_size) {
    check_input_size(input_size, input_size);
    cfg.validate();
    const auto& bb = cfg.backbone;

    CostReport r;
    r.input_size = input_size;

    auto add = [&r](const std::string& name, std::int64_t flops, std::int64_t params) {
        r.items.push_back({name, flops, params});
        r.total_flops += flops;
        r.total_params += params;
    };

    // stem: four stride-2 3x3 convs, each followed by a norm
    {
        const int widths[5] = {3, bb.stem[0], bb.stem[1], bb.stem[2], bb.channels[0]};
        std::int64_t flops = 0, params = 0;
        std::int64_t side = input_size;
        for (int i = 0; i < 4; ++i) {
            side /= 2;
            flops += conv2d_flops(side, side, 3, widths[i], widths[i + 1]);
            params += 3 * 3 * widths[i] * widths[i + 1] + widths[i + 1];
            params += layer_norm_params(widths[i + 1]);
        }
        add("embed", flops, params);
    }

    const std::int64_t grids[3] = {input_size / 16, input_size / 32, input_size / 64};
    for (int s = 0; s < 3; ++s) {
        const std::int64_t c = bb.channels[static_cast<size_t>(s)];
        const std::int64_t t = grids[s] * grids[s];
        const ChannelSplit split = bb.split(s);
        const std::int64_t depth = bb.depths[static_cast<size_t>(s)];
        const std::string tag = "stage" + std::to_string(s + 1);

        add(tag + ".dwres", depth * depthwise_flops(t, bb.dw_k, c),
            depth * (static_cast<std::int64_t>(bb.dw_k) * bb.dw_k * c + c));
        add(tag + ".norms", 0, depth * 2 * layer_norm_params(c));

        const std::int64_t cv = split.c_v;
        add(tag + ".global",
            depth * (3 * linear_flops(t, cv, cv) + wkv_flops(t, cv) + linear_flops(t, cv, cv)),
            depth * (4 * linear_params(cv, cv) + 2 * cv));

        const std::int64_t cc = split.c_con;
        const std::int64_t k = bb.local_k[static_cast<size_t>(s)];
        add(tag + ".local",
            cc == 0 ? 0 : depth * (depthwise_flops(t, k, cc) + linear_flops(t, cc, cc)),
            cc == 0 ? 0 : depth * (k * k * cc + cc + linear_params(cc, cc)));

        const std::int64_t hidden = c * bb.ffn_ratio;
        add(tag + ".ffn", depth * (linear_flops(t, c, hidden) + linear_flops(t, hidden, c)),
            depth * (linear_params(c, hidden) + linear_params(hidden, c)));
    }

    for (int m = 0; m < 2; ++m) {
        const std::int64_t cin = bb.channels[static_cast<size_t>(m)];
        const std::int64_t cout = bb.channels[static_cast<size_t>(m + 1)];
        const std::int64_t t = grids[m + 1] * grids[m + 1];
        const std::int64_t hidden = cout * bb.merge_ffn_ratio;
        add("merge" + std::to_string(m + 1),
            linear_flops(t, 4 * cin, cout) + linear_flops(t, cout, hidden) +
                linear_flops(t, hidden, cout),
            linear_params(4 * cin, cout) + layer_norm_params(cout) +
                linear_params(cout, hidden) + linear_params(hidden, cout));
    }

    {
        const std::int64_t w = cfg.head_width;
        std::int64_t flops = 0, params = 0;
        for (int s = 0; s < 3; ++s) {
            const std::int64_t t = grids[s] * grids[s];
            flops += linear_flops(t, bb.channels[static_cast<size_t>(s)], w) +
                     linear_flops(t, w, 1);
            params += linear_params(bb.channels[static_cast<size_t>(s)], w) +
                      layer_norm_params(w) + linear_params(w, 1);
        }
        const std::int64_t t1 = grids[0] * grids[0];
        flops += linear_flops(t1, 3 * w, w) + linear_flops(t1, w, 1);
        params += linear_params(3 * w, w) + layer_norm_params(w) + linear_params(w, 1);
        add("decoder", flops, params);
    }

    return r;
}

std::string format_cost_report(const CostReport& r) {
    std::ostringstream os;
    char buf[160];
    os << "cost report for " << r.input_size << "x" << r.input_size
       << " input (MAC = 2 FLOPs; bias/norm/activation/interpolation excluded)\n";
    os << "threads=" << r.threads << "\n";
    std::snprintf(buf, sizeof buf, "%-16s %16s %14s\n", "module", "flops", "params");
    os << buf;
    for (const auto& it : r.items) {
        std::snprintf(buf, sizeof buf, "%-16s %16lld %14lld\n", it.name.c_str(),
                      static_cast<long long>(it.flops), static_cast<long long>(it.params));
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "%-16s %16lld %14lld\n", "total",
                  static_cast<long long>(r.total_flops), static_cast<long long>(r.total_params));
    os << buf;
    std::snprintf(buf, sizeof buf, "total_gflops=%.3f total_params_m=%.3f\n",
                  static_cast<double>(r.total_flops) * 1e-9,
                  static_cast<double>(r.total_params) * 1e-6);
    os << buf;
    return os.str();
}

std::string reconcile_report(const CostReport& at_1024, const CostReport& at_2048) {
    constexpr double kReferenceParamsM = 19.8;
    constexpr double kReferenceGflops1024 = 21.7;
    constexpr double kReferenceGflops2048 = 86.7;

    const double params_m = static_cast<double>(at_1024.total_params) * 1e-6;
    const double g1024 = static_cast<double>(at_1024.total_flops) * 1e-9;
    const double g2048 = static_cast<double>(at_2048.total_flops) * 1e-9;

    auto gap = [](double computed, double reference) {
        return 100.0 * (computed - reference) / reference;
    };

    std::ostringstream os;
    char buf[200];
    os << "reconciliation vs the published full-scale complexity row "
          "(MAC = 2 FLOPs convention; depths and head sizes of that row are unpublished, "
          "so only the scaling ratio and the 100 GFLOP budget are asserted)\n";
    std::snprintf(buf, sizeof buf, "params:        computed %8.3f M   reference %5.1f M   gap %+7.2f%%\n",
                  params_m, kReferenceParamsM, gap(params_m, kReferenceParamsM));
    os << buf;
    std::snprintf(buf, sizeof buf, "flops @1024^2: computed %8.3f G   reference %5.1f G   gap %+7.2f%%\n",
                  g1024, kReferenceGflops1024, gap(g1024, kReferenceGflops1024));
    os << buf;
    std::snprintf(buf, sizeof buf, "flops @2048^2: computed %8.3f G   reference %5.1f G   gap %+7.2f%%\n",
                  g2048, kReferenceGflops2048, gap(g2048, kReferenceGflops2048));
    os << buf;
    std::snprintf(buf, sizeof buf, "scaling ratio 2048^2/1024^2: %.4f (expected 4.0)\n",
                  g2048 / g1024);
    os << buf;
    std::snprintf(buf, sizeof buf, "budget check @2048^2: %.3f G %s 100 G\n", g2048,
                  g2048 < 100.0 ? "<" : ">=");
    os << buf;
    return os.str();
}

}  // namespace iml
