#include "rwkviml/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "rwkviml/rng.hpp"
#include "rwkviml/wkv.hpp"

namespace iml {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// times fn over enough iterations to cover ~20 ms, returns seconds per call
template <typename F>
double time_call(F&& fn, double target_s = 0.02) {
    // estimate once
    auto t0 = Clock::now();
    fn();
    const double once = std::max(seconds_since(t0), 1e-9);
    const int iters = std::max(1, static_cast<int>(target_s / once));
    t0 = Clock::now();
    for (int i = 0; i < iters; ++i) fn();
    return seconds_since(t0) / iters;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

WkvBenchReport bench_wkv(const std::vector<int>& t_list, int c_v, int repeats,
                         std::uint64_t seed) {
    WkvBenchReport report;
    report.c_v = c_v;
    report.repeats = repeats;

    Rng rng(seed);
    for (int t_len : t_list) {
        Tensor<float> k({t_len, c_v}), v({t_len, c_v}), w({c_v}), u({c_v});
        for (std::int64_t i = 0; i < k.numel(); ++i) {
            k[i] = static_cast<float>(rng.normal());
            v[i] = static_cast<float>(rng.normal());
        }
        for (int c = 0; c < c_v; ++c) {
            w[c] = static_cast<float>(rng.uniform(0.1, 2.0));
            u[c] = static_cast<float>(rng.normal());
        }

        // correctness guard on the exact benchmarked inputs; differences are
        // scaled by each channel's peak magnitude, as in the kernel oracle
        auto scan_out = wkv_scan(k, v, w, u);
        auto naive_out = wkv_naive(k, v, w, u);
        for (int c = 0; c < c_v; ++c) {
            double peak = 1e-6, diff = 0.0;
            for (int t = 0; t < t_len; ++t) {
                const double a = scan_out.at(t, c), b = naive_out.at(t, c);
                peak = std::max({peak, std::abs(a), std::abs(b)});
                diff = std::max(diff, std::abs(a - b));
            }
            report.max_rel_err = std::max(report.max_rel_err, diff / peak);
        }

        // warmup, then median of repeats
        wkv_scan(k, v, w, u);
        wkv_naive(k, v, w, u);
        std::vector<double> scan_s, naive_s;
        for (int r = 0; r < repeats; ++r) {
            scan_s.push_back(time_call([&] { wkv_scan(k, v, w, u); }));
            naive_s.push_back(time_call([&] { wkv_naive(k, v, w, u); }));
        }
        BenchRow row;
        row.t_len = t_len;
        row.scan_ns_per_token = median(scan_s) * 1e9 / t_len;
        row.naive_ns_per_token = median(naive_s) * 1e9 / t_len;
        report.rows.push_back(row);
    }
    return report;
}

std::string format_bench_report(const WkvBenchReport& r) {
    std::ostringstream os;
    char buf[160];
    os << "wkv kernel timing, c_v=" << r.c_v << ", median of " << r.repeats
       << " repeats, threads=" << r.threads << "\n";
    std::snprintf(buf, sizeof buf, "%8s %18s %18s\n", "T", "scan ns/token", "naive ns/token");
    os << buf;
    for (const auto& row : r.rows) {
        std::snprintf(buf, sizeof buf, "%8d %18.1f %18.1f\n", row.t_len, row.scan_ns_per_token,
                      row.naive_ns_per_token);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "correctness guard: max rel err scan vs naive = %.3g\n",
                  r.max_rel_err);
    os << buf;
    return os.str();
}

double measure_throughput(const ModelConfig& cfg, int input_size, int repeats,
                          std::uint64_t seed) {
    Model<float> model;
    model.init(cfg, seed);
    Rng rng(seed + 1);
    Tensor<float> img({input_size, input_size, 3});
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(rng.uniform());

    model.forward(img);  // warmup
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        model.forward(img);
        times.push_back(seconds_since(t0));
    }
    return 1.0 / median(times);
}

}  // namespace iml
