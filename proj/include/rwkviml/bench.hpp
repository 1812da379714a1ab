#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rwkviml/model.hpp"

namespace iml {

struct BenchRow {
    int t_len = 0;
    double scan_ns_per_token = 0;
    double naive_ns_per_token = 0;
};

struct WkvBenchReport {
    std::vector<BenchRow> rows;
    int c_v = 0;
    int repeats = 0;
    int threads = 1;
    double max_rel_err = 0;  // scan vs naive on the benchmarked inputs
};

// Warms up, then reports the median of `repeats` timings per row; each
// timing loops the kernel long enough to be clock-resolvable.
WkvBenchReport bench_wkv(const std::vector<int>& t_list, int c_v, int repeats,
                         std::uint64_t seed = 17);

std::string format_bench_report(const WkvBenchReport& r);

// forward passes per second on a single image, warmup excluded; measured,
// never asserted
double measure_throughput(const ModelConfig& cfg, int input_size, int repeats,
                          std::uint64_t seed = 18);

}  // namespace iml
