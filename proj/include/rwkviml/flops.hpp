#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rwkviml/model.hpp"

namespace iml {

// Counting convention: multiply-accumulates in projections and convolutions
// at 2 FLOPs each, plus the token scan at its per-step op count. Bias adds,
// normalization, activations, shifts, and interpolation are excluded. Every
// report header states this.
std::int64_t linear_flops(std::int64_t tokens, std::int64_t cin, std::int64_t cout);
std::int64_t conv2d_flops(std::int64_t h_out, std::int64_t w_out, std::int64_t k,
                          std::int64_t cin, std::int64_t cout);
std::int64_t depthwise_flops(std::int64_t tokens, std::int64_t k, std::int64_t c);
std::int64_t wkv_flops(std::int64_t tokens, std::int64_t c_v);

struct CostItem {
    std::string name;
    std::int64_t flops = 0;
    std::int64_t params = 0;
};

struct CostReport {
    int input_size = 0;
    std::int64_t total_flops = 0;
    std::int64_t total_params = 0;
    std::vector<CostItem> items;  // sums exactly to the totals
    int threads = 1;
};

CostReport count_flops(const ModelConfig& cfg, int input_size);

std::string format_cost_report(const CostReport& r);

// Side-by-side view against the published complexity row of the full-scale
// model this architecture follows (19.8 M params, 21.7 GFLOPs at 1024^2,
// 86.7 GFLOPs at 2048^2), with percentage gaps. Informative only; the
// asserted facts are the quadratic input scaling and the sub-100-GFLOP
// budget at 2048^2.
std::string reconcile_report(const CostReport& at_1024, const CostReport& at_2048);

}  // namespace iml
