#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rwkviml/tensor.hpp"

namespace iml {

// Single-file container: a little-endian u64 header length, then a text
// header listing (name, dtype, shape, offset, nbytes) per tensor, then the
// raw tensor bytes. The header also carries the step counter and the
// resolved config snapshot, so a run can be resumed from the file alone.
struct CheckpointData {
    std::int64_t step = 0;
    std::string config_text;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace iml
