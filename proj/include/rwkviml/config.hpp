#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rwkviml/loss.hpp"
#include "rwkviml/model.hpp"

namespace iml {

// flat key=value text; '#' starts a comment, blank lines allowed
using KvMap = std::map<std::string, std::string>;

KvMap parse_config_text(const std::string& text);
KvMap parse_config_file(const std::string& path);

// "key=value" from the command line; later overrides win
void apply_override(KvMap& map, const std::string& keyval);

// Typed reader over a KvMap. Every key must be taken exactly once before
// finish(); leftovers are rejected by name. resolved() renders the full
// effective configuration, defaults included, for run logging.
class ConfigView {
public:
    explicit ConfigView(KvMap map) : map_(std::move(map)) {}

    std::string take_str(const std::string& key, const std::string& def);
    std::int64_t take_int(const std::string& key, std::int64_t def);
    double take_double(const std::string& key, double def);
    std::vector<int> take_int_list(const std::string& key, std::vector<int> def);
    std::vector<double> take_double_list(const std::string& key, std::vector<double> def);

    void finish() const;
    std::string resolved() const;

private:
    std::string raw(const std::string& key, const std::string& fallback);

    KvMap map_;
    std::set<std::string> taken_;
    std::map<std::string, std::string> resolved_;
};

struct TrainConfig {
    double lr_init = 1e-4;
    double weight_decay = 0.01;
    int batch_size = 4;
    int steps = 500;
    int warmup_steps = 20;
    std::uint64_t seed = 7;
    std::string precision = "f32";
    int eval_every = 50;
    std::string eval_split = "test";
    double clip_norm = 1.0;
    int edge_radius = 4;
    LossWeights<float> weights;

    void validate() const;
};

struct RunSettings {
    ModelConfig model;
    TrainConfig train;
    std::string data_root;
    std::string out_dir = "out";
    std::string resume;  // optional checkpoint to continue from

    // consumes the documented key set; call view.finish() afterwards
    static RunSettings from_view(ConfigView& view);
};

}  // namespace iml
