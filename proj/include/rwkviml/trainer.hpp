#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "rwkviml/checkpoint.hpp"
#include "rwkviml/config.hpp"
#include "rwkviml/data.hpp"
#include "rwkviml/metrics.hpp"
#include "rwkviml/model.hpp"

namespace iml {

// linear warmup to lr_init over warmup_steps, cosine decay to 0 at `steps`
double cosine_lr(std::int64_t step, std::int64_t warmup_steps, std::int64_t steps,
                 double lr_init);

// copies checkpoint tensors into the model; missing or misshapen parameters
// are reported by name
void load_model_weights(Model<float>& model, const CheckpointData& data,
                        const std::string& origin);

// scales gradients in place so their global norm is at most max_norm;
// returns the pre-clip norm
double clip_global_norm(const ParamList<float>& params, double max_norm);

class AdamW {
public:
    explicit AdamW(double weight_decay) : weight_decay_(weight_decay) {}

    // t is the 1-based update count used for bias correction; a non-finite
    // gradient aborts, naming the parameter, before any state changes
    void step(const ParamList<float>& params, double lr, std::int64_t t);

    void export_state(CheckpointData& out) const;
    void import_state(const CheckpointData& in, const ParamList<float>& params);

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

private:
    struct Moments {
        Tensor<float> m, v;
    };
    double weight_decay_;
    std::map<std::string, Moments> state_;
};

struct StepLog {
    std::int64_t step = 0;
    double lr = 0, loss = 0, loss_final = 0, loss_edge = 0;
};

struct TrainOutcome {
    std::vector<StepLog> trace;
    double best_f1 = -1.0;
    std::string best_checkpoint;
    std::string last_checkpoint;
    DatasetMetrics final_metrics;
};

class Trainer {
public:
    // loads the corpus eagerly; resolved_config is embedded in checkpoints
    Trainer(const RunSettings& settings, std::string resolved_config);

    // stop_after_step > 0 halts after that step and still writes the last
    // checkpoint, mimicking an interrupted run
    TrainOutcome run(std::ostream& log, std::int64_t stop_after_step = 0);

    DatasetMetrics evaluate(Split split);

    Model<float>& model() { return model_; }

private:
    void save_state(const std::string& path, std::int64_t step);
    void restore_state(const std::string& path);
    StepLog train_step(std::int64_t step);

    RunSettings cfg_;
    std::string resolved_config_;
    Model<float> model_;
    AdamW opt_;
    std::vector<Sample> train_;
    std::vector<Sample> test_;
    std::int64_t start_step_ = 0;
};

}  // namespace iml
