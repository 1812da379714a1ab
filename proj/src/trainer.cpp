#include "rwkviml/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rwkviml/error.hpp"
#include "rwkviml/loss.hpp"

namespace fs = std::filesystem;

namespace iml {

double cosine_lr(std::int64_t step, std::int64_t warmup_steps, std::int64_t steps,
                 double lr_init) {
    if (warmup_steps > 0 && step < warmup_steps)
        return lr_init * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (steps <= warmup_steps) return lr_init;
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(steps - warmup_steps);
    return lr_init * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double clip_global_norm(const ParamList<float>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& pr : params)
        for (std::int64_t i = 0; i < pr.p->grad.numel(); ++i) {
            const double g = pr.p->grad[i];
            sq += g * g;
        }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const float scale = static_cast<float>(max_norm / norm);
        for (const auto& pr : params)
            for (std::int64_t i = 0; i < pr.p->grad.numel(); ++i) pr.p->grad[i] *= scale;
    }
    return norm;
}

void AdamW::step(const ParamList<float>& params, double lr, std::int64_t t) {
    for (const auto& pr : params)
        if (!pr.p->grad.all_finite())
            throw NumericError("gradient for parameter '" + pr.name +
                               "' is not finite at update " + std::to_string(t));

    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (const auto& pr : params) {
        auto& mom = state_[pr.name];
        if (mom.m.shape() != pr.p->value.shape()) {
            mom.m = Tensor<float>(pr.p->value.shape());
            mom.v = Tensor<float>(pr.p->value.shape());
        }
        auto& value = pr.p->value;
        const auto& grad = pr.p->grad;
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            const double g = grad[i];
            const double m = kBeta1 * mom.m[i] + (1.0 - kBeta1) * g;
            const double v = kBeta2 * mom.v[i] + (1.0 - kBeta2) * g * g;
            mom.m[i] = static_cast<float>(m);
            mom.v[i] = static_cast<float>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + kEps) +
                                  weight_decay_ * static_cast<double>(value[i]);
            value[i] = static_cast<float>(value[i] - lr * update);
        }
    }
}

void AdamW::export_state(CheckpointData& out) const {
    for (const auto& [name, mom] : state_) {
        out.tensors.emplace_back("opt." + name + ".m", mom.m);
        out.tensors.emplace_back("opt." + name + ".v", mom.v);
    }
}

void AdamW::import_state(const CheckpointData& in, const ParamList<float>& params) {
    state_.clear();
    for (const auto& pr : params) {
        const Tensor<float>* m = in.find("opt." + pr.name + ".m");
        const Tensor<float>* v = in.find("opt." + pr.name + ".v");
        if (!m || !v)
            throw DataError("checkpoint lacks optimizer state for parameter '" + pr.name + "'");
        if (m->shape() != pr.p->value.shape() || v->shape() != pr.p->value.shape())
            throw DataError("optimizer state shape mismatch for parameter '" + pr.name + "'");
        state_[pr.name] = Moments{*m, *v};
    }
}

Trainer::Trainer(const RunSettings& settings, std::string resolved_config)
    : cfg_(settings), resolved_config_(std::move(resolved_config)),
      opt_(settings.train.weight_decay) {
    model_.init(cfg_.model, cfg_.train.seed);

    auto manifest = load_manifest(cfg_.data_root);
    for (const auto& e : manifest.entries) {
        auto s = load_sample(e);
        check_input_size(s.image.dim(0), s.image.dim(1));
        (e.split == Split::kTrain ? train_ : test_).push_back(std::move(s));
    }
    if (train_.empty()) throw DataError("no training samples under " + cfg_.data_root);
    if (!cfg_.resume.empty()) restore_state(cfg_.resume);
}

DatasetMetrics Trainer::evaluate(Split split) {
    auto& samples = split == Split::kTrain ? train_ : test_;
    if (samples.empty())
        throw DataError(std::string("eval split '") +
                        (split == Split::kTrain ? "train" : "test") + "' has no samples");
    MetricsAccumulator acc;
    for (auto& s : samples) {
        auto preds = model_.forward(s.image);
        acc.add(prob_map(preds.logit_final), s.mask);
    }
    return acc.finish();
}

StepLog Trainer::train_step(std::int64_t step) {
    const auto& t = cfg_.train;
    Rng rng = step_rng(t.seed, static_cast<std::uint64_t>(step), 0);
    model_.zero_grad();

    StepLog rec;
    rec.step = step + 1;
    rec.lr = cosine_lr(step + 1, t.warmup_steps, t.steps, t.lr_init);
    const float inv_batch = 1.0f / static_cast<float>(t.batch_size);
    for (int b = 0; b < t.batch_size; ++b) {
        const auto idx = rng.uniform_int(0, static_cast<std::int64_t>(train_.size()) - 1);
        Rng arng = step_rng(t.seed, static_cast<std::uint64_t>(step),
                            1 + static_cast<std::uint64_t>(b));
        Sample s = augment(train_[static_cast<size_t>(idx)], arng);

        auto preds = model_.forward(s.image);
        LossGrads<float> g;
        auto breakdown = total_loss<float>(preds, s.mask, t.weights, t.edge_radius, nullptr, &g);
        if (!std::isfinite(breakdown.total))
            throw NumericError("loss is not finite at step " + std::to_string(step + 1) +
                               " (sample '" + s.id + "')");
        for (Tensor<float>* d : {&g.d1, &g.d2, &g.d3, &g.dfinal})
            for (std::int64_t i = 0; i < d->numel(); ++i) (*d)[i] *= inv_batch;
        model_.backward(g.d1, g.d2, g.d3, g.dfinal);

        rec.loss += breakdown.total * inv_batch;
        rec.loss_final += breakdown.final_plain * inv_batch;
        rec.loss_edge += (breakdown.edge[0] + breakdown.edge[1] + breakdown.edge[2] +
                          breakdown.final_edge) *
                         inv_batch;
    }

    ParamList<float> params;
    model_.collect(params);
    clip_global_norm(params, t.clip_norm);
    opt_.step(params, rec.lr, step + 1);
    return rec;
}

void Trainer::save_state(const std::string& path, std::int64_t step) {
    CheckpointData data;
    data.step = step;
    data.config_text = resolved_config_;
    ParamList<float> params;
    model_.collect(params);
    for (const auto& pr : params) data.tensors.emplace_back(pr.name, pr.p->value);
    opt_.export_state(data);
    save_checkpoint(path, data);
}

void load_model_weights(Model<float>& model, const CheckpointData& data,
                        const std::string& origin) {
    ParamList<float> params;
    model.collect(params);
    for (const auto& pr : params) {
        const Tensor<float>* t = data.find(pr.name);
        if (!t) throw DataError("checkpoint " + origin + " lacks parameter '" + pr.name + "'");
        if (t->shape() != pr.p->value.shape())
            throw DataError("checkpoint " + origin + " has wrong shape for '" + pr.name +
                            "': " + shape_str(t->shape()) + " vs " +
                            shape_str(pr.p->value.shape()));
        pr.p->value = *t;
    }
}

void Trainer::restore_state(const std::string& path) {
    auto data = load_checkpoint(path);
    load_model_weights(model_, data, path);
    ParamList<float> params;
    model_.collect(params);
    opt_.import_state(data, params);
    start_step_ = data.step;
}

TrainOutcome Trainer::run(std::ostream& log, std::int64_t stop_after_step) {
    const auto& t = cfg_.train;
    fs::create_directories(cfg_.out_dir);
    TrainOutcome out;
    out.best_checkpoint = (fs::path(cfg_.out_dir) / "best.ckpt").string();
    out.last_checkpoint = (fs::path(cfg_.out_dir) / "last.ckpt").string();

    char buf[256];
    for (std::int64_t step = start_step_; step < t.steps; ++step) {
        StepLog rec;
        try {
            rec = train_step(step);
        } catch (const NumericError& e) {
            const std::string rescue = (fs::path(cfg_.out_dir) / "abort.ckpt").string();
            save_state(rescue, step);
            throw NumericError(std::string(e.what()) + "; last good state saved to " + rescue);
        }
        out.trace.push_back(rec);
        std::snprintf(buf, sizeof buf, "step=%lld lr=%.8g loss=%.8g loss_final=%.8g loss_edge=%.8g",
                      static_cast<long long>(rec.step), rec.lr, rec.loss, rec.loss_final,
                      rec.loss_edge);
        log << buf << "\n";

        if (rec.step % t.eval_every == 0 || rec.step == t.steps) {
            const auto split = t.eval_split == "train" ? Split::kTrain : Split::kTest;
            auto metrics = evaluate(split);
            std::snprintf(buf, sizeof buf, "eval step=%lld split=%s f1=%.6f iou=%.6f acc=%.6f",
                          static_cast<long long>(rec.step), t.eval_split.c_str(), metrics.f1,
                          metrics.iou, metrics.acc);
            log << buf << "\n";
            if (metrics.f1 > out.best_f1) {
                out.best_f1 = metrics.f1;
                save_state(out.best_checkpoint, rec.step);
            }
            save_state(out.last_checkpoint, rec.step);
            out.final_metrics = metrics;
        }
        if (stop_after_step > 0 && rec.step >= stop_after_step) {
            save_state(out.last_checkpoint, rec.step);
            break;
        }
    }
    return out;
}

}  // namespace iml
