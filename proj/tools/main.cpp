#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "rwkviml/bench.hpp"
#include "rwkviml/config.hpp"
#include "rwkviml/data.hpp"
#include "rwkviml/flops.hpp"
#include "rwkviml/loss.hpp"
#include "rwkviml/metrics.hpp"
#include "rwkviml/png_io.hpp"
#include "rwkviml/trainer.hpp"

namespace fs = std::filesystem;
using namespace iml;

namespace {

class TeeBuf : public std::streambuf {
public:
    TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

protected:
    int overflow(int ch) override {
        if (ch == traits_type::eof()) return 0;
        const int r1 = a_->sputc(static_cast<char>(ch));
        const int r2 = b_->sputc(static_cast<char>(ch));
        return (r1 == traits_type::eof() || r2 == traits_type::eof()) ? traits_type::eof() : ch;
    }
    int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

private:
    std::streambuf* a_;
    std::streambuf* b_;
};

// precedence: base map < --set overrides < dedicated flags
void layer_overrides(KvMap& map, const std::vector<std::string>& sets,
                     const std::vector<std::pair<std::string, std::string>>& flags) {
    for (const auto& kv : sets) apply_override(map, kv);
    for (const auto& [k, v] : flags)
        if (!v.empty()) map[k] = v;
}

RunSettings resolve(KvMap map, std::string* resolved_out) {
    ConfigView view(std::move(map));
    auto settings = RunSettings::from_view(view);
    view.finish();
    if (resolved_out) *resolved_out = view.resolved();
    return settings;
}

Tensor<float> image_from_png(const std::string& path) {
    const PngImage img = read_png(path);
    Tensor<float> out({img.height, img.width, 3});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) =
                    static_cast<float>(img.at(y, x, img.channels == 3 ? c : 0)) / 255.0f;
    return out;
}

// zero-pads bottom/right up to the nearest legal model input size
Tensor<float> pad_to_legal(const Tensor<float>& img) {
    const int h = img.dim(0), w = img.dim(1);
    const int ph = std::max(128, (h + 63) / 64 * 64);
    const int pw = std::max(128, (w + 63) / 64 * 64);
    if (ph == h && pw == w) return img;
    Tensor<float> out({ph, pw, 3});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
    return out;
}

Tensor<float> predict_prob(Model<float>& model, const Tensor<float>& image) {
    const int h = image.dim(0), w = image.dim(1);
    auto preds = model.forward(pad_to_legal(image));
    auto prob = prob_map(preds.logit_final);
    if (prob.dim(0) == h && prob.dim(1) == w) return prob;
    Tensor<float> out({h, w, 1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x, 0) = prob.at(y, x, 0);
    return out;
}

Model<float> model_from_checkpoint(const CheckpointData& data, const std::string& origin,
                                   std::string* resolved_out, RunSettings* settings_out) {
    KvMap map = parse_config_text(data.config_text);
    map.erase("data_root");
    map.erase("out_dir");
    map.erase("resume");
    auto settings = resolve(std::move(map), resolved_out);
    Model<float> model;
    model.init(settings.model, settings.train.seed);
    load_model_weights(model, data, origin);
    if (settings_out) *settings_out = settings;
    return model;
}

void write_gray(const std::string& path, const Tensor<float>& t, float scale) {
    std::vector<std::uint8_t> bytes(static_cast<size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        bytes[static_cast<size_t>(i)] =
            static_cast<std::uint8_t>(std::lround(std::clamp(t[i] * scale, 0.0f, 255.0f)));
    write_png(path, bytes.data(), t.dim(0), t.dim(1), 1);
}

// left: input as-is; right: input with the predicted boundary tinted red
void write_overlay(const std::string& path, const Tensor<float>& image,
                   const Tensor<float>& mask) {
    const int h = image.dim(0), w = image.dim(1);
    const auto band = make_edge_mask(mask, 1);
    std::vector<std::uint8_t> bytes(static_cast<size_t>(h) * (2 * w) * 3);
    auto put = [&](int y, int x, int c, float v) {
        bytes[(static_cast<size_t>(y) * (2 * w) + static_cast<size_t>(x)) * 3 +
              static_cast<size_t>(c)] =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const bool edge = band.at(y, x, 0) == 1.0f;
            for (int c = 0; c < 3; ++c) {
                const float v = image.at(y, x, c);
                put(y, x, c, v);
                put(y, w + x, c, edge ? (c == 0 ? 1.0f : 0.15f * v) : v);
            }
        }
    write_png(path, bytes.data(), h, 2 * w, 3);
}

int cmd_gen_synth(const std::string& out_dir, int n, int size, std::uint64_t seed) {
    gen_synthetic(out_dir, n, size, seed);
    std::cout << "wrote " << n << " samples (" << size << "x" << size << ", seed " << seed
              << ") to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& data_root, const std::string& out_dir,
              const std::string& resume) {
    KvMap map;
    if (!config_path.empty()) map = parse_config_file(config_path);
    layer_overrides(map, sets,
                    {{"data_root", data_root}, {"out_dir", out_dir}, {"resume", resume}});
    std::string resolved;
    auto settings = resolve(std::move(map), &resolved);
    if (settings.data_root.empty())
        throw ConfigError("train needs a dataset (--data-root or config key data_root)");

    fs::create_directories(settings.out_dir);
    std::ofstream log_file(fs::path(settings.out_dir) / "train.log");
    if (!log_file) throw DataError("cannot open log file in '" + settings.out_dir + "'");
    TeeBuf tee(std::cout.rdbuf(), log_file.rdbuf());
    std::ostream log(&tee);

    log << "resolved config:\n" << resolved << "---\n";
    Trainer trainer(settings, resolved);
    auto outcome = trainer.run(log);
    log << "final metrics (" << settings.train.eval_split << " split):\n"
        << format_metrics_report(outcome.final_metrics);
    log << "best_f1=" << outcome.best_f1 << "\n";
    log << "best_checkpoint=" << outcome.best_checkpoint << "\n";
    log << "last_checkpoint=" << outcome.last_checkpoint << "\n";
    log.flush();
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_root,
             const std::string& split_name, const std::string& report_path,
             float threshold) {
    const auto data = load_checkpoint(checkpoint);
    std::string resolved;
    auto model = model_from_checkpoint(data, checkpoint, &resolved, nullptr);
    std::cout << "resolved config (from checkpoint):\n" << resolved << "---\n";

    Split split;
    if (split_name == "train")
        split = Split::kTrain;
    else if (split_name == "test")
        split = Split::kTest;
    else
        throw ConfigError("unknown split '" + split_name + "' (expected train or test)");

    const auto manifest = load_manifest(data_root);
    const auto entries = manifest.subset(split);
    if (entries.empty())
        throw DataError("no samples in split '" + split_name + "' under '" + data_root + "'");

    MetricsAccumulator acc;
    for (const auto* entry : entries) {
        auto sample = load_sample(*entry);
        acc.add(predict_prob(model, sample.image), sample.mask, threshold);
    }
    const auto metrics = acc.finish();
    const std::string report = format_metrics_report(metrics);
    std::cout << report;
    if (!report_path.empty()) {
        write_metrics_report(report_path, metrics);
        std::cout << "report written to " << report_path << "\n";
    }
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path,
                const std::string& prob_input, const std::string& out_dir, float threshold,
                bool write_prob) {
    Tensor<float> prob;
    Tensor<float> image;
    bool have_image = false;
    std::string stem;

    if (!prob_input.empty()) {
        // threshold an existing probability map; no model involved
        const PngImage png = read_png(prob_input);
        prob = Tensor<float>({png.height, png.width, 1});
        for (int y = 0; y < png.height; ++y)
            for (int x = 0; x < png.width; ++x)
                prob.at(y, x, 0) = static_cast<float>(png.at(y, x, 0)) / 255.0f;
        stem = fs::path(prob_input).stem().string();
        if (!image_path.empty()) {
            image = image_from_png(image_path);
            if (image.dim(0) != prob.dim(0) || image.dim(1) != prob.dim(1))
                throw ShapeError("image and probability map sizes differ");
            have_image = true;
        }
    } else {
        if (checkpoint.empty() || image_path.empty())
            throw ConfigError("predict needs --checkpoint and --image (or --prob-map-input)");
        const auto data = load_checkpoint(checkpoint);
        std::string resolved;
        auto model = model_from_checkpoint(data, checkpoint, &resolved, nullptr);
        std::cout << "resolved config (from checkpoint):\n" << resolved << "---\n";
        image = image_from_png(image_path);
        prob = predict_prob(model, image);
        stem = fs::path(image_path).stem().string();
        have_image = true;
    }

    Tensor<float> mask(prob.shape());
    for (std::int64_t i = 0; i < prob.numel(); ++i)
        mask[i] = prob[i] >= threshold ? 1.0f : 0.0f;

    fs::create_directories(out_dir);
    const fs::path base = fs::path(out_dir) / stem;
    const std::string mask_path = base.string() + "_mask.png";
    write_gray(mask_path, mask, 255.0f);
    std::cout << "mask written to " << mask_path << "\n";
    if (write_prob) {
        const std::string prob_path = base.string() + "_prob.png";
        write_gray(prob_path, prob, 255.0f);
        std::cout << "probability map written to " << prob_path << "\n";
    }
    if (have_image) {
        const std::string overlay_path = base.string() + "_overlay.png";
        write_overlay(overlay_path, image, mask);
        std::cout << "overlay written to " << overlay_path << "\n";
    }
    return 0;
}

int cmd_bench_wkv(const std::string& t_list, int channels, int repeats,
                  const std::string& out_path, std::uint64_t seed) {
    std::vector<int> lengths;
    std::stringstream ss(t_list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            lengths.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad sequence length '" + tok + "' in --t-list");
        }
    }
    if (lengths.empty()) throw ConfigError("--t-list needs at least one sequence length");
    const auto report = bench_wkv(lengths, channels, repeats, seed);
    const std::string text = format_bench_report(report);
    std::cout << text;
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw DataError("cannot write '" + out_path + "'");
        out << text;
        std::cout << "report written to " << out_path << "\n";
    }
    return 0;
}

int cmd_count_flops(const std::string& config_path, const std::vector<std::string>& sets,
                    int size, const std::string& out_path) {
    KvMap map;
    if (!config_path.empty()) map = parse_config_file(config_path);
    layer_overrides(map, sets, {});
    std::string resolved;
    auto settings = resolve(std::move(map), &resolved);

    std::ostringstream text;
    text << format_cost_report(count_flops(settings.model, size));
    text << "\n"
         << reconcile_report(count_flops(settings.model, 1024),
                             count_flops(settings.model, 2048));
    std::cout << text.str();
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw DataError("cannot write '" + out_path + "'");
        out << text.str();
        std::cout << "report written to " << out_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rwkv-iml: linear-attention image manipulation localization"};
    app.require_subcommand(1);

    std::string config_path, data_root, out_dir, resume, checkpoint, image_path, prob_input;
    std::string split_name = "test";
    std::string report_path, t_list = "256,1024,4096", bench_out;
    std::vector<std::string> sets;
    int n = 8, size = 256, flop_size = 1024, channels = 448, repeats = 5;
    std::uint64_t seed = 7;
    float threshold = 0.5f;
    bool write_prob = false;

    auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--n", n, "number of samples");
    gen->add_option("--size", size, "image side length (>=64, multiple of 64)");
    gen->add_option("--seed", seed, "rng seed");

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--set", sets, "config override key=value (repeatable)");
    train->add_option("--data-root", data_root, "dataset directory");
    train->add_option("--out", out_dir, "run directory for logs and checkpoints");
    train->add_option("--resume", resume, "checkpoint to resume from");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--data-root", data_root, "dataset directory")->required();
    eval->add_option("--split", split_name, "train or test");
    eval->add_option("--out", report_path, "write the metrics report here");
    eval->add_option("--threshold", threshold, "mask threshold on probabilities");

    auto* predict = app.add_subcommand("predict", "segment one image");
    predict->add_option("--checkpoint", checkpoint, "checkpoint file");
    predict->add_option("--image", image_path, "input png");
    predict->add_option("--prob-map-input", prob_input,
                        "threshold this probability map png instead of running a model");
    predict->add_option("--out", out_dir, "output directory")->required();
    predict->add_option("--threshold", threshold, "mask threshold on probabilities");
    predict->add_flag("--write-prob", write_prob, "also write the probability map png");

    auto* bench = app.add_subcommand("bench-wkv", "time the token-mixing kernel");
    bench->add_option("--t-list", t_list, "comma-separated sequence lengths");
    bench->add_option("--channels", channels, "value channels per token");
    bench->add_option("--repeats", repeats, "timing repeats (median is reported)");
    bench->add_option("--out", bench_out, "write the report here");
    bench->add_option("--seed", seed, "rng seed for kernel inputs");

    auto* flops = app.add_subcommand("count-flops", "print the analytic cost report");
    flops->add_option("--config", config_path, "key=value config file");
    flops->add_option("--set", sets, "config override key=value (repeatable)");
    flops->add_option("--size", flop_size, "input side length");
    flops->add_option("--out", report_path, "write the report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // 0 for --help; all usage errors collapse to 1
    }

    try {
        if (gen->parsed()) return cmd_gen_synth(out_dir, n, size, seed);
        if (train->parsed()) return cmd_train(config_path, sets, data_root, out_dir, resume);
        if (eval->parsed())
            return cmd_eval(checkpoint, data_root, split_name, report_path, threshold);
        if (predict->parsed())
            return cmd_predict(checkpoint, image_path, prob_input, out_dir, threshold,
                               write_prob);
        if (bench->parsed()) return cmd_bench_wkv(t_list, channels, repeats, bench_out, seed);
        if (flops->parsed()) return cmd_count_flops(config_path, sets, flop_size, report_path);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
