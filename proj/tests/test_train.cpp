#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "rwkviml/data.hpp"
#include "rwkviml/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("rwkviml_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

iml::RunSettings tiny_settings(const std::string& data_root, const std::string& out_dir) {
    iml::RunSettings s;
    auto& bb = s.model.backbone;
    bb.channels = {6, 8, 10};
    bb.depths = {1, 1, 1};
    bb.local_k = {3, 3, 3};
    bb.stem = {3, 4, 5};
    bb.ffn_ratio = 2;
    bb.merge_ffn_ratio = 2;
    s.model.head_width = 4;
    s.train.steps = 6;
    s.train.warmup_steps = 2;
    s.train.batch_size = 2;
    s.train.eval_every = 3;
    s.train.eval_split = "train";
    s.train.lr_init = 1e-3;
    s.train.seed = 11;
    s.data_root = data_root;
    s.out_dir = out_dir;
    return s;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and warmup ramp") {
    CHECK(iml::cosine_lr(20, 20, 100, 1e-4) == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(iml::cosine_lr(100, 20, 100, 1e-4) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(iml::cosine_lr(60, 20, 100, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(iml::cosine_lr(0, 0, 100, 3e-4) == doctest::Approx(3e-4).epsilon(1e-15));
    // ramp is linear
    CHECK(iml::cosine_lr(5, 20, 100, 1e-4) == doctest::Approx(0.25e-4).epsilon(1e-12));
    double prev = -1.0;
    for (int s = 0; s <= 20; ++s) {
        const double lr = iml::cosine_lr(s, 20, 100, 1e-4);
        CHECK(lr > prev);
        prev = lr;
    }
    for (int s = 21; s <= 100; ++s) CHECK(iml::cosine_lr(s, 20, 100, 1e-4) < prev);
}

TEST_CASE("adamw single step matches the closed form") {
    iml::Param<float> p;
    p.init({1});
    p.value[0] = 0.7f;
    p.grad[0] = 0.3f;
    iml::ParamList<float> params{{"w", &p}};

    const double lr = 0.01, wd = 0.1, g = static_cast<double>(p.grad[0]);
    const double p0 = static_cast<double>(p.value[0]);
    const double m = (1.0 - iml::AdamW::kBeta1) * g;
    const double v = (1.0 - iml::AdamW::kBeta2) * g * g;
    const double mhat = m / (1.0 - iml::AdamW::kBeta1);
    const double vhat = v / (1.0 - iml::AdamW::kBeta2);
    const float want = static_cast<float>(p0 - lr * (mhat / (std::sqrt(vhat) + iml::AdamW::kEps) +
                                                     wd * p0));

    iml::AdamW opt(wd);
    opt.step(params, lr, 1);
    CHECK(std::abs(static_cast<double>(p.value[0]) - static_cast<double>(want)) <= 1e-12);
}

TEST_CASE("adamw degenerate cases") {
    iml::Param<float> p;
    p.init({3});
    for (int i = 0; i < 3; ++i) p.value[i] = 1.0f + i;
    p.zero_grad();
    iml::ParamList<float> params{{"w", &p}};

    SUBCASE("zero grads, zero decay: unchanged") {
        iml::AdamW opt(0.0);
        opt.step(params, 0.5, 1);
        for (int i = 0; i < 3; ++i) CHECK(p.value[i] == 1.0f + i);
    }
    SUBCASE("zero grads, decay only: shrink by lr*wd") {
        iml::AdamW opt(0.1);
        opt.step(params, 0.5, 1);
        for (int i = 0; i < 3; ++i)
            CHECK(p.value[i] ==
                  static_cast<float>((1.0 + i) - 0.5 * 0.1 * (1.0 + i)));
    }
    SUBCASE("lr zero: unchanged even with grads") {
        p.grad.fill(2.5f);
        iml::AdamW opt(0.1);
        opt.step(params, 0.0, 1);
        for (int i = 0; i < 3; ++i) CHECK(p.value[i] == 1.0f + i);
    }
    SUBCASE("non-finite gradient aborts naming the parameter") {
        p.grad[1] = std::nanf("");
        iml::AdamW opt(0.0);
        try {
            opt.step(params, 0.1, 1);
            FAIL("expected NumericError");
        } catch (const iml::NumericError& e) {
            CHECK(std::string(e.what()).find("'w'") != std::string::npos);
        }
        CHECK(p.value[1] == 2.0f);  // untouched
    }
}

TEST_CASE("global norm clipping") {
    iml::Param<float> p;
    p.init({2});
    p.grad[0] = 3.0f;
    p.grad[1] = 4.0f;
    iml::ParamList<float> params{{"w", &p}};
    CHECK(iml::clip_global_norm(params, 1.0) == doctest::Approx(5.0).epsilon(1e-7));
    CHECK(p.grad[0] == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(p.grad[1] == doctest::Approx(0.8).epsilon(1e-6));

    p.grad[0] = 0.3f;
    p.grad[1] = 0.4f;
    iml::clip_global_norm(params, 1.0);
    CHECK(p.grad[0] == 0.3f);
    CHECK(p.grad[1] == 0.4f);
}

TEST_CASE("checkpoint files round trip bitwise") {
    TempDir dir("ckpt");
    iml::CheckpointData data;
    data.step = 41;
    data.config_text = "lr_init=0.001\nsteps=6\n";
    iml::Rng rng(3);
    iml::Tensor<float> a({3, 4});
    iml::Tensor<float> b({2, 2, 5});
    for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(rng.normal());
    for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.normal());
    data.tensors.emplace_back("backbone.w", a);
    data.tensors.emplace_back("opt.backbone.w.m", b);

    const auto p1 = (dir.path / "a.ckpt").string();
    const auto p2 = (dir.path / "b.ckpt").string();
    iml::save_checkpoint(p1, data);
    auto back = iml::load_checkpoint(p1);
    CHECK(back.step == 41);
    CHECK(back.config_text == data.config_text);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].first == "backbone.w");
    CHECK(back.tensors[0].second.shape() == a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(back.tensors[0].second[i] == a[i]);

    iml::save_checkpoint(p2, back);
    CHECK(slurp(p1) == slurp(p2));

    SUBCASE("corrupt files are rejected") {
        std::ofstream out(dir.path / "junk.ckpt", std::ios::binary);
        out << "not a checkpoint";
        out.close();
        CHECK_THROWS_AS(iml::load_checkpoint((dir.path / "junk.ckpt").string()),
                        iml::DataError);
        CHECK_THROWS_AS(iml::load_checkpoint((dir.path / "missing.ckpt").string()),
                        iml::DataError);
    }
}

TEST_CASE("training is deterministic and resumable") {
    TempDir data("trainer_data");
    iml::gen_synthetic(data.str(), 4, 128, 5);

    TempDir out_a("trainer_a"), out_b("trainer_b");
    auto settings = tiny_settings(data.str(), out_a.str());

    std::ostringstream log_a;
    iml::Trainer a(settings, "snapshot");
    auto res_a = a.run(log_a);
    REQUIRE(res_a.trace.size() == 6);
    CHECK(res_a.best_f1 >= 0.0);
    CHECK(fs::exists(res_a.best_checkpoint));
    CHECK(fs::exists(res_a.last_checkpoint));
    for (const auto& rec : res_a.trace) {
        CHECK(std::isfinite(rec.loss));
        CHECK(rec.loss > 0.0);
    }
    CHECK(log_a.str().find("step=1 lr=") != std::string::npos);
    CHECK(log_a.str().find("loss_final=") != std::string::npos);
    CHECK(log_a.str().find("loss_edge=") != std::string::npos);
    CHECK(log_a.str().find("eval step=6") != std::string::npos);

    SUBCASE("identical rerun") {
        settings.out_dir = out_b.str();
        std::ostringstream log_b;
        iml::Trainer b(settings, "snapshot");
        auto res_b = b.run(log_b);
        REQUIRE(res_b.trace.size() == res_a.trace.size());
        for (size_t i = 0; i < res_a.trace.size(); ++i) {
            CHECK(res_b.trace[i].loss == res_a.trace[i].loss);
            CHECK(res_b.trace[i].lr == res_a.trace[i].lr);
        }
    }

    SUBCASE("resume continues the identical trace") {
        // same schedule horizon, interrupted after step 3
        auto first_half = tiny_settings(data.str(), out_b.str());
        std::ostringstream log_b;
        iml::Trainer b(first_half, "snapshot");
        auto res_b = b.run(log_b, 3);
        REQUIRE(res_b.trace.size() == 3);
        for (size_t i = 0; i < 3; ++i) CHECK(res_b.trace[i].loss == res_a.trace[i].loss);

        auto second_half = tiny_settings(data.str(), out_b.str());
        second_half.resume = res_b.last_checkpoint;
        std::ostringstream log_c;
        iml::Trainer c(second_half, "snapshot");
        auto res_c = c.run(log_c);
        REQUIRE(res_c.trace.size() == 3);  // steps 4..6
        for (size_t i = 0; i < 3; ++i) {
            CHECK(res_c.trace[i].step == res_a.trace[i + 3].step);
            CHECK(res_c.trace[i].loss == res_a.trace[i + 3].loss);
        }
    }

    SUBCASE("poisoned weights abort with a rescue checkpoint") {
        settings.out_dir = out_b.str();
        iml::Trainer b(settings, "snapshot");
        iml::ParamList<float> params;
        b.model().collect(params);
        params[0].p->value[0] = std::nanf("");
        std::ostringstream log_b;
        try {
            b.run(log_b);
            FAIL("expected NumericError");
        } catch (const iml::NumericError& e) {
            CHECK(std::string(e.what()).find("finite") != std::string::npos);
            CHECK(std::string(e.what()).find("abort.ckpt") != std::string::npos);
        }
        CHECK(fs::exists(fs::path(out_b.str()) / "abort.ckpt"));
    }
}

TEST_CASE("trainer rejects unusable datasets and configs") {
    TempDir data("trainer_bad");
    iml::gen_synthetic(data.str(), 2, 64, 5);  // below the 128 minimum input size
    auto settings = tiny_settings(data.str(), (data.path / "out").string());
    CHECK_THROWS_AS(iml::Trainer(settings, ""), iml::ConfigError);

    iml::TrainConfig bad;
    bad.lr_init = 0.0;
    CHECK_THROWS_AS(bad.validate(), iml::ConfigError);
    bad = iml::TrainConfig{};
    bad.precision = "f64";
    CHECK_THROWS_AS(bad.validate(), iml::ConfigError);
    bad = iml::TrainConfig{};
    bad.eval_split = "val";
    CHECK_THROWS_AS(bad.validate(), iml::ConfigError);
}
