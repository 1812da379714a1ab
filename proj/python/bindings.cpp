#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rwkviml/checkpoint.hpp"
#include "rwkviml/config.hpp"
#include "rwkviml/flops.hpp"
#include "rwkviml/loss.hpp"
#include "rwkviml/metrics.hpp"
#include "rwkviml/model.hpp"
#include "rwkviml/trainer.hpp"
#include "rwkviml/wkv.hpp"

namespace py = pybind11;
using namespace iml;

namespace {

template <typename T>
Tensor<T> tensor_from(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> shape;
    for (py::ssize_t d = 0; d < a.ndim(); ++d)
        shape.push_back(static_cast<int>(a.shape(d)));
    Tensor<T> t(shape);
    std::copy(a.data(), a.data() + a.size(), t.data());
    return t;
}

template <typename T>
py::array_t<T> array_from(const Tensor<T>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<T> a(shape);
    std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
    return a;
}

using ArrayD = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ArrayF = py::array_t<float, py::array::c_style | py::array::forcecast>;

ModelConfig config_from_text(const std::string& text) {
    ConfigView view(parse_config_text(text));
    auto settings = RunSettings::from_view(view);
    view.finish();
    return settings.model;
}

// zero-pads bottom/right up to the nearest legal model input size, runs the
// model, crops the probability map back
py::array_t<float> predict_prob(const std::string& checkpoint_path, const ArrayF& image) {
    if (image.ndim() != 3 || image.shape(2) != 3)
        throw ShapeError("predict: image must be (H, W, 3)");
    const auto data = load_checkpoint(checkpoint_path);
    KvMap map = parse_config_text(data.config_text);
    map.erase("data_root");
    map.erase("out_dir");
    map.erase("resume");
    ConfigView view(std::move(map));
    const auto settings = RunSettings::from_view(view);
    view.finish();

    Model<float> model;
    model.init(settings.model, settings.train.seed);
    load_model_weights(model, data, checkpoint_path);

    const int h = static_cast<int>(image.shape(0)), w = static_cast<int>(image.shape(1));
    const int ph = std::max(128, (h + 63) / 64 * 64);
    const int pw = std::max(128, (w + 63) / 64 * 64);
    Tensor<float> img({ph, pw, 3});
    auto view_in = image.unchecked<3>();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = view_in(y, x, c);

    const auto prob = prob_map(model.forward(img).logit_final);
    Tensor<float> out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = prob.at(y, x, 0);
    return array_from(out);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Linear-attention image manipulation localization: token-mixing kernels, "
              "loss and metric primitives, cost model, and checkpoint inference.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "wkv_naive",
        [](const ArrayD& k, const ArrayD& v, const ArrayD& w, const ArrayD& u) {
            return array_from(wkv_naive(tensor_from(k), tensor_from(v), tensor_from(w),
                                        tensor_from(u)));
        },
        py::arg("k"), py::arg("v"), py::arg("w"), py::arg("u"),
        "Quadratic-time bidirectional weighted key-value mix; reference semantics.");

    m.def(
        "wkv_scan",
        [](const ArrayD& k, const ArrayD& v, const ArrayD& w, const ArrayD& u) {
            return array_from(wkv_scan(tensor_from(k), tensor_from(v), tensor_from(w),
                                       tensor_from(u)));
        },
        py::arg("k"), py::arg("v"), py::arg("w"), py::arg("u"),
        "Linear-time scan form of wkv_naive; k and v are (T, C), w and u are (C,).");

    m.def(
        "edge_mask",
        [](const ArrayD& mask, int radius) {
            return array_from(make_edge_mask(tensor_from(mask), radius));
        },
        py::arg("mask"), py::arg("radius"),
        "Boundary band of a binary (H, W, 1) mask: dilation XOR erosion with a square "
        "structuring element of the given radius.");

    m.def(
        "bce",
        [](const ArrayD& logits, const ArrayD& targets,
           const std::optional<ArrayD>& pixel_mask) {
            const auto z = tensor_from(logits);
            const auto y = tensor_from(targets);
            if (!pixel_mask) return bce_from_logits(z, y);
            const auto pm = tensor_from(*pixel_mask);
            return bce_from_logits(z, y, &pm);
        },
        py::arg("logits"), py::arg("targets"), py::arg("pixel_mask") = py::none(),
        "Mean binary cross entropy from logits; with pixel_mask, averages only over "
        "nonzero mask entries (0 if the mask is empty).");

    m.def(
        "auc",
        [](const std::vector<float>& scores, const std::vector<std::uint8_t>& labels) {
            return auc_score(scores, labels);  // None when only one class is present
        },
        py::arg("scores"), py::arg("labels"),
        "Rank-based AUC with average tie handling; None if labels are single-class.");

    m.def(
        "evaluate",
        [](const ArrayF& prob, const ArrayF& gt, float threshold) {
            const auto im = evaluate_image(tensor_from(prob), tensor_from(gt), threshold);
            py::dict d;
            d["f1"] = im.f1;
            d["iou"] = im.iou;
            d["acc"] = im.acc;
            d["auc"] = im.auc ? py::cast(*im.auc) : py::none();
            d["tp"] = im.counts.tp;
            d["fp"] = im.counts.fp;
            d["fn"] = im.counts.fn;
            d["tn"] = im.counts.tn;
            return d;
        },
        py::arg("prob"), py::arg("gt"), py::arg("threshold") = 0.5f,
        "Per-image overlap metrics of a probability map against a binary mask; "
        "probabilities >= threshold count as positive.");

    m.def(
        "count_flops",
        [](int input_size, const std::string& config_text) {
            const auto r = count_flops(config_from_text(config_text), input_size);
            py::dict d;
            d["input_size"] = r.input_size;
            d["total_flops"] = r.total_flops;
            d["total_params"] = r.total_params;
            py::list items;
            for (const auto& it : r.items)
                items.append(py::make_tuple(it.name, it.flops, it.params));
            d["items"] = items;
            return d;
        },
        py::arg("input_size"), py::arg("config_text") = std::string(),
        "Analytic multiply-accumulate cost (1 MAC = 2 FLOPs) and parameter count; "
        "config_text holds key=value lines, empty for the full-scale defaults.");

    m.def("predict", &predict_prob, py::arg("checkpoint"), py::arg("image"),
          "Run a trained checkpoint on an (H, W, 3) float image in [0, 1]; returns the "
          "(H, W) manipulation probability map. Sizes off the 64-pixel grid are padded "
          "and cropped transparently.");
}
