#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rwkviml/tensor.hpp"

namespace iml {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

// pred >= threshold counts as positive (ties are positive)
ConfusionCounts confusion(const Tensor<float>& pred_prob, const Tensor<float>& gt,
                          float threshold = 0.5f);

// each returns 1.0 when the 0/0 case arises with no positives on either side
double f1_score(const ConfusionCounts& c);
double iou_score(const ConfusionCounts& c);
double accuracy_score(const ConfusionCounts& c);

// Mann-Whitney statistic P(s+ > s-) + 0.5 P(s+ == s-) via rank sums with
// average ranks on ties; empty optional when labels are all one class
std::optional<double> auc_score(const std::vector<float>& scores,
                                const std::vector<std::uint8_t>& labels);

// tensor form; when max_pixels > 0 and the image is larger, a fixed-seed
// subsample of that many pixels is scored instead
std::optional<double> auc_score(const Tensor<float>& scores, const Tensor<float>& gt,
                                std::int64_t max_pixels = 0, std::uint64_t seed = 7);

struct ImageMetrics {
    ConfusionCounts counts;
    double f1 = 0;
    double iou = 0;
    double acc = 0;
    std::optional<double> auc;
};

ImageMetrics evaluate_image(const Tensor<float>& pred_prob, const Tensor<float>& gt,
                            float threshold = 0.5f);

struct DatasetMetrics {
    // headline: per-image metrics averaged over the dataset; auc averages
    // only the images where it is defined
    double f1 = 0;
    double iou = 0;
    double acc = 0;
    std::optional<double> auc;
    // transparency view: metrics of the summed confusion counts, plus auc
    // over the pooled pixel population
    double pooled_f1 = 0;
    double pooled_iou = 0;
    double pooled_acc = 0;
    std::optional<double> pooled_auc;
    int n_images = 0;
    int n_auc_images = 0;
};

class MetricsAccumulator {
public:
    // keep_pixels bounds the pooled-auc sample per image (0 disables pooling)
    explicit MetricsAccumulator(std::int64_t keep_pixels_per_image = 1 << 20)
        : keep_pixels_(keep_pixels_per_image) {}

    void add(const Tensor<float>& pred_prob, const Tensor<float>& gt,
             float threshold = 0.5f);
    DatasetMetrics finish() const;

private:
    std::int64_t keep_pixels_;
    std::vector<ImageMetrics> images_;
    ConfusionCounts pooled_;
    std::vector<float> pooled_scores_;
    std::vector<std::uint8_t> pooled_labels_;
};

// line-oriented key=value summary; documented keys f1, auc, iou, acc,
// n_images always present (auc may carry the value "absent")
std::string format_metrics_report(const DatasetMetrics& m);
void write_metrics_report(const std::string& path, const DatasetMetrics& m);

}  // namespace iml
