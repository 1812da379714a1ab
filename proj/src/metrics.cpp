#include "rwkviml/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rwkviml/error.hpp"
#include "rwkviml/rng.hpp"

namespace iml {

namespace {

void check_pair(const Tensor<float>& pred, const Tensor<float>& gt) {
    if (pred.shape() != gt.shape())
        throw ShapeError("prediction shape " + shape_str(pred.shape()) +
                         " does not match mask shape " + shape_str(gt.shape()));
    for (std::int64_t i = 0; i < gt.numel(); ++i)
        if (gt[i] != 0.0f && gt[i] != 1.0f)
            throw DataError("mask is not binary at flat index " + std::to_string(i));
}

double ratio_or_empty_rule(std::int64_t num, std::int64_t den, const ConfusionCounts& c) {
    if (den != 0) return static_cast<double>(num) / static_cast<double>(den);
    return (c.tp + c.fp == 0 && c.tp + c.fn == 0) ? 1.0 : 0.0;
}

}  // namespace

ConfusionCounts confusion(const Tensor<float>& pred_prob, const Tensor<float>& gt,
                          float threshold) {
    check_pair(pred_prob, gt);
    ConfusionCounts c;
    for (std::int64_t i = 0; i < gt.numel(); ++i) {
        const bool p = pred_prob[i] >= threshold;
        const bool t = gt[i] == 1.0f;
        if (p && t)
            ++c.tp;
        else if (p && !t)
            ++c.fp;
        else if (!p && t)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

double f1_score(const ConfusionCounts& c) {
    return ratio_or_empty_rule(2 * c.tp, 2 * c.tp + c.fp + c.fn, c);
}

double iou_score(const ConfusionCounts& c) {
    return ratio_or_empty_rule(c.tp, c.tp + c.fp + c.fn, c);
}

double accuracy_score(const ConfusionCounts& c) {
    return ratio_or_empty_rule(c.tp + c.tn, c.total(), c);
}

std::optional<double> auc_score(const std::vector<float>& scores,
                                const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError("auc needs matching score and label counts, got " +
                         std::to_string(scores.size()) + " and " +
                         std::to_string(labels.size()));
    const std::int64_t n = static_cast<std::int64_t>(scores.size());
    std::int64_t pos = 0;
    for (auto l : labels) pos += l ? 1 : 0;
    const std::int64_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;

    std::vector<std::int64_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)];
    });

    // rank sum of positives with average ranks over tie runs (1-based)
    double rank_pos = 0.0;
    std::int64_t i = 0;
    while (i < n) {
        std::int64_t j = i;
        while (j < n && scores[static_cast<size_t>(idx[static_cast<size_t>(j)])] ==
                            scores[static_cast<size_t>(idx[static_cast<size_t>(i)])])
            ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1..j
        for (std::int64_t k = i; k < j; ++k)
            if (labels[static_cast<size_t>(idx[static_cast<size_t>(k)])]) rank_pos += avg_rank;
        i = j;
    }
    const double u = rank_pos - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::optional<double> auc_score(const Tensor<float>& scores, const Tensor<float>& gt,
                                std::int64_t max_pixels, std::uint64_t seed) {
    check_pair(scores, gt);
    const std::int64_t n = scores.numel();
    std::vector<std::int64_t> take;
    if (max_pixels > 0 && n > max_pixels) {
        std::vector<std::int64_t> all(static_cast<size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        Rng rng(seed);
        for (std::int64_t i = 0; i < max_pixels; ++i) {
            const auto j = i + rng.uniform_int(0, n - i - 1);
            std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
        }
        take.assign(all.begin(), all.begin() + max_pixels);
    } else {
        take.resize(static_cast<size_t>(n));
        std::iota(take.begin(), take.end(), 0);
    }
    std::vector<float> s(take.size());
    std::vector<std::uint8_t> l(take.size());
    for (size_t i = 0; i < take.size(); ++i) {
        s[i] = scores[take[i]];
        l[i] = gt[take[i]] == 1.0f ? 1 : 0;
    }
    return auc_score(s, l);
}

ImageMetrics evaluate_image(const Tensor<float>& pred_prob, const Tensor<float>& gt,
                            float threshold) {
    ImageMetrics m;
    m.counts = confusion(pred_prob, gt, threshold);
    m.f1 = f1_score(m.counts);
    m.iou = iou_score(m.counts);
    m.acc = accuracy_score(m.counts);
    m.auc = auc_score(pred_prob, gt);
    return m;
}

void MetricsAccumulator::add(const Tensor<float>& pred_prob, const Tensor<float>& gt,
                             float threshold) {
    auto m = evaluate_image(pred_prob, gt, threshold);
    pooled_ += m.counts;
    if (keep_pixels_ > 0) {
        const std::int64_t n = pred_prob.numel();
        const std::int64_t step = std::max<std::int64_t>(1, n / keep_pixels_);
        for (std::int64_t i = 0; i < n; i += step) {
            pooled_scores_.push_back(pred_prob[i]);
            pooled_labels_.push_back(gt[i] == 1.0f ? 1 : 0);
        }
    }
    images_.push_back(std::move(m));
}

DatasetMetrics MetricsAccumulator::finish() const {
    DatasetMetrics d;
    d.n_images = static_cast<int>(images_.size());
    if (images_.empty()) return d;
    double auc_sum = 0.0;
    for (const auto& m : images_) {
        d.f1 += m.f1;
        d.iou += m.iou;
        d.acc += m.acc;
        if (m.auc) {
            auc_sum += *m.auc;
            ++d.n_auc_images;
        }
    }
    const double inv = 1.0 / static_cast<double>(d.n_images);
    d.f1 *= inv;
    d.iou *= inv;
    d.acc *= inv;
    if (d.n_auc_images > 0) d.auc = auc_sum / d.n_auc_images;
    d.pooled_f1 = f1_score(pooled_);
    d.pooled_iou = iou_score(pooled_);
    d.pooled_acc = accuracy_score(pooled_);
    if (!pooled_scores_.empty()) d.pooled_auc = auc_score(pooled_scores_, pooled_labels_);
    return d;
}

std::string format_metrics_report(const DatasetMetrics& m) {
    std::ostringstream os;
    os.precision(9);
    os << std::fixed;
    auto opt = [](const std::optional<double>& v) {
        if (!v) return std::string("absent");
        std::ostringstream o;
        o.precision(9);
        o << std::fixed << *v;
        return o.str();
    };
    os << "f1=" << m.f1 << "\n";
    os << "auc=" << opt(m.auc) << "\n";
    os << "iou=" << m.iou << "\n";
    os << "acc=" << m.acc << "\n";
    os << "n_images=" << m.n_images << "\n";
    os << "n_auc_images=" << m.n_auc_images << "\n";
    os << "pooled_f1=" << m.pooled_f1 << "\n";
    os << "pooled_auc=" << opt(m.pooled_auc) << "\n";
    os << "pooled_iou=" << m.pooled_iou << "\n";
    os << "pooled_acc=" << m.pooled_acc << "\n";
    return os.str();
}

void write_metrics_report(const std::string& path, const DatasetMetrics& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write metrics report to " + path);
    out << format_metrics_report(m);
}

}  // namespace iml
