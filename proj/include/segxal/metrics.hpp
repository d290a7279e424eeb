#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/model.hpp"
#include "segxal/types.hpp"

namespace segxal {

/// counts[gt * C + pred]; ignore-labelled gt pixels are not counted.
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(int c = 0) : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}
    void add(const LabelMask& gt, const LabelMask& pred);
    std::uint64_t at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }
};

struct DiceSummary {
    int count = 0;
    int accepted = 0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;

    bool operator==(const DiceSummary&) const = default;
};

DiceSummary summarize_dice(const std::vector<double>& dices, int accepted);

struct MetricsReport {
    int cycle = 0;
    /// IoU per class; empty for classes absent from the evaluation gt.
    std::vector<std::optional<double>> per_class_iou;
    double miou = 0.0;
    DiceSummary dice;
    int samples_labeled = 0;
    double wall_time = 0.0;  ///< seconds, kept out of the deterministic JSON

    bool operator==(const MetricsReport&) const = default;
};

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm);
MetricsReport compute_metrics(const SegModel& model, const std::vector<const Sample*>& eval);

nlohmann::json to_json(const MetricsReport& m, bool with_wall_time = false);
MetricsReport metrics_from_json(const nlohmann::json& j);

}  // namespace segxal
