#include "segxal/metrics.hpp"

#include <algorithm>

#include "segxal/serialize.hpp"

namespace segxal {

void ConfusionMatrix::add(const LabelMask& gt, const LabelMask& pred) {
    if (gt.height != pred.height || gt.width != pred.width)
        throw Error(Errc::shape_mismatch, "confusion: masks differ in shape");
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        const int g = gt.labels[i], p = pred.labels[i];
        if (g == kIgnoreLabel) continue;
        require(g < num_classes && p < num_classes, Errc::precondition, "label outside [0, C)");
        ++counts[static_cast<std::size_t>(g) * num_classes + p];
    }
}

DiceSummary summarize_dice(const std::vector<double>& dices, int accepted) {
    DiceSummary s;
    s.count = static_cast<int>(dices.size());
    s.accepted = accepted;
    if (dices.empty()) return s;
    double sum = 0.0;
    for (double d : dices) sum += d;
    s.mean = sum / static_cast<double>(dices.size());
    s.min = *std::min_element(dices.begin(), dices.end());
    s.max = *std::max_element(dices.begin(), dices.end());
    return s;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
    MetricsReport m;
    const int C = cm.num_classes;
    m.per_class_iou.assign(static_cast<std::size_t>(C), std::nullopt);
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < C; ++c) {
        std::uint64_t gt_c = 0, pred_c = 0;
        for (int k = 0; k < C; ++k) {
            gt_c += cm.at(c, k);
            pred_c += cm.at(k, c);
        }
        if (gt_c == 0) continue;
        const std::uint64_t tp = cm.at(c, c);
        const double iou = static_cast<double>(tp) / static_cast<double>(gt_c + pred_c - tp);
        m.per_class_iou[c] = iou;
        sum += iou;
        ++present;
    }
    m.miou = present ? sum / present : 0.0;
    return m;
}

MetricsReport compute_metrics(const SegModel& model, const std::vector<const Sample*>& eval) {
    if (eval.empty()) throw Error(Errc::empty_eval_set, "no evaluation samples");
    ConfusionMatrix cm(model.config().num_classes);
    for (const Sample* s : eval) {
        if (!s->gt) throw Error(Errc::missing_gt, "evaluation sample " + s->id() + " has no gt");
        cm.add(*s->gt, model.predict_probs(s->image).argmax());
    }
    return metrics_from_confusion(cm);
}

nlohmann::json to_json(const MetricsReport& m, bool with_wall_time) {
    nlohmann::json iou = nlohmann::json::array();
    for (const auto& v : m.per_class_iou) iou.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    nlohmann::json j = {{"schema", kSchemaVersion},
                        {"cycle", m.cycle},
                        {"per_class_iou", iou},
                        {"miou", m.miou},
                        {"dice_distribution",
                         {{"count", m.dice.count},
                          {"accepted", m.dice.accepted},
                          {"mean", m.dice.mean},
                          {"min", m.dice.min},
                          {"max", m.dice.max}}},
                        {"samples_labeled", m.samples_labeled}};
    if (with_wall_time) j["wall_time"] = m.wall_time;
    return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
    if (j.value("schema", std::string{}) != kSchemaVersion)
        throw Error(Errc::schema_mismatch, "metrics schema is not " + std::string(kSchemaVersion));
    MetricsReport m;
    m.cycle = j.at("cycle").get<int>();
    for (const auto& v : j.at("per_class_iou"))
        m.per_class_iou.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    m.miou = j.at("miou").get<double>();
    const auto& d = j.at("dice_distribution");
    m.dice = {d.at("count").get<int>(), d.at("accepted").get<int>(), d.at("mean").get<double>(),
              d.at("min").get<double>(), d.at("max").get<double>()};
    m.samples_labeled = j.at("samples_labeled").get<int>();
    m.wall_time = j.value("wall_time", 0.0);
    return m;
}

}  // namespace segxal
