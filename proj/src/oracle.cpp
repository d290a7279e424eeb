#include "segxal/oracle.hpp"

namespace segxal {

std::string_view to_string(OracleSource s) { return s == OracleSource::human ? "human" : "machine_pseudolabel"; }

std::string_view to_string(MachineOracleMode m) {
    return m == MachineOracleMode::ground_truth ? "ground_truth" : "model_argmax";
}

OracleSource oracle_source_from_string(std::string_view s) {
    if (s == "human") return OracleSource::human;
    if (s == "machine_pseudolabel") return OracleSource::machine_pseudolabel;
    throw Error(Errc::precondition, "unknown oracle source '" + std::string(s) + "'");
}

MachineOracleMode machine_oracle_mode_from_string(std::string_view s) {
    if (s == "ground_truth") return MachineOracleMode::ground_truth;
    if (s == "model_argmax") return MachineOracleMode::model_argmax;
    throw Error(Errc::precondition, "unknown machine oracle mode '" + std::string(s) + "'");
}

AnnotationRecord machine_annotate(const Sample& sample, const std::vector<CandidatePrompt>& prompts,
                                  const LabelMask& prediction, MachineOracleMode mode) {
    require(!prompts.empty(), Errc::precondition, "machine_annotate needs at least one prompt");
    const int h = sample.image.height, w = sample.image.width;
    if (prediction.height != h || prediction.width != w)
        throw Error(Errc::shape_mismatch, "prediction does not match sample " + sample.id());
    AnnotationRecord rec;
    rec.sample_id = sample.id();
    rec.corrected = prediction;
    rec.source = OracleSource::machine_pseudolabel;
    for (const auto& p : prompts) rec.regions_covered.push_back(p.rank);
    if (mode == MachineOracleMode::model_argmax) return rec;

    if (!sample.gt) throw Error(Errc::missing_gt, "ground-truth oracle needs gt for " + sample.id());
    const LabelMask& gt = *sample.gt;
    if (gt.height != h || gt.width != w) throw Error(Errc::shape_mismatch, "gt does not match sample " + sample.id());
    for (const auto& p : prompts)
        for (const auto& run : p.region) {
            if (run.row < 0 || run.row >= h || run.col < 0 || run.col + run.length > w)
                throw Error(Errc::invalid_geometry, "prompt run outside sample " + sample.id());
            const std::size_t base = static_cast<std::size_t>(run.row) * w + run.col;
            for (int k = 0; k < run.length; ++k) rec.corrected.labels[base + k] = gt.labels[base + k];
        }
    return rec;
}

AnnotationRecord machine_annotate(const Sample& sample, const std::vector<CandidatePrompt>& prompts,
                                  const SegModel& model, MachineOracleMode mode) {
    return machine_annotate(sample, prompts, model.predict_probs(sample.image).argmax(), mode);
}

nlohmann::json label_mask_to_json(const LabelMask& mask) {
    nlohmann::json runs = nlohmann::json::array();
    std::size_t i = 0;
    while (i < mask.labels.size()) {
        std::size_t j = i;
        while (j < mask.labels.size() && mask.labels[j] == mask.labels[i]) ++j;
        runs.push_back({mask.labels[i], j - i});
        i = j;
    }
    return {{"height", mask.height}, {"width", mask.width}, {"num_classes", mask.num_classes}, {"runs", runs}};
}

LabelMask label_mask_from_json(const nlohmann::json& j) {
    LabelMask m(j.at("height").get<int>(), j.at("width").get<int>(), j.at("num_classes").get<int>());
    std::size_t pos = 0;
    for (const auto& r : j.at("runs")) {
        const auto v = r.at(0).get<int>();
        const auto n = r.at(1).get<std::size_t>();
        if (v < 0 || v > 255 || pos + n > m.labels.size())
            throw Error(Errc::corrupt_input, "label runs do not fit the mask");
        std::fill_n(m.labels.begin() + static_cast<std::ptrdiff_t>(pos), n, static_cast<std::uint8_t>(v));
        pos += n;
    }
    if (pos != m.labels.size()) throw Error(Errc::corrupt_input, "label runs do not cover the mask");
    return m;
}

nlohmann::json to_json(const AnnotationRecord& r) {
    nlohmann::json j = {{"sample_id", r.sample_id},
                        {"corrected", label_mask_to_json(r.corrected)},
                        {"regions_covered", r.regions_covered},
                        {"source", to_string(r.source)},
                        {"elapsed", r.elapsed}};
    j["annotator_id"] = r.annotator_id ? nlohmann::json(*r.annotator_id) : nlohmann::json(nullptr);
    return j;
}

AnnotationRecord annotation_record_from_json(const nlohmann::json& j) {
    AnnotationRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.corrected = label_mask_from_json(j.at("corrected"));
    r.regions_covered = j.at("regions_covered").get<std::vector<int>>();
    r.source = oracle_source_from_string(j.at("source").get<std::string>());
    r.elapsed = j.value("elapsed", 0.0);
    if (j.contains("annotator_id") && !j["annotator_id"].is_null()) r.annotator_id = j["annotator_id"].get<std::string>();
    return r;
}

}  // namespace segxal
