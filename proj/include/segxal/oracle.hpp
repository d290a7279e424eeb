#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/eem.hpp"
#include "segxal/model.hpp"
#include "segxal/types.hpp"

namespace segxal {

enum class OracleSource { machine_pseudolabel, human };
enum class MachineOracleMode { ground_truth, model_argmax };

std::string_view to_string(OracleSource s);
std::string_view to_string(MachineOracleMode m);
OracleSource oracle_source_from_string(std::string_view s);
MachineOracleMode machine_oracle_mode_from_string(std::string_view s);

struct AnnotationRecord {
    std::string sample_id;
    LabelMask corrected;
    std::vector<int> regions_covered;  ///< prompt ranks
    OracleSource source = OracleSource::machine_pseudolabel;
    std::optional<std::string> annotator_id;
    double elapsed = 0.0;  ///< seconds

    bool operator==(const AnnotationRecord&) const = default;
};

/// Ground-truth mode copies gt inside every prompt region and the prediction elsewhere;
/// model_argmax mode returns the prediction unchanged.
AnnotationRecord machine_annotate(const Sample& sample, const std::vector<CandidatePrompt>& prompts,
                                  const LabelMask& prediction, MachineOracleMode mode = MachineOracleMode::ground_truth);
AnnotationRecord machine_annotate(const Sample& sample, const std::vector<CandidatePrompt>& prompts,
                                  const SegModel& model, MachineOracleMode mode = MachineOracleMode::ground_truth);

/// Label masks travel as value/count runs over the row-major label array.
nlohmann::json label_mask_to_json(const LabelMask& mask);
LabelMask label_mask_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AnnotationRecord& r);
AnnotationRecord annotation_record_from_json(const nlohmann::json& j);

}  // namespace segxal
