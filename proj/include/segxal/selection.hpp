#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/oracle.hpp"
#include "segxal/types.hpp"

namespace segxal {

/// Macro DICE over the classes present in either mask. Pixels ignored in either mask are skipped.
/// Two masks with no countable pixel agree vacuously (1.0).
double dice(const LabelMask& a, const LabelMask& b);

struct SelectionDecision {
    std::string sample_id;
    double dice = 0.0;
    double theta = 0.0;
    bool accepted = false;
    int cycle = 0;
    bool inverted = false;  ///< accepted == (dice < theta) instead of (dice >= theta)

    bool operator==(const SelectionDecision&) const = default;
};

nlohmann::json to_json(const SelectionDecision& d);
SelectionDecision selection_decision_from_json(const nlohmann::json& j);

struct SelectionInput {
    std::string sample_id;
    const LabelMask* prediction = nullptr;  ///< model argmax
    const AnnotationRecord* record = nullptr;
};

/// Accepted samples move to labeled, everything else left in candidate returns to unlabeled.
/// Throws sample_not_candidate before touching the pool if any input is not a candidate.
std::vector<SelectionDecision> select(const std::vector<SelectionInput>& inputs, double theta, SamplePool& pool,
                                      int cycle, bool inverted = false);

}  // namespace segxal
