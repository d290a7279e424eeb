#include "segxal/selection.hpp"

#include <set>

namespace segxal {

double dice(const LabelMask& a, const LabelMask& b) {
    if (a.height != b.height || a.width != b.width) throw Error(Errc::shape_mismatch, "dice: masks differ in shape");
    std::vector<std::size_t> na(256, 0), nb(256, 0), both(256, 0);
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        const auto x = a.labels[i], y = b.labels[i];
        if (x == kIgnoreLabel || y == kIgnoreLabel) continue;
        ++na[x];
        ++nb[y];
        if (x == y) ++both[x];
    }
    double sum = 0.0;
    int classes = 0;
    for (int c = 0; c < 256; ++c) {
        if (na[c] + nb[c] == 0) continue;
        sum += 2.0 * static_cast<double>(both[c]) / static_cast<double>(na[c] + nb[c]);
        ++classes;
    }
    return classes ? sum / classes : 1.0;
}

nlohmann::json to_json(const SelectionDecision& d) {
    nlohmann::json j = {{"sample_id", d.sample_id}, {"dice", d.dice},   {"theta", d.theta},
                        {"accepted", d.accepted},   {"cycle", d.cycle}};
    if (d.inverted) j["inverted"] = true;
    return j;
}

SelectionDecision selection_decision_from_json(const nlohmann::json& j) {
    SelectionDecision d;
    d.sample_id = j.at("sample_id").get<std::string>();
    d.dice = j.at("dice").get<double>();
    d.theta = j.at("theta").get<double>();
    d.accepted = j.at("accepted").get<bool>();
    d.cycle = j.at("cycle").get<int>();
    d.inverted = j.value("inverted", false);
    return d;
}

std::vector<SelectionDecision> select(const std::vector<SelectionInput>& inputs, double theta, SamplePool& pool,
                                      int cycle, bool inverted) {
    std::set<std::string> seen;
    for (const auto& in : inputs) {
        if (!pool.candidate.count(in.sample_id))
            throw Error(Errc::sample_not_candidate, "sample " + in.sample_id + " is not in the candidate pool");
        if (!seen.insert(in.sample_id).second)
            throw Error(Errc::precondition, "sample " + in.sample_id + " given twice");
        require(in.prediction && in.record, Errc::precondition, "selection input without prediction or record");
    }
    std::vector<SelectionDecision> out;
    for (const auto& in : inputs) {
        SelectionDecision d;
        d.sample_id = in.sample_id;
        d.dice = dice(*in.prediction, in.record->corrected);
        d.theta = theta;
        d.cycle = cycle;
        d.inverted = inverted;
        d.accepted = inverted ? d.dice < theta : d.dice >= theta;
        out.push_back(d);
    }
    for (const auto& d : out)
        if (d.accepted) pool.move(d.sample_id, PoolTag::candidate, PoolTag::labeled);
    const std::vector<std::string> rest(pool.candidate.begin(), pool.candidate.end());
    for (const auto& id : rest) pool.move(id, PoolTag::candidate, PoolTag::unlabeled);
    return out;
}

}  // namespace segxal
