#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/types.hpp"

namespace segxal {

struct EEMask {
    HeatMap map;  ///< kind=eem
    double alpha = 0.5;
    double beta = 0.5;
    std::string prox_source;
    std::string ent_source;
};

/// clamp(alpha * prox + beta * ent, 0, 1).
EEMask fuse(const HeatMap& prox, const HeatMap& ent, double alpha, double beta);

/// One horizontal run of a region: `length` pixels starting at (row, col).
struct Run {
    int row = 0;
    int col = 0;
    int length = 0;
    bool operator==(const Run&) const = default;
};

struct CandidatePrompt {
    std::string sample_id;
    std::vector<Run> region;  ///< row-major, non-overlapping
    int anchor_row = 0;
    int anchor_col = 0;
    double score = 0.0;  ///< mean EEM over the region
    int rank = 0;        ///< 1 = highest score

    std::size_t area() const;
    bool contains(int row, int col) const;
    bool operator==(const CandidatePrompt&) const = default;
};

struct CandidateOptions {
    double percentile = 80.0;
    int max_regions = 5;
    int min_region_px = 16;
};

/// Nearest-rank percentile (p in (0,100]) of the nonzero values; 0 when none are nonzero.
double nonzero_percentile(const std::vector<double>& values, double p);

std::vector<CandidatePrompt> extract_candidates(const EEMask& eem, const std::string& sample_id,
                                                const CandidateOptions& opt = {});

/// Run-length encoding of a row-major binary mask, and its inverse.
std::vector<Run> rle_encode(const std::vector<std::uint8_t>& mask, int height, int width);
std::vector<std::uint8_t> rle_decode(const std::vector<Run>& runs, int height, int width);

/// Per-pixel rank of the covering prompt, 0 where no prompt covers.
std::vector<std::uint8_t> prompt_rank_mask(const std::vector<CandidatePrompt>& prompts, int height, int width);

nlohmann::json to_json(const CandidatePrompt& p);
CandidatePrompt prompt_from_json(const nlohmann::json& j);

nlohmann::json eem_sidecar(const EEMask& eem, const CandidateOptions& opt, const std::vector<CandidatePrompt>& prompts);

/// Writes <dir>/<id>.eem.png and <dir>/<id>.eem.json.
void export_eem(const std::string& dir, const std::string& sample_id, const EEMask& eem,
                const CandidateOptions& opt, const std::vector<CandidatePrompt>& prompts);

}  // namespace segxal
