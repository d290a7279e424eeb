#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "segxal/error.hpp"

namespace segxal {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr int kMinImageSide = 16;

enum class ImageSource { synthetic, cityscapes, external };
enum class HeatKind { entropy, gradcam, proximity, prox_gradcam, eem };
enum class DepthSource { file_midas, file_dinov2, synthetic };
enum class PoolTag { labeled, unlabeled, candidate };

std::string_view to_string(ImageSource v);
std::string_view to_string(HeatKind v);
std::string_view to_string(DepthSource v);
std::string_view to_string(PoolTag v);
DepthSource depth_source_from_string(std::string_view s);

/// RGB image, interleaved H x W x 3, values in [0,1].
struct Image {
    std::string id;
    ImageSource source = ImageSource::synthetic;
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::string id_, int h, int w, ImageSource src = ImageSource::synthetic)
        : id(std::move(id_)), source(src), height(h), width(w),
          pixels(static_cast<std::size_t>(h) * w * 3, 0.0) {}

    double& at(int r, int c, int ch) { return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
    double at(int r, int c, int ch) const { return pixels[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
};

struct LabelMask {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<std::uint8_t> labels;

    LabelMask() = default;
    LabelMask(int h, int w, int c, std::uint8_t fill = 0)
        : height(h), width(w), num_classes(c), labels(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int r, int c) { return labels[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return labels.size(); }

    bool operator==(const LabelMask&) const = default;
};

/// Per-pixel class distribution, stored class-major (C x H x W).
struct ProbMap {
    int num_classes = 0;
    int height = 0;
    int width = 0;
    std::vector<double> probs;

    ProbMap() = default;
    ProbMap(int c, int h, int w)
        : num_classes(c), height(h), width(w), probs(static_cast<std::size_t>(c) * h * w, 0.0) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    double& at(int c, std::size_t px) { return probs[c * plane() + px]; }
    double at(int c, std::size_t px) const { return probs[c * plane() + px]; }

    /// Per-pixel argmax; ties resolve to the lowest class id.
    LabelMask argmax() const;
};

struct HeatMap {
    HeatKind kind = HeatKind::entropy;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    HeatMap() = default;
    HeatMap(HeatKind k, int h, int w, double fill = 0.0)
        : kind(k), height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return values.size(); }

    /// Rescales values to [0,1]. Returns false when the map is flat (left as zeros or ones).
    bool normalize_minmax();
};

/// Relative nearness in [0,1]; larger is closer to the camera.
struct DepthMap {
    int height = 0;
    int width = 0;
    DepthSource provider = DepthSource::synthetic;
    std::vector<double> nearness;

    DepthMap() = default;
    DepthMap(int h, int w, DepthSource p = DepthSource::synthetic)
        : height(h), width(w), provider(p), nearness(static_cast<std::size_t>(h) * w, 0.0) {}

    double& at(int r, int c) { return nearness[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return nearness[static_cast<std::size_t>(r) * width + c]; }
};

struct Sample {
    Image image;
    std::optional<LabelMask> gt;
    std::optional<DepthMap> depth;
    PoolTag pool_tag = PoolTag::unlabeled;

    const std::string& id() const { return image.id; }
};

/// Membership of sample ids in the labeled (D^L), unlabeled (D^U) and candidate (D^S) pools.
class SamplePool {
public:
    std::set<std::string> labeled;
    std::set<std::string> unlabeled;
    std::set<std::string> candidate;

    std::set<std::string>& members(PoolTag tag);
    const std::set<std::string>& members(PoolTag tag) const;

    std::size_t total() const { return labeled.size() + unlabeled.size() + candidate.size(); }
    std::optional<PoolTag> find(const std::string& id) const;

    /// Moves one id between pools; throws not_found if it is not in `from`.
    void move(const std::string& id, PoolTag from, PoolTag to);

    /// Empty iff the three sets are pairwise disjoint.
    std::vector<std::string> audit() const;

    bool operator==(const SamplePool&) const = default;
};

struct ALConfig {
    double initial_label_fraction = 0.10;
    double query_fraction_per_cycle = 0.05;
    /// Size of the random subset D^S relative to the per-cycle query count; ranked strategies pick from it.
    double subset_multiplier = 2.0;
    int num_cycles = 5;
    int budget_n = 0;  ///< 0 means unlimited (bounded by the pool size)
    double fusion_alpha = 0.5;
    double fusion_beta = 0.5;
    double dice_threshold_theta = 0.85;
    double depth_quantile_tau = 0.5;
    std::uint64_t seed = 1;

    /// Empty iff every field satisfies its invariant.
    std::vector<std::string> violations() const;
};

/// Empty iff all type invariants hold. `attached` is an optional prediction for the sample.
std::vector<std::string> validate_sample(const Sample& sample, const ProbMap* attached = nullptr);
std::vector<std::string> validate_probmap(const ProbMap& probs, std::size_t max_reports = 8);
std::vector<std::string> validate_heatmap(const HeatMap& map);

}  // namespace segxal
