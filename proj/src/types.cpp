#include "segxal/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace segxal {

const char* errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::precondition: return "precondition";
        case Errc::shape_mismatch: return "shape-mismatch";
        case Errc::corrupt_input: return "corrupt-input";
        case Errc::missing_pair: return "missing-pair";
        case Errc::spec_too_small: return "spec-too-small";
        case Errc::divergence: return "divergence";
        case Errc::unknown_layer: return "unknown-layer";
        case Errc::missing_gt: return "missing-gt";
        case Errc::duplicate_ticket: return "duplicate-ticket";
        case Errc::sample_not_candidate: return "sample-not-candidate";
        case Errc::empty_eval_set: return "empty-eval-set";
        case Errc::io: return "io";
        case Errc::schema_mismatch: return "schema-mismatch";
        case Errc::budget_exhausted: return "budget-exhausted";
        case Errc::not_found: return "not-found";
        case Errc::conflict: return "conflict";
        case Errc::lease_expired: return "lease-expired";
        case Errc::invalid_geometry: return "invalid-geometry";
    }
    return "unknown";
}

std::string_view to_string(ImageSource v) {
    switch (v) {
        case ImageSource::synthetic: return "synthetic";
        case ImageSource::cityscapes: return "cityscapes";
        case ImageSource::external: return "external";
    }
    return "?";
}

std::string_view to_string(HeatKind v) {
    switch (v) {
        case HeatKind::entropy: return "entropy";
        case HeatKind::gradcam: return "gradcam";
        case HeatKind::proximity: return "proximity";
        case HeatKind::prox_gradcam: return "prox_gradcam";
        case HeatKind::eem: return "eem";
    }
    return "?";
}

std::string_view to_string(DepthSource v) {
    switch (v) {
        case DepthSource::file_midas: return "midas_files";
        case DepthSource::file_dinov2: return "dinov2_files";
        case DepthSource::synthetic: return "synthetic";
    }
    return "?";
}

std::string_view to_string(PoolTag v) {
    switch (v) {
        case PoolTag::labeled: return "labeled";
        case PoolTag::unlabeled: return "unlabeled";
        case PoolTag::candidate: return "candidate";
    }
    return "?";
}

DepthSource depth_source_from_string(std::string_view s) {
    if (s == "synthetic") return DepthSource::synthetic;
    if (s == "midas_files" || s == "file_midas") return DepthSource::file_midas;
    if (s == "dinov2_files" || s == "file_dinov2") return DepthSource::file_dinov2;
    throw Error(Errc::precondition, "unknown depth variant '" + std::string(s) + "'");
}

LabelMask ProbMap::argmax() const {
    LabelMask out(height, width, num_classes);
    const std::size_t n = plane();
    for (std::size_t px = 0; px < n; ++px) {
        int best = 0;
        double best_p = probs[px];
        for (int c = 1; c < num_classes; ++c) {
            const double p = probs[c * n + px];
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        out.labels[px] = static_cast<std::uint8_t>(best);
    }
    return out;
}

bool HeatMap::normalize_minmax() {
    if (values.empty()) return false;
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (hi - lo <= 1e-12) {
        std::fill(values.begin(), values.end(), hi > 0.0 ? 1.0 : 0.0);
        return false;
    }
    const double inv = 1.0 / (hi - lo);
    for (double& v : values) v = std::clamp((v - lo) * inv, 0.0, 1.0);
    return true;
}

std::set<std::string>& SamplePool::members(PoolTag tag) {
    switch (tag) {
        case PoolTag::labeled: return labeled;
        case PoolTag::unlabeled: return unlabeled;
        case PoolTag::candidate: return candidate;
    }
    return unlabeled;
}

const std::set<std::string>& SamplePool::members(PoolTag tag) const {
    return const_cast<SamplePool*>(this)->members(tag);
}

std::optional<PoolTag> SamplePool::find(const std::string& id) const {
    for (PoolTag t : {PoolTag::labeled, PoolTag::unlabeled, PoolTag::candidate})
        if (members(t).count(id)) return t;
    return std::nullopt;
}

void SamplePool::move(const std::string& id, PoolTag from, PoolTag to) {
    auto& src = members(from);
    auto it = src.find(id);
    if (it == src.end())
        throw Error(Errc::not_found, "sample '" + id + "' is not in the " + std::string(to_string(from)) + " pool");
    src.erase(it);
    members(to).insert(id);
}

std::vector<std::string> SamplePool::audit() const {
    std::vector<std::string> out;
    auto check = [&](const std::set<std::string>& a, const std::set<std::string>& b, const char* name) {
        for (const auto& id : a)
            if (b.count(id)) out.push_back(std::string("pool-overlap(") + name + "): " + id);
    };
    check(labeled, unlabeled, "labeled/unlabeled");
    check(labeled, candidate, "labeled/candidate");
    check(unlabeled, candidate, "unlabeled/candidate");
    return out;
}

std::vector<std::string> ALConfig::violations() const {
    std::vector<std::string> out;
    auto frac = [&](double v, const char* name) {
        if (!(v > 0.0 && v <= 1.0)) out.push_back(std::string(name) + " must be in (0,1]");
    };
    frac(initial_label_fraction, "initial_label_fraction");
    frac(query_fraction_per_cycle, "query_fraction_per_cycle");
    frac(depth_quantile_tau, "depth_quantile_tau");
    if (!(dice_threshold_theta >= 0.0 && dice_threshold_theta <= 1.0))
        out.push_back("dice_threshold_theta must be in [0,1]");
    if (!(fusion_alpha >= 0.0 && fusion_beta >= 0.0 && fusion_alpha + fusion_beta > 0.0))
        out.push_back("fusion weights must be non-negative with alpha + beta > 0");
    if (num_cycles < 1) out.push_back("num_cycles must be >= 1");
    if (budget_n < 0) out.push_back("budget_n must be >= 0");
    if (!(subset_multiplier >= 1.0)) out.push_back("subset_multiplier must be >= 1");
    return out;
}

std::vector<std::string> validate_probmap(const ProbMap& pm, std::size_t max_reports) {
    std::vector<std::string> out;
    const std::size_t n = pm.plane();
    if (pm.num_classes < 1 || pm.probs.size() != n * pm.num_classes) {
        out.push_back("probmap-shape: buffer does not match C x H x W");
        return out;
    }
    for (std::size_t px = 0; px < n && out.size() < max_reports; ++px) {
        double sum = 0.0;
        bool range_ok = true;
        for (int c = 0; c < pm.num_classes; ++c) {
            const double p = pm.probs[c * n + px];
            if (!std::isfinite(p) || p < 0.0 || p > 1.0) range_ok = false;
            sum += p;
        }
        const int r = static_cast<int>(px / pm.width);
        const int col = static_cast<int>(px % pm.width);
        std::ostringstream os;
        if (!range_ok) {
            os << "probmap-range at pixel (" << r << "," << col << ")";
            out.push_back(os.str());
        } else if (std::abs(sum - 1.0) >= 1e-5) {
            os << "probmap-sum at pixel (" << r << "," << col << "): " << sum;
            out.push_back(os.str());
        }
    }
    return out;
}

std::vector<std::string> validate_heatmap(const HeatMap& map) {
    std::vector<std::string> out;
    if (map.values.size() != static_cast<std::size_t>(map.height) * map.width) {
        out.push_back("heatmap-shape");
        return out;
    }
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double v = map.values[i];
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            out.push_back("heatmap-range at index " + std::to_string(i));
            break;
        }
    }
    return out;
}

std::vector<std::string> validate_sample(const Sample& s, const ProbMap* attached) {
    std::vector<std::string> out;
    const Image& img = s.image;
    if (img.id.empty()) out.push_back("image-id-empty");
    if (img.height < kMinImageSide || img.width < kMinImageSide)
        out.push_back("image-too-small: " + std::to_string(img.height) + "x" + std::to_string(img.width));
    if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
        out.push_back("image-shape: buffer does not match H x W x 3");
    } else {
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            const double v = img.pixels[i];
            if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
                out.push_back("image-range at index " + std::to_string(i));
                break;
            }
        }
    }
    if (s.gt) {
        const LabelMask& gt = *s.gt;
        if (gt.height != img.height || gt.width != img.width || gt.labels.size() != gt.size() ||
            gt.labels.size() != static_cast<std::size_t>(img.height) * img.width)
            out.push_back("gt-shape-mismatch");
        for (std::size_t i = 0; i < gt.labels.size(); ++i) {
            const auto v = gt.labels[i];
            if (v != kIgnoreLabel && v >= gt.num_classes) {
                out.push_back("gt-label-out-of-range at index " + std::to_string(i));
                break;
            }
        }
    }
    if (s.pool_tag == PoolTag::labeled && !s.gt) out.push_back("labeled-without-gt");
    if (s.depth) {
        const DepthMap& d = *s.depth;
        if (d.height != img.height || d.width != img.width ||
            d.nearness.size() != static_cast<std::size_t>(img.height) * img.width)
            out.push_back("depth-shape-mismatch");
        for (std::size_t i = 0; i < d.nearness.size(); ++i) {
            const double v = d.nearness[i];
            if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
                out.push_back("depth-range at index " + std::to_string(i));
                break;
            }
        }
    }
    if (attached) {
        if (attached->height != img.height || attached->width != img.width)
            out.push_back("probmap-shape-mismatch");
        auto pv = validate_probmap(*attached);
        out.insert(out.end(), pv.begin(), pv.end());
    }
    return out;
}

}  // namespace segxal
