#include "segxal/proximity.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "segxal/png_io.hpp"

namespace segxal {

namespace fs = std::filesystem;

DepthProvider DepthProvider::synthetic_gt() { return DepthProvider{}; }

DepthProvider DepthProvider::from_directory(DepthSource kind, std::string directory) {
    require(kind != DepthSource::synthetic, Errc::precondition, "file provider needs a file depth kind");
    DepthProvider p;
    p.kind_ = kind;
    p.dir_ = std::move(directory);
    return p;
}

std::string depth_file_path(const std::string& directory, const std::string& sample_id) {
    return (fs::path(directory) / (sample_id + ".depth.png")).string();
}

bool DepthProvider::covers(const Sample& sample) const {
    if (kind_ == DepthSource::synthetic) return sample.depth.has_value();
    return fs::exists(depth_file_path(dir_, sample.id()));
}

std::vector<std::string> DepthProvider::missing(const std::vector<Sample>& samples) const {
    std::vector<std::string> out;
    for (const auto& s : samples)
        if (!covers(s)) out.push_back(s.id());
    return out;
}

DepthMap DepthProvider::lookup(const Sample& sample) const {
    DepthMap d;
    if (kind_ == DepthSource::synthetic) {
        if (!sample.depth) throw Error(Errc::not_found, "no synthetic depth for " + sample.id());
        d = *sample.depth;
    } else {
        const std::string path = depth_file_path(dir_, sample.id());
        if (!fs::exists(path)) throw Error(Errc::not_found, "missing depth file " + path);
        d = load_depth_png(path, kind_);
    }
    if (d.height != sample.image.height || d.width != sample.image.width)
        throw Error(Errc::shape_mismatch, "depth for " + sample.id() + " does not match its image");
    return d;
}

double quantile(std::vector<double> values, double q) {
    require(!values.empty(), Errc::precondition, "quantile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ProximityMask proximity_mask(const DepthMap& depth, double tau_quantile, bool hard) {
    require(!depth.nearness.empty(), Errc::precondition, "empty depth map");
    ProximityMask m;
    m.soft = HeatMap(HeatKind::proximity, depth.height, depth.width);
    const auto [lo, hi] = std::minmax_element(depth.nearness.begin(), depth.nearness.end());
    if (*hi - *lo < 1e-12) {
        m.degenerate = true;
        m.tau_used = *lo;
        std::fill(m.soft.values.begin(), m.soft.values.end(), 1.0);
        return m;
    }
    // tau = 0 keeps everything: t = 0 gives the identity ramp.
    const double t = tau_quantile <= 0.0 ? 0.0 : quantile(depth.nearness, 1.0 - tau_quantile);
    m.tau_used = t;
    for (std::size_t i = 0; i < depth.nearness.size(); ++i) {
        const double n = std::clamp(depth.nearness[i], 0.0, 1.0);
        double v;
        if (hard)
            v = n >= t ? 1.0 : 0.0;
        else if (t >= 1.0)
            v = n;
        else
            v = std::clamp((n - t) / (1.0 - t), 0.0, 1.0);
        m.soft.values[i] = v;
    }
    return m;
}

Image depth_informed_image(const Image& image, const ProximityMask& mask) {
    if (image.height != mask.soft.height || image.width != mask.soft.width)
        throw Error(Errc::shape_mismatch, "proximity mask does not match image");
    Image out = image;
    const std::size_t n = mask.soft.size();
    for (std::size_t px = 0; px < n; ++px)
        for (int ch = 0; ch < 3; ++ch) out.pixels[px * 3 + ch] *= mask.soft.values[px];
    return out;
}

std::string_view to_string(ZMode z) {
    return z == ZMode::positive_grad_sum ? "positive_grad_sum" : "spatial_count";
}

ZMode z_mode_from_string(std::string_view s) {
    if (s == "positive_grad_sum") return ZMode::positive_grad_sum;
    if (s == "spatial_count") return ZMode::spatial_count;
    throw Error(Errc::precondition, "unknown z_mode '" + std::string(s) + "'");
}

std::vector<double> resize_plane_bilinear(const std::vector<double>& src, int sh, int sw, int dh, int dw) {
    if (sh == dh && sw == dw) return src;
    std::vector<double> out(static_cast<std::size_t>(dh) * dw);
    const double sy = static_cast<double>(sh) / dh;
    const double sx = static_cast<double>(sw) / dw;
    for (int r = 0; r < dh; ++r) {
        const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(sh - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double wy = fy - y0;
        for (int c = 0; c < dw; ++c) {
            const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(sw - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double wx = fx - x0;
            const double top = src[y0 * sw + x0] * (1 - wx) + src[y0 * sw + x1] * wx;
            const double bot = src[y1 * sw + x0] * (1 - wx) + src[y1 * sw + x1] * wx;
            out[static_cast<std::size_t>(r) * dw + c] = top * (1 - wy) + bot * wy;
        }
    }
    return out;
}

GradCamResult gradcam_from_context(const GradCamContext& ctx, int height, int width, ZMode z_mode,
                                   double z_scale) {
    const FeatureMap& f = ctx.activations;
    const FeatureMap& g = ctx.gradients;
    require(f.channels == g.channels && f.height == g.height && f.width == g.width, Errc::shape_mismatch,
            "gradcam context activations and gradients differ in shape");
    GradCamResult out;
    out.map = HeatMap(HeatKind::gradcam, height, width);
    const std::size_t hw = static_cast<std::size_t>(f.height) * f.width;
    out.z = (z_mode == ZMode::positive_grad_sum ? ctx.positive_grad_sum : static_cast<double>(hw)) * z_scale;
    if (!(out.z > 0.0)) {
        out.all_zero = true;
        return out;
    }
    std::vector<double> raw(hw, 0.0);
    for (int k = 0; k < f.channels; ++k) {
        const double* gk = g.data.data() + k * hw;
        double wk = 0.0;
        for (std::size_t i = 0; i < hw; ++i) wk += gk[i];
        wk /= out.z;
        if (wk == 0.0) continue;
        const double* fk = f.data.data() + k * hw;
        for (std::size_t i = 0; i < hw; ++i) raw[i] += wk * fk[i];
    }
    for (double& v : raw) v = v > 0.0 ? v : 0.0;
    out.map.values = resize_plane_bilinear(raw, f.height, f.width, height, width);
    if (*std::max_element(out.map.values.begin(), out.map.values.end()) <= 0.0) {
        std::fill(out.map.values.begin(), out.map.values.end(), 0.0);
        out.all_zero = true;
        return out;
    }
    out.map.normalize_minmax();
    return out;
}

GradCamResult gradcam(const SegModel& model, const Image& image, int target_class, const GradCamOptions& opt,
                      const LabelMask* ignore) {
    const std::string layer = opt.layer.empty() ? model.default_target_layer() : opt.layer;
    const GradCamContext ctx = model.class_score_with_grads(image, target_class, layer, ignore);
    return gradcam_from_context(ctx, image.height, image.width, opt.z_mode, opt.z_scale);
}

namespace {

std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& in, int h, int w, int radius) {
    if (radius <= 0) return in;
    // Separable Chebyshev dilation.
    std::vector<std::uint8_t> tmp(in.size(), 0), out(in.size(), 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!in[r * w + c]) continue;
            for (int x = std::max(0, c - radius); x <= std::min(w - 1, c + radius); ++x) tmp[r * w + x] = 1;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!tmp[r * w + c]) continue;
            for (int y = std::max(0, r - radius); y <= std::min(h - 1, r + radius); ++y) out[y * w + c] = 1;
        }
    return out;
}

}  // namespace

ProxGradCamResult prox_gradcam(const SegModel& model, const Image& image, const ProximityMask& mask,
                               const ProxGradCamOptions& opt) {
    ProxGradCamResult out;
    out.mask = mask;
    const int h = image.height, w = image.width;
    const Image informed = depth_informed_image(image, mask);

    std::vector<std::uint8_t> support(mask.soft.size());
    std::size_t support_px = 0;
    for (std::size_t i = 0; i < support.size(); ++i) {
        support[i] = mask.soft.values[i] > 0.0;
        support_px += support[i];
    }
    if (support_px > 0 && !opt.classes.empty()) {
        for (int c : opt.classes)
            require(c >= 0 && c < model.config().num_classes, Errc::precondition, "target class out of range");
        out.target_classes = opt.classes;
    } else if (support_px > 0) {
        const LabelMask pred = model.predict_probs(informed).argmax();
        std::vector<std::size_t> area(static_cast<std::size_t>(model.config().num_classes), 0);
        for (std::size_t i = 0; i < support.size(); ++i)
            if (support[i]) ++area[pred.labels[i]];
        for (std::size_t c = 0; c < area.size(); ++c)
            if (static_cast<double>(area[c]) / static_cast<double>(support_px) > opt.min_area_fraction)
                out.target_classes.push_back(static_cast<int>(c));
    }
    if (out.target_classes.empty()) {
        out.fallback = true;
        out.map = mask.soft;
        out.map.kind = HeatKind::prox_gradcam;
        out.all_zero = support_px == 0;
        return out;
    }

    const std::string layer = opt.gradcam.layer.empty() ? model.default_target_layer() : opt.gradcam.layer;
    const auto contexts = model.class_scores_with_grads(informed, out.target_classes, layer);
    out.map = HeatMap(HeatKind::prox_gradcam, h, w);
    for (const auto& ctx : contexts) {
        const GradCamResult g = gradcam_from_context(ctx, h, w, opt.gradcam.z_mode, opt.gradcam.z_scale);
        if (g.all_zero) continue;
        for (std::size_t i = 0; i < out.map.size(); ++i) out.map.values[i] = std::max(out.map.values[i], g.map.values[i]);
    }
    const auto keep = dilate(support, h, w, opt.halo_px);
    for (std::size_t i = 0; i < out.map.size(); ++i)
        if (!keep[i]) out.map.values[i] = 0.0;
    if (*std::max_element(out.map.values.begin(), out.map.values.end()) <= 0.0) {
        std::fill(out.map.values.begin(), out.map.values.end(), 0.0);
        out.all_zero = true;
    } else {
        out.map.normalize_minmax();
    }
    return out;
}

ProxGradCamResult prox_gradcam(const SegModel& model, const Sample& sample, const DepthProvider& provider,
                               const ProxGradCamOptions& opt) {
    const DepthMap depth = provider.lookup(sample);
    return prox_gradcam(model, sample.image, proximity_mask(depth, opt.tau_quantile, opt.hard_mask), opt);
}

}  // namespace segxal
