#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "segxal/dataset.hpp"
#include "segxal/error.hpp"
#include "segxal/model.hpp"
#include "segxal/rng.hpp"
#include "segxal/types.hpp"

namespace segxal::test {

/// Small enough for per-test overfitting in well under a second per epoch.
inline ModelConfig tiny_config(int classes = 5, int h = 32, int w = 64) {
    ModelConfig c = ModelConfig::desk_preset(classes);
    c.height = h;
    c.width = w;
    c.levels = 2;
    c.base_channels = 4;
    c.batch_size = 1;
    c.learning_rate = 0.05;
    return c;
}

inline Sample scene(std::uint64_t seed, int objects, int h = 32, int w = 64, int classes = 5) {
    SceneSpec s;
    s.height = h;
    s.width = w;
    s.num_classes = classes;
    s.num_objects = objects;
    s.seed = seed;
    return generate_scene(s).sample;
}

/// Code of the segxal::Error thrown by `f`; fails the test if nothing is thrown.
template <class F>
Errc code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    throw std::logic_error("expected a segxal::Error");
}

inline ProbMap random_probs(Rng& rng, int c, int h, int w) {
    ProbMap p(c, h, w);
    for (std::size_t px = 0; px < p.plane(); ++px) {
        double sum = 0.0;
        for (int k = 0; k < c; ++k) sum += p.at(k, px) = rng.uniform() + 1e-3;
        for (int k = 0; k < c; ++k) p.at(k, px) /= sum;
    }
    return p;
}

inline void overfit(SegModel& model, const Sample& s, int epochs) {
    std::vector<const Image*> im{&s.image};
    std::vector<const LabelMask*> lb{&*s.gt};
    model.train(im, lb, epochs);
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("segxal-" + tag + "-" + std::to_string(Rng(std::random_device{}()).next() % 1000000007));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string operator/(const std::string& rel) const { return (path / rel).string(); }
};

/// Two identically sized vehicles (class 2): one just above the bottom edge, one just below the horizon.
/// objects[0] is the far one, objects[1] the near one.
inline SyntheticScene two_vehicle_scene(std::uint64_t seed, int h = 32, int w = 64) {
    SceneSpec probe;
    probe.height = h;
    probe.width = w;
    probe.seed = seed;
    const int horizon = generate_scene(probe).horizon_row;
    Rng rng(Rng::mix(seed + 17));
    const int vh = h / 4, vw = w / 6;
    const int far_col = rng.range(vw, w / 2 - vw), near_col = rng.range(w / 2 + vw / 2, w - vw);
    const bool swap = rng.uniform() < 0.5;
    SceneSpec s = probe;
    s.objects = {{2, std::min(h - 1, horizon + vh / 2 + 1), swap ? w - far_col : far_col, vh, vw},
                 {2, h - 2, swap ? w - near_col : near_col, vh, vw}};
    return generate_scene(s);
}

/// Pixels of `o` that still show its class after later objects were painted.
inline std::vector<std::uint8_t> object_pixels(const SyntheticScene& sc, const ObjectPlacement& o) {
    const LabelMask& gt = *sc.sample.gt;
    std::vector<std::uint8_t> m(gt.labels.size(), 0);
    for (int r = o.top; r <= o.bottom; ++r)
        for (int c = o.left; c <= o.right; ++c)
            if (gt.at(r, c) == o.cls) m[static_cast<std::size_t>(r) * gt.width + c] = 1;
    return m;
}

inline double mean_over(const std::vector<double>& v, const std::vector<std::uint8_t>& m, bool inside = true) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if ((m[i] != 0) == inside) s += v[i], ++n;
    return n ? s / static_cast<double>(n) : 0.0;
}

struct FdCheck {
    double max_rel_error = 0.0;
    int checked = 0;
    int skipped_kinks = 0;
};

/// Analytic d y^c / d f_k against central differences on `entries` random activation entries.
/// Entries whose perturbation flips a ReLU or a max-pool winner straddle a kink and are skipped.
inline FdCheck gradient_fd_check(const SegModel& model, const Image& image, int cls, const std::string& layer,
                                 int entries, double step, std::uint64_t seed) {
    const GradCamContext ctx = model.class_score_with_grads(image, cls, layer);
    const std::vector<double>& base = ctx.activations.data;
    std::vector<std::uint8_t> base_pattern;
    model.class_score_with_override(image, cls, layer, base, &base_pattern);
    Rng rng(seed);
    FdCheck out;
    for (int tries = 0; out.checked < entries && tries < 50 * entries; ++tries) {
        const std::size_t j = rng.below(base.size());
        std::vector<double> plus = base, minus = base;
        plus[j] += step;
        minus[j] -= step;
        std::vector<std::uint8_t> pp, pm;
        const double yp = model.class_score_with_override(image, cls, layer, plus, &pp);
        const double ym = model.class_score_with_override(image, cls, layer, minus, &pm);
        if (pp != base_pattern || pm != base_pattern) {
            ++out.skipped_kinks;
            continue;
        }
        const double numeric = (yp - ym) / (2.0 * step);
        const double analytic = ctx.gradients.data[j];
        const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        out.max_rel_error = std::max(out.max_rel_error, std::abs(numeric - analytic) / scale);
        ++out.checked;
    }
    return out;
}

}  // namespace segxal::test
