#include <doctest.h>

#include "segxal/png_io.hpp"
#include "segxal/proximity.hpp"
#include "support.hpp"

using namespace segxal;

namespace {

DepthMap row_ramp(int h, int w) {
    DepthMap d(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) d.at(r, c) = static_cast<double>(r) / (h - 1);
    return d;
}

SegModel overfit_on(const Sample& s, int epochs) {
    SegModel m(test::tiny_config());
    test::overfit(m, s, epochs);
    return m;
}

}  // namespace

TEST_CASE("linear ramp thresholds at the median") {
    const DepthMap d = row_ramp(10, 4);
    const ProximityMask m = proximity_mask(d, 0.5);
    // Median of rows 0..9 / 9 is 0.5 for an even row count.
    CHECK(m.tau_used == doctest::Approx(0.5).epsilon(1e-12));
    for (int r = 0; r < 5; ++r) CHECK(m.soft.at(r, 0) == 0.0);
    CHECK(m.soft.at(9, 3) == 1.0);
    CHECK_FALSE(m.degenerate);
}

TEST_CASE("constant depth gives an all-ones degenerate mask") {
    DepthMap d(6, 6);
    std::fill(d.nearness.begin(), d.nearness.end(), 0.7);
    const ProximityMask m = proximity_mask(d, 0.5);
    CHECK(m.degenerate);
    for (double v : m.soft.values) REQUIRE(v == 1.0);
}

TEST_CASE("tau zero keeps nearness as is") {
    Rng rng(2);
    DepthMap d(5, 7);
    for (double& v : d.nearness) v = rng.uniform();
    const ProximityMask m = proximity_mask(d, 0.0);
    CHECK(m.soft.values == d.nearness);
}

TEST_CASE("soft mask is monotone in nearness and hard mask is its support") {
    Rng rng(3);
    DepthMap d(9, 11);
    for (double& v : d.nearness) v = rng.uniform();
    for (double tau : {0.1, 0.3, 0.5, 0.9}) {
        const ProximityMask soft = proximity_mask(d, tau);
        const ProximityMask hard = proximity_mask(d, tau, true);
        for (std::size_t i = 0; i < d.nearness.size(); ++i)
            for (std::size_t j = 0; j < d.nearness.size(); ++j)
                if (d.nearness[i] <= d.nearness[j]) REQUIRE(soft.soft.values[i] <= soft.soft.values[j]);
        for (std::size_t i = 0; i < d.nearness.size(); ++i)
            REQUIRE(hard.soft.values[i] == (d.nearness[i] >= soft.tau_used ? 1.0 : 0.0));
    }
}

TEST_CASE("quantile interpolates linearly") {
    CHECK(quantile({4, 1, 3, 2}, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({4, 1, 3, 2}, 1.0) == 4.0);
    CHECK(quantile({4, 1, 3, 2}, 0.0) == 1.0);
    CHECK(quantile({0, 10}, 0.25) == doctest::Approx(2.5));
}

TEST_CASE("depth-informed image identities") {
    Image img("x", 4, 4);
    std::fill(img.pixels.begin(), img.pixels.end(), 0.8);
    ProximityMask m;
    m.soft = HeatMap(HeatKind::proximity, 4, 4, 1.0);
    CHECK(depth_informed_image(img, m).pixels == img.pixels);
    m.soft = HeatMap(HeatKind::proximity, 4, 4, 0.0);
    for (double v : depth_informed_image(img, m).pixels) REQUIRE(v == 0.0);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m.soft.at(r, c) = (r + c) % 2;
    const Image out = depth_informed_image(img, m);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            for (int ch = 0; ch < 3; ++ch) REQUIRE(out.at(r, c, ch) == ((r + c) % 2 ? 0.8 : 0.0));
}

TEST_CASE("zeroed classifier head gives a flagged zero map") {
    SegModel m(test::tiny_config());
    for (double& w : m.parameter("head.w")) w = 0.0;
    const GradCamResult g = gradcam(m, test::scene(1, 2).image, 2);
    CHECK(g.all_zero);
    for (double v : g.map.values) REQUIRE(v == 0.0);
}

TEST_CASE("gradcam is min-max normalized") {
    SegModel m(test::tiny_config());
    Rng rng(8);
    Image img("r", 32, 64);
    for (double& v : img.pixels) v = rng.uniform();
    for (int c = 0; c < 5; ++c) {
        const GradCamResult g = gradcam(m, img, c);
        if (g.all_zero) continue;
        CHECK(*std::min_element(g.map.values.begin(), g.map.values.end()) == 0.0);
        CHECK(*std::max_element(g.map.values.begin(), g.map.values.end()) == 1.0);
    }
}

TEST_CASE("scaling the normalizer leaves the normalized map unchanged") {
    SegModel m(test::tiny_config());
    const Image img = test::scene(4, 2).image;
    for (ZMode z : {ZMode::positive_grad_sum, ZMode::spatial_count}) {
        GradCamOptions a, b;
        a.z_mode = b.z_mode = z;
        b.z_scale = 3.7;
        const auto ga = gradcam(m, img, 1, a), gb = gradcam(m, img, 1, b);
        REQUIRE(ga.map.size() == gb.map.size());
        for (std::size_t i = 0; i < ga.map.size(); ++i) REQUIRE(std::abs(ga.map.values[i] - gb.map.values[i]) < 1e-12);
        const auto am = std::max_element(ga.map.values.begin(), ga.map.values.end()) - ga.map.values.begin();
        const auto bm = std::max_element(gb.map.values.begin(), gb.map.values.end()) - gb.map.values.begin();
        CHECK(am == bm);
    }
}

TEST_CASE("overfit single vehicle: gradcam is hotter on the vehicle") {
    SceneSpec s;
    s.height = 32;
    s.width = 64;
    s.seed = 21;
    s.objects = {{2, 28, 30, 10, 14}};
    const SyntheticScene sc = generate_scene(s);
    const SegModel m = overfit_on(sc.sample, 150);
    const GradCamResult g = gradcam(m, sc.sample.image, 2);
    REQUIRE_FALSE(g.all_zero);
    const auto inside = test::object_pixels(sc, sc.objects[0]);
    CHECK(test::mean_over(g.map.values, inside) > test::mean_over(g.map.values, inside, false));

    // Depth-informed saliency for the same class concentrates at least as much mass on the near vehicle.
    // The wheels are near black, so a model that only saw the raw frame reads the blacked-out far region
    // as vehicle. Compare both maps on a model fitted to the raw and the depth-informed frame.
    ModelConfig cfg = test::tiny_config();
    cfg.base_channels = 8;
    cfg.learning_rate = 0.02;
    SegModel both(cfg);
    const Image informed = depth_informed_image(sc.sample.image, proximity_mask(*sc.sample.depth, 0.5));
    both.train({&sc.sample.image, &informed}, {&*sc.sample.gt, &*sc.sample.gt}, 150);
    ProxGradCamOptions opt;
    opt.classes = {2};
    const ProxGradCamResult p = prox_gradcam(both, sc.sample, DepthProvider::synthetic_gt(), opt);
    const GradCamResult plain = gradcam(both, sc.sample.image, 2);
    auto ratio = [&](const std::vector<double>& v) {
        double in = 0.0, all = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) all += v[i], in += inside[i] ? v[i] : 0.0;
        return all > 0 ? in / all : 0.0;
    };
    CHECK(ratio(p.map.values) >= ratio(plain.map.values));
}

TEST_CASE("all-zero proximity mask falls back to the mask") {
    SegModel m(test::tiny_config());
    const Sample s = test::scene(2, 1);
    ProximityMask mask;
    mask.soft = HeatMap(HeatKind::proximity, 32, 64, 0.0);
    const ProxGradCamResult r = prox_gradcam(m, s.image, mask);
    CHECK(r.fallback);
    CHECK(r.all_zero);
    CHECK(r.target_classes.empty());
    CHECK(r.map.kind == HeatKind::prox_gradcam);
    CHECK(r.map.values == mask.soft.values);
}

TEST_CASE("prox-gradcam stays within the mask support plus the halo") {
    const SyntheticScene sc = test::two_vehicle_scene(3);
    const SegModel m = overfit_on(sc.sample, 40);
    for (double tau : {0.2, 0.5}) {
        ProxGradCamOptions opt;
        opt.tau_quantile = tau;
        const ProxGradCamResult r = prox_gradcam(m, sc.sample, DepthProvider::synthetic_gt(), opt);
        const int h = 32, w = 64;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (r.map.at(y, x) == 0.0) continue;
                // Brute force: some support pixel within Chebyshev distance halo_px.
                bool near = false;
                for (int dy = -opt.halo_px; dy <= opt.halo_px && !near; ++dy)
                    for (int dx = -opt.halo_px; dx <= opt.halo_px && !near; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        near = yy >= 0 && yy < h && xx >= 0 && xx < w && r.mask.soft.at(yy, xx) > 0.0;
                    }
                REQUIRE(near);
            }
    }
}

TEST_CASE("near vehicle outranks the identical far vehicle") {
    const SyntheticScene sc = test::two_vehicle_scene(1);
    const SegModel m = overfit_on(sc.sample, 150);
    const ProxGradCamResult r = prox_gradcam(m, sc.sample, DepthProvider::synthetic_gt());
    const auto far = test::object_pixels(sc, sc.objects[0]);
    const auto near = test::object_pixels(sc, sc.objects[1]);
    CHECK(test::mean_over(r.map.values, near) > test::mean_over(r.map.values, far));
}

TEST_CASE("file depth provider") {
    test::TempDir dir("depthdir");
    const Sample s = test::scene(3, 1);
    const DepthProvider p = DepthProvider::from_directory(DepthSource::file_midas, dir.str());
    CHECK_FALSE(p.covers(s));
    CHECK(p.missing({s}) == std::vector<std::string>{s.id()});
    save_depth_png(depth_file_path(dir.str(), s.id()), *s.depth);
    CHECK(p.covers(s));
    const DepthMap d = p.lookup(s);
    for (std::size_t i = 0; i < d.nearness.size(); ++i)
        REQUIRE(std::abs(d.nearness[i] - s.depth->nearness[i]) <= 0.5 / 65535 + 1e-15);
    save_depth_png(depth_file_path(dir.str(), s.id()), DepthMap(8, 8));
    try {
        p.lookup(s);
        FAIL("expected shape mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::shape_mismatch);
    }
}
