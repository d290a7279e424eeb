#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "segxal/png_io.hpp"
#include "segxal/serialize.hpp"
#include "support.hpp"

using namespace segxal;
namespace fs = std::filesystem;

namespace {

SceneSpec spec(int objects, std::uint64_t seed) {
    SceneSpec s;
    s.height = 64;
    s.width = 128;
    s.num_classes = 5;
    s.num_objects = objects;
    s.seed = seed;
    return s;
}

double mean_nearness_over(const SyntheticScene& sc, const ObjectPlacement& o) {
    // Only pixels the object still owns after later (nearer) objects were painted over it.
    const auto& gt = *sc.sample.gt;
    const auto& d = *sc.sample.depth;
    double sum = 0.0;
    int n = 0;
    for (int r = o.top; r <= o.bottom; ++r)
        for (int c = o.left; c <= o.right; ++c)
            if (gt.at(r, c) == o.cls) sum += d.at(r, c), ++n;
    return n ? sum / n : 0.0;
}

}  // namespace

TEST_CASE("zero-object scene holds only sky and road") {
    const auto sc = generate_scene(spec(0, 1));
    std::set<int> seen(sc.sample.gt->labels.begin(), sc.sample.gt->labels.end());
    CHECK(seen.size() == 2);
    CHECK(validate_sample(sc.sample).empty());
}

TEST_CASE("scene generation is deterministic") {
    const auto a = generate_scene(spec(3, 7));
    const auto b = generate_scene(spec(3, 7));
    CHECK(a.sample.image.pixels == b.sample.image.pixels);
    CHECK(a.sample.gt->labels == b.sample.gt->labels);
    CHECK(a.sample.depth->nearness == b.sample.depth->nearness);
}

TEST_CASE("nearest object is nearer than the farthest in the depth map") {
    const auto sc = generate_scene(spec(3, 7));
    REQUIRE(sc.objects.size() == 3);
    // Painting order is far to near; recompute the means from the depth map itself.
    const double far = mean_nearness_over(sc, sc.objects.front());
    const double near = mean_nearness_over(sc, sc.objects.back());
    CHECK(near > far);
}

TEST_CASE("undersized scene specs are rejected") {
    auto code_of = [](const SceneSpec& s) {
        try {
            generate_scene(s);
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::io;
    };
    SceneSpec s = spec(0, 1);
    s.height = 8;
    CHECK(code_of(s) == Errc::spec_too_small);
    s = spec(1, 1);
    s.num_classes = 2;
    CHECK(code_of(s) == Errc::spec_too_small);
    s = spec(0, 1);
    s.objects = {{2, 0, 10, 0, 0}};  // bottom row above the horizon
    CHECK(code_of(s) == Errc::spec_too_small);
}

TEST_CASE("initial split sizes and determinism") {
    std::vector<std::string> ids;
    for (int i = 0; i < 200; ++i) ids.push_back("s" + std::to_string(i));
    ALConfig c;
    auto p = initial_split(ids, c, 3);
    CHECK(p.labeled.size() == 20);
    CHECK(p.unlabeled.size() == 180);
    CHECK(initial_split(ids, c, 3) == p);
    c.initial_label_fraction = 0.4;
    CHECK(initial_split(ids, c, 3).labeled.size() == 80);
}

TEST_CASE("synthetic export loads back identically") {
    test::TempDir dir("export");
    SyntheticDatasetSpec ds;
    ds.count = 3;
    ds.height = 32;
    ds.width = 64;
    ds.seed = 4;
    const auto scenes = generate_dataset(ds);
    export_synthetic(dir.str(), ds, scenes);
    const auto back = load_synthetic_dir(dir.str());
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].id() == scenes[i].sample.id());
        CHECK(back[i].gt->labels == scenes[i].sample.gt->labels);
        for (std::size_t k = 0; k < back[i].image.pixels.size(); ++k)
            REQUIRE(std::abs(back[i].image.pixels[k] - scenes[i].sample.image.pixels[k]) <= 0.5 / 255 + 1e-12);
    }
}

TEST_CASE("cityscapes fixture maps label ids to train ids") {
    test::TempDir root("cs");
    const int h = 16, w = 32;
    // Raw ids -> train ids, written out independently of the loader's table.
    const std::map<int, int> expected = {{7, 0}, {8, 1}, {11, 2}, {21, 8}, {23, 10}, {24, 11}, {26, 13},
                                         {33, 18}, {0, 255}, {1, 255}, {4, 255}, {30, 255}};
    std::vector<int> raw_ids;
    for (const auto& kv : expected) raw_ids.push_back(kv.first);
    for (int f = 0; f < 2; ++f) {
        const std::string stem = "aachen_00000" + std::to_string(f) + "_000019";
        fs::create_directories(root.path / "leftImg8bit/train/aachen");
        fs::create_directories(root.path / "gtFine/train/aachen");
        std::vector<std::uint16_t> rgb(static_cast<std::size_t>(h) * w * 3, 100);
        write_png(root / ("leftImg8bit/train/aachen/" + stem + "_leftImg8bit.png"), h, w, 3, 8, rgb);
        std::vector<std::uint16_t> lbl(static_cast<std::size_t>(h) * w);
        for (std::size_t i = 0; i < lbl.size(); ++i) lbl[i] = static_cast<std::uint16_t>(raw_ids[(i + f) % raw_ids.size()]);
        write_png(root / ("gtFine/train/aachen/" + stem + "_gtFine_labelIds.png"), h, w, 1, 8, lbl);
    }
    CityscapesOptions opt;
    opt.height = h;
    opt.width = w;
    const auto samples = load_cityscapes_dir(root.str(), Split::train, opt);
    REQUIRE(samples.size() == 2);
    for (int f = 0; f < 2; ++f) {
        const auto& gt = *samples[f].gt;
        for (std::size_t i = 0; i < gt.labels.size(); ++i) {
            const int raw = raw_ids[(i + f) % raw_ids.size()];
            REQUIRE(gt.labels[i] == expected.at(raw));
            REQUIRE((gt.labels[i] <= 18 || gt.labels[i] == 255));
        }
    }
}

TEST_CASE("cityscapes directory edge cases") {
    test::TempDir root("cs-empty");
    CHECK(load_cityscapes_dir(root.str(), Split::train).empty());
    fs::create_directories(root.path / "leftImg8bit/train/bonn");
    std::vector<std::uint16_t> rgb(16 * 16 * 3, 0);
    write_png(root / "leftImg8bit/train/bonn/x_leftImg8bit.png", 16, 16, 3, 8, rgb);
    try {
        load_cityscapes_dir(root.str(), Split::train);
        FAIL("expected missing_pair");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::missing_pair);
    }
    CHECK(load_cityscapes_dir(root.str(), Split::test).empty());
}

TEST_CASE("depth png round trip is bit exact on the 16-bit grid") {
    test::TempDir dir("depth");
    DepthMap d(4, 5);
    for (std::size_t i = 0; i < d.nearness.size(); ++i) d.nearness[i] = static_cast<double>(i * 3000) / 65535.0;
    save_depth_png(dir / "d.png", d);
    const DepthMap back = load_depth_png(dir / "d.png", DepthSource::file_midas);
    CHECK(back.nearness == d.nearness);
}
