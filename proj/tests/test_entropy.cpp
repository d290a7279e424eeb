#include <doctest.h>

#include <numeric>

#include "segxal/entropy.hpp"
#include "support.hpp"

using namespace segxal;

namespace {

ProbMap one_pixel(std::vector<double> p) {
    ProbMap m(static_cast<int>(p.size()), 1, 1);
    m.probs = std::move(p);
    return m;
}

// Textbook formula, natural log converted to bits, no sorting.
double naive_bits(const ProbMap& p, std::size_t px) {
    double h = 0.0;
    for (int c = 0; c < p.num_classes; ++c) {
        const double v = p.at(c, px);
        if (v > 0) h -= v * std::log(v) / std::log(2.0);
    }
    return h;
}

}  // namespace

TEST_CASE("hand values") {
    auto uni = entropy_map(one_pixel({0.25, 0.25, 0.25, 0.25}));
    CHECK(uni.stats.raw_bits[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(uni.map.values[0] == doctest::Approx(1.0).epsilon(1e-12));

    auto hot = entropy_map(one_pixel({0.0, 1.0, 0.0, 0.0}));
    CHECK(hot.stats.raw_bits[0] == 0.0);
    CHECK(hot.map.values[0] == 0.0);

    auto half = entropy_map(one_pixel({0.5, 0.5, 0.0, 0.0}));
    CHECK(half.stats.raw_bits[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(half.map.values[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("matches the naive formula on random maps") {
    Rng rng(5);
    for (int C : {2, 4, 19}) {
        const ProbMap p = test::random_probs(rng, C, 8, 9);
        const auto r = entropy_map(p);
        for (std::size_t px = 0; px < p.plane(); ++px) {
            REQUIRE(std::abs(r.stats.raw_bits[px] - naive_bits(p, px)) < 1e-12);
            REQUIRE(r.map.values[px] >= 0.0);
            REQUIRE(r.map.values[px] <= 1.0);
        }
        CHECK(r.map.kind == HeatKind::entropy);
    }
}

TEST_CASE("class permutation leaves entropy bit-identical") {
    Rng rng(6);
    const ProbMap p = test::random_probs(rng, 7, 6, 6);
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    ProbMap q = p;
    for (int c = 0; c < 7; ++c)
        for (std::size_t px = 0; px < p.plane(); ++px) q.at(perm[c], px) = p.at(c, px);
    CHECK(entropy_map(p).map.values == entropy_map(q).map.values);
}

TEST_CASE("ignore pixels are zeroed and left out of the stats") {
    ProbMap p(2, 1, 3);
    for (std::size_t px = 0; px < 3; ++px) p.at(0, px) = p.at(1, px) = 0.5;
    p.at(0, 2) = 1.0;
    p.at(1, 2) = 0.0;
    LabelMask ignore(1, 3, 2, 0);
    ignore.labels[1] = kIgnoreLabel;
    const auto r = entropy_map(p, &ignore);
    CHECK(r.map.values[1] == 0.0);
    CHECK(r.stats.raw_bits.size() == 2);
    CHECK(r.stats.mean == doctest::Approx(0.5));
    CHECK(r.stats.max == doctest::Approx(1.0));
    CHECK(r.stats.min == 0.0);
    CHECK(r.stats.fraction_above(0.5) == doctest::Approx(0.5));
}
