#include <doctest.h>

#include <array>
#include <map>

#include "segxal/selection.hpp"
#include "support.hpp"

using namespace segxal;

namespace {

// Per-class 2|A∩B| / (|A|+|B|) by direct counting, averaged over classes present in either mask.
double dice_oracle(const LabelMask& a, const LabelMask& b) {
    std::map<int, std::array<double, 3>> n;  // class -> {|A|, |B|, |A∩B|}
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.labels[i] == kIgnoreLabel || b.labels[i] == kIgnoreLabel) continue;
        n[a.labels[i]][0] += 1;
        n[b.labels[i]][1] += 1;
        if (a.labels[i] == b.labels[i]) n[a.labels[i]][2] += 1;
    }
    if (n.empty()) return 1.0;
    double s = 0.0;
    for (const auto& [c, v] : n) s += 2 * v[2] / (v[0] + v[1]);
    return s / static_cast<double>(n.size());
}

AnnotationRecord record(const std::string& id, const LabelMask& m) {
    AnnotationRecord r;
    r.sample_id = id;
    r.corrected = m;
    return r;
}

LabelMask random_mask(Rng& rng, int h, int w, int c) {
    LabelMask m(h, w, c);
    for (auto& v : m.labels) v = rng.uniform() < 0.05 ? kIgnoreLabel : static_cast<std::uint8_t>(rng.below(c));
    return m;
}

}  // namespace

TEST_CASE("dice hand values") {
    LabelMask a(1, 6, 2), b(1, 6, 2);
    CHECK(dice(a, a) == 1.0);
    // Class 1: 4 px each, 2 shared, so 2*2/(4+4) = 0.5. Class 0 has 2 px each and none shared.
    const std::uint8_t av[] = {1, 1, 1, 1, 0, 0}, bv[] = {0, 0, 1, 1, 1, 1};
    a.labels.assign(av, av + 6);
    b.labels.assign(bv, bv + 6);
    CHECK(dice(a, b) == doctest::Approx((0.5 + 0.0) / 2));
    CHECK(dice(a, b) == doctest::Approx(dice_oracle(a, b)).epsilon(1e-15));

    LabelMask x(1, 8, 2, kIgnoreLabel), y(1, 8, 2, kIgnoreLabel);
    CHECK(dice(x, y) == 1.0);
    LabelMask p(2, 4, 3, 0), q(2, 4, 3, 2);
    for (int c = 0; c < 4; ++c) p.at(0, c) = 1;
    q.at(0, 0) = q.at(0, 1) = 1;
    q.at(1, 0) = q.at(1, 1) = 1;
    // Classes present: 0 (|A|=4,|B|=0), 1 (4,4,2), 2 (0,4): mean of 0, 0.5, 0.
    CHECK(dice(p, q) == doctest::Approx(0.5 / 3));
}

TEST_CASE("disjoint support for every class gives zero") {
    LabelMask a(3, 3, 3, 0), b(3, 3, 3, 1);
    CHECK(dice(a, b) == 0.0);
}

TEST_CASE("dice matches the counting oracle and is symmetric") {
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        const int c = 2 + static_cast<int>(rng.below(18));
        const LabelMask a = random_mask(rng, 6, 7, c), b = random_mask(rng, 6, 7, c);
        REQUIRE(dice(a, b) == doctest::Approx(dice_oracle(a, b)).epsilon(1e-12));
        REQUIRE(dice(a, b) == dice(b, a));
        REQUIRE(dice(a, a) == 1.0);
    }
    CHECK(test::code_of([] { dice(LabelMask(2, 2, 2), LabelMask(2, 3, 2)); }) == Errc::shape_mismatch);
}

TEST_CASE("theta zero accepts everything") {
    Rng rng(2);
    SamplePool pool;
    std::vector<LabelMask> preds, fixes;
    std::vector<AnnotationRecord> recs;
    for (int i = 0; i < 6; ++i) {
        pool.candidate.insert("c" + std::to_string(i));
        preds.push_back(random_mask(rng, 5, 5, 4));
        fixes.push_back(random_mask(rng, 5, 5, 4));
    }
    for (int i = 0; i < 6; ++i) recs.push_back(record("c" + std::to_string(i), fixes[i]));
    std::vector<SelectionInput> in;
    for (int i = 0; i < 6; ++i) in.push_back({"c" + std::to_string(i), &preds[i], &recs[i]});
    const auto d = select(in, 0.0, pool, 1);
    for (const auto& x : d) CHECK(x.accepted);
    CHECK(pool.labeled.size() == 6);
    CHECK(pool.candidate.empty());
}

TEST_CASE("theta one rejects a single wrong pixel") {
    SamplePool pool;
    pool.candidate = {"a"};
    LabelMask pred(4, 4, 3, 1), fixed = pred;
    fixed.at(2, 2) = 2;
    const auto rec = record("a", fixed);
    const auto d = select({{"a", &pred, &rec}}, 1.0, pool, 3);
    REQUIRE(d.size() == 1);
    CHECK_FALSE(d[0].accepted);
    CHECK(d[0].cycle == 3);
    CHECK(pool.unlabeled == std::set<std::string>{"a"});
}

TEST_CASE("mixed batch at theta 0.85") {
    // Two classes on 1x20. Counting oracle: flipping k foreground px of 10 to background gives
    // class 1: 2(10-k)/(20-k), class 0: 2*10/(20+k). k=1 gives ~0.95 and k=5 ~0.73.
    auto make = [](int k) {
        LabelMask pred(1, 20, 2, 0), fix(1, 20, 2, 0);
        for (int c = 0; c < 10; ++c) pred.at(0, c) = fix.at(0, c) = 1;
        for (int c = 0; c < k; ++c) fix.at(0, c) = 0;
        return std::pair{pred, fix};
    };
    const auto [p1, f1] = make(1);  // (18/19 + 20/21)/2 ~ 0.950
    const auto [p2, f2] = make(5);  // (10/15 + 20/25)/2 ~ 0.733
    REQUIRE(dice_oracle(p1, f1) == doctest::Approx(0.95).epsilon(0.01));
    REQUIRE(dice_oracle(p2, f2) < 0.85);
    SamplePool pool;
    pool.candidate = {"x", "y"};
    pool.labeled = {"l"};
    pool.unlabeled = {"u"};
    const auto r1 = record("x", f1), r2 = record("y", f2);
    const auto d = select({{"x", &p1, &r1}, {"y", &p2, &r2}}, 0.85, pool, 1);
    CHECK(d[0].accepted);
    CHECK_FALSE(d[1].accepted);
    CHECK(d[0].dice == doctest::Approx(dice_oracle(p1, f1)));
    CHECK(pool.labeled.size() == 2);
    CHECK(pool.unlabeled.size() == 2);
    CHECK(pool.candidate.empty());
}

TEST_CASE("selection conserves ids and is monotone in theta") {
    Rng rng(3);
    for (int t = 0; t < 30; ++t) {
        SamplePool base;
        std::vector<LabelMask> preds, fixes;
        const int n = 1 + static_cast<int>(rng.below(8));
        for (int i = 0; i < n; ++i) {
            base.candidate.insert("c" + std::to_string(i));
            preds.push_back(random_mask(rng, 4, 4, 3));
            fixes.push_back(rng.uniform() < 0.5 ? preds.back() : random_mask(rng, 4, 4, 3));
        }
        for (int i = 0; i < 3; ++i) base.unlabeled.insert("u" + std::to_string(i)), base.labeled.insert("l" + std::to_string(i));
        std::vector<AnnotationRecord> recs;
        for (int i = 0; i < n; ++i) recs.push_back(record("c" + std::to_string(i), fixes[i]));
        std::vector<SelectionInput> in;
        for (int i = 0; i < n; ++i) in.push_back({"c" + std::to_string(i), &preds[i], &recs[i]});

        std::set<std::string> before;
        for (auto tag : {PoolTag::labeled, PoolTag::unlabeled, PoolTag::candidate})
            before.insert(base.members(tag).begin(), base.members(tag).end());
        const double hi = rng.uniform(), lo = hi * rng.uniform();
        SamplePool a = base, b = base;
        const auto da = select(in, hi, a, 1), db = select(in, lo, b, 1);
        std::set<std::string> after;
        for (auto tag : {PoolTag::labeled, PoolTag::unlabeled, PoolTag::candidate})
            after.insert(a.members(tag).begin(), a.members(tag).end());
        REQUIRE(after == before);
        REQUIRE(a.total() == base.total());
        REQUIRE(a.audit().empty());
        for (std::size_t i = 0; i < da.size(); ++i)
            if (da[i].accepted) REQUIRE(db[i].accepted);
    }
}

TEST_CASE("non-candidates are rejected before the pool changes") {
    SamplePool pool;
    pool.candidate = {"a"};
    pool.unlabeled = {"b"};
    LabelMask m(2, 2, 2);
    const auto ra = record("a", m), rb = record("b", m);
    const SamplePool before = pool;
    CHECK(test::code_of([&] { select({{"a", &m, &ra}, {"b", &m, &rb}}, 0.5, pool, 1); }) == Errc::sample_not_candidate);
    CHECK(pool == before);
}

TEST_CASE("inverted gate accepts low agreement") {
    SamplePool pool;
    pool.candidate = {"a", "b"};
    LabelMask same(2, 2, 2), other(2, 2, 2, 1);
    const auto ra = record("a", same), rb = record("b", other);
    const auto d = select({{"a", &same, &ra}, {"b", &same, &rb}}, 0.85, pool, 1, true);
    CHECK_FALSE(d[0].accepted);
    CHECK(d[1].accepted);
    CHECK(d[1].inverted);
}

TEST_CASE("decisions round trip through json") {
    SelectionDecision d{"s1", 0.8125, 0.85, false, 4, false};
    CHECK(selection_decision_from_json(nlohmann::json::parse(to_json(d).dump())) == d);
}
