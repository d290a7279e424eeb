#include <doctest.h>

#include "segxal/metrics.hpp"
#include "support.hpp"

using namespace segxal;

namespace {

// Per-class IoU straight from the pixel lists, no confusion matrix.
std::vector<std::optional<double>> iou_oracle(const std::vector<std::pair<const LabelMask*, const LabelMask*>>& pairs, int c) {
    std::vector<std::optional<double>> out(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
        double inter = 0, uni = 0, present = 0;
        for (const auto& [g, p] : pairs)
            for (std::size_t i = 0; i < g->size(); ++i) {
                if (g->labels[i] == kIgnoreLabel) continue;
                const bool in_g = g->labels[i] == k, in_p = p->labels[i] == k;
                present += in_g;
                inter += in_g && in_p;
                uni += in_g || in_p;
            }
        if (present > 0) out[k] = inter / uni;
    }
    return out;
}

}  // namespace

TEST_CASE("toy confusion: TP 6, FP 2, FN 2") {
    LabelMask gt(4, 4, 2, 0), pred(4, 4, 2, 0);
    // gt class 1 on the first 8 pixels; prediction shifts the block by two.
    for (int i = 0; i < 8; ++i) gt.labels[i] = 1;
    for (int i = 2; i < 10; ++i) pred.labels[i] = 1;
    ConfusionMatrix cm(2);
    cm.add(gt, pred);
    CHECK(cm.at(1, 1) == 6);
    CHECK(cm.at(0, 1) == 2);
    CHECK(cm.at(1, 0) == 2);
    const MetricsReport m = metrics_from_confusion(cm);
    CHECK(*m.per_class_iou[1] == doctest::Approx(0.6).epsilon(1e-15));
    const auto oracle = iou_oracle({{&gt, &pred}}, 2);
    CHECK(*m.per_class_iou[0] == doctest::Approx(*oracle[0]));
    CHECK(m.miou == doctest::Approx((0.6 + *oracle[0]) / 2));
}

TEST_CASE("identity and disjoint predictions") {
    LabelMask gt(3, 3, 3, 0);
    gt.at(1, 1) = 2;
    ConfusionMatrix same(3);
    same.add(gt, gt);
    const auto a = metrics_from_confusion(same);
    CHECK(a.miou == 1.0);
    CHECK_FALSE(a.per_class_iou[1].has_value());
    LabelMask pred = gt;
    pred.at(1, 1) = 0;
    ConfusionMatrix miss(3);
    miss.add(gt, pred);
    CHECK(*metrics_from_confusion(miss).per_class_iou[2] == 0.0);
}

TEST_CASE("aggregated confusion matches the pixel oracle") {
    Rng rng(7);
    for (int t = 0; t < 50; ++t) {
        const int c = 2 + static_cast<int>(rng.below(6));
        std::vector<LabelMask> gts, preds;
        for (int s = 0; s < 3; ++s) {
            LabelMask g(5, 6, c), p(5, 6, c);
            for (auto& v : g.labels) v = rng.uniform() < 0.1 ? kIgnoreLabel : static_cast<std::uint8_t>(rng.below(c));
            for (auto& v : p.labels) v = static_cast<std::uint8_t>(rng.below(c));
            gts.push_back(g);
            preds.push_back(p);
        }
        ConfusionMatrix cm(c);
        std::vector<std::pair<const LabelMask*, const LabelMask*>> pairs;
        for (int s = 0; s < 3; ++s) cm.add(gts[s], preds[s]), pairs.push_back({&gts[s], &preds[s]});
        const auto m = metrics_from_confusion(cm);
        const auto o = iou_oracle(pairs, c);
        double sum = 0;
        int n = 0;
        for (int k = 0; k < c; ++k) {
            REQUIRE(m.per_class_iou[k].has_value() == o[k].has_value());
            if (!o[k]) continue;
            REQUIRE(*m.per_class_iou[k] == doctest::Approx(*o[k]).epsilon(1e-12));
            REQUIRE(*m.per_class_iou[k] >= 0.0);
            REQUIRE(*m.per_class_iou[k] <= 1.0);
            sum += *o[k], ++n;
        }
        REQUIRE(m.miou == doctest::Approx(sum / n).epsilon(1e-12));
    }
}

TEST_CASE("compute_metrics error paths") {
    SegModel model(test::tiny_config());
    CHECK(test::code_of([&] { compute_metrics(model, {}); }) == Errc::empty_eval_set);
    Sample s = test::scene(1, 1);
    s.gt.reset();
    CHECK(test::code_of([&] { compute_metrics(model, {&s}); }) == Errc::missing_gt);
    LabelMask g(2, 2, 2, 5), p(2, 2, 2);
    ConfusionMatrix cm(2);
    CHECK(test::code_of([&] { cm.add(g, p); }) == Errc::precondition);
    CHECK(test::code_of([&] { cm.add(g, LabelMask(3, 2, 2)); }) == Errc::shape_mismatch);
}

TEST_CASE("compute_metrics scores the model's argmax") {
    SegModel model(test::tiny_config());
    const Sample a = test::scene(2, 2), b = test::scene(3, 1);
    const auto m = compute_metrics(model, {&a, &b});
    ConfusionMatrix cm(5);
    cm.add(*a.gt, model.predict_probs(a.image).argmax());
    cm.add(*b.gt, model.predict_probs(b.image).argmax());
    CHECK(m == metrics_from_confusion(cm));
}

TEST_CASE("dice summary") {
    const auto s = summarize_dice({0.9, 0.5, 0.7}, 2);
    CHECK(s.count == 3);
    CHECK(s.accepted == 2);
    CHECK(s.mean == doctest::Approx(0.7));
    CHECK(s.min == 0.5);
    CHECK(s.max == 0.9);
    CHECK(summarize_dice({}, 0).count == 0);
}

TEST_CASE("metrics json round trip and schema check") {
    MetricsReport m;
    m.cycle = 3;
    m.per_class_iou = {0.5, std::nullopt, 0.25};
    m.miou = 0.375;
    m.dice = summarize_dice({0.8, 0.9}, 1);
    m.samples_labeled = 42;
    m.wall_time = 12.5;
    const auto j = to_json(m);
    CHECK_FALSE(j.contains("wall_time"));
    CHECK(j.at("per_class_iou").at(1).is_null());
    MetricsReport back = metrics_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.wall_time == 0.0);
    back.wall_time = m.wall_time;
    CHECK(back == m);
    CHECK(metrics_from_json(to_json(m, true)) == m);
    auto bad = j;
    bad["schema"] = "segxal/0";
    CHECK(test::code_of([&] { metrics_from_json(bad); }) == Errc::schema_mismatch);
}
