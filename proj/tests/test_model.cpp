#include <doctest.h>

#include "support.hpp"

using namespace segxal;

namespace {

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return Errc::io;
}

double pixel_accuracy(const LabelMask& a, const LabelMask& b) {
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) same += a.labels[i] == b.labels[i];
    return static_cast<double>(same) / static_cast<double>(a.labels.size());
}

}  // namespace

TEST_CASE("training on one sample lowers the loss") {
    SegModel m(test::tiny_config());
    const Sample s = test::scene(11, 2);
    std::vector<const Image*> im{&s.image};
    std::vector<const LabelMask*> lb{&*s.gt};
    const TrainingReport r = m.train(im, lb, 50);
    CHECK(r.epochs_run == 50);
    CHECK(r.final_loss < r.initial_loss);
}

TEST_CASE("empty labeled set is a precondition error") {
    SegModel m(test::tiny_config());
    CHECK(code_of([&] { m.train({}, {}, 1); }) == Errc::precondition);
}

TEST_CASE("training is reproducible for a fixed seed") {
    const Sample s = test::scene(12, 2);
    std::vector<const Image*> im{&s.image};
    std::vector<const LabelMask*> lb{&*s.gt};
    SegModel a(test::tiny_config()), b(test::tiny_config());
    CHECK(a.train(im, lb, 5).final_loss == b.train(im, lb, 5).final_loss);
    CHECK(a.logits(s.image) == b.logits(s.image));
}

TEST_CASE("softmax columns sum to one") {
    SegModel m(test::tiny_config());
    const ProbMap p = m.predict_probs(test::scene(2, 3).image);
    for (std::size_t px = 0; px < p.plane(); ++px) {
        double sum = 0.0;
        for (int c = 0; c < p.num_classes; ++c) sum += p.at(c, px);
        REQUIRE(std::abs(sum - 1.0) <= 1e-5);
    }
}

TEST_CASE("overfit model reproduces its training mask") {
    SegModel m(test::tiny_config());
    const Sample s = test::scene(13, 2);
    test::overfit(m, s, 150);
    CHECK(pixel_accuracy(m.predict_probs(s.image).argmax(), *s.gt) > 0.9);
}

TEST_CASE("wrong input resolution is a shape mismatch") {
    SegModel m(test::tiny_config());
    const Sample s = test::scene(1, 1, 64, 128);
    CHECK(code_of([&] { m.predict_probs(s.image); }) == Errc::shape_mismatch);
}

TEST_CASE("class score gradients match central differences") {
    SegModel m(test::tiny_config());
    const Sample s = test::scene(14, 2);
    test::overfit(m, s, 5);
    for (const std::string layer : {"enc0", "bottleneck", "dec0"}) {
        CAPTURE(layer);
        const auto fd = test::gradient_fd_check(m, s.image, 2, layer, 20, 1e-3, 99);
        CHECK(fd.checked == 20);
        CHECK(fd.max_rel_error < 1e-3);
    }
}

TEST_CASE("zero head without bias gives zero gradients") {
    ModelConfig cfg = test::tiny_config();
    cfg.use_bias = false;
    SegModel m(cfg);
    for (double& w : m.parameter("head.w")) w = 0.0;
    const GradCamContext ctx = m.class_score_with_grads(test::scene(3, 2).image, 1, m.default_target_layer());
    for (double g : ctx.gradients.data) REQUIRE(g == 0.0);
    CHECK(ctx.positive_grad_sum == 0.0);
}

TEST_CASE("bad target class or layer") {
    SegModel m(test::tiny_config());
    const Image img = test::scene(3, 1).image;
    CHECK(code_of([&] { m.class_score_with_grads(img, 5, "dec0"); }) == Errc::precondition);
    CHECK(code_of([&] { m.class_score_with_grads(img, 0, "nope"); }) == Errc::unknown_layer);
}

TEST_CASE("multi-class gradients agree with single-class calls") {
    SegModel m(test::tiny_config());
    const Image img = test::scene(4, 2).image;
    const auto many = m.class_scores_with_grads(img, {0, 2, 4}, "enc0");
    REQUIRE(many.size() == 3);
    const int cls[] = {0, 2, 4};
    for (int i = 0; i < 3; ++i) {
        const auto one = m.class_score_with_grads(img, cls[i], "enc0");
        CHECK(one.class_score == many[i].class_score);
        CHECK(one.gradients.data == many[i].gradients.data);
    }
}

TEST_CASE("checkpoint round trip preserves predictions") {
    test::TempDir dir("ckpt");
    SegModel m(test::tiny_config());
    const Sample s = test::scene(5, 2);
    test::overfit(m, s, 3);
    m.save(dir / "m.bin");
    const SegModel back = SegModel::load(dir / "m.bin");
    CHECK(back.logits(s.image) == m.logits(s.image));
    CHECK(back.epochs_trained() == m.epochs_trained());
}
