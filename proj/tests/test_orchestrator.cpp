#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "segxal/orchestrator.hpp"
#include "segxal/png_io.hpp"
#include "support.hpp"

using namespace segxal;
namespace fs = std::filesystem;

namespace {

RunConfig small_run(Strategy s = Strategy::random) {
    RunConfig cfg;
    cfg.model = test::tiny_config();
    cfg.model.epochs_per_cycle = 1;
    cfg.strategy = s;
    cfg.al.num_cycles = 2;
    cfg.al.initial_label_fraction = 0.25;
    cfg.al.query_fraction_per_cycle = 0.125;
    cfg.al.dice_threshold_theta = 0.0;
    cfg.al.seed = 5;
    cfg.data.train_count = 16;
    cfg.data.val_count = 3;
    return cfg;
}

// wall_time is the only nondeterministic field.
bool same(const MetricsReport& a, const MetricsReport& b) { return to_json(a) == to_json(b); }

bool same(const std::vector<MetricsReport>& a, const std::vector<MetricsReport>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!same(a[i], b[i])) return false;
    return true;
}

nlohmann::json read_json(const std::string& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("random strategy grows the labeled pool by the query count") {
    const RunConfig cfg = small_run();
    auto [train, val] = load_run_data(cfg);
    Orchestrator o(cfg, train, val);
    o.initialize();
    CHECK(o.state().pool.labeled.size() == 4);
    CHECK(o.state().initial_metrics);
    const CycleOutcome c = o.run_cycle();
    CHECK(c.cycle == 1);
    CHECK(c.candidates.size() == 2);
    CHECK(c.queried == c.candidates);
    CHECK(o.state().pool.labeled.size() == 6);
    CHECK(o.state().pool.candidate.empty());
    CHECK(o.state().pool.total() == 16);
    CHECK(o.state().queried == 2);
    CHECK(c.metrics.samples_labeled == 6);
}

TEST_CASE("ranked strategies draw twice the query count and return the rest") {
    RunConfig cfg = small_run(Strategy::entropy_only);
    auto [train, val] = load_run_data(cfg);
    Orchestrator o(cfg, train, val);
    o.initialize();
    const CycleOutcome c = o.run_cycle();
    CHECK(c.candidates.size() == 4);
    CHECK(c.queried.size() == 2);
    CHECK(o.state().pool.labeled.size() == 6);
    CHECK(o.state().pool.unlabeled.size() == 10);
    for (const auto& id : c.queried) CHECK(std::find(c.candidates.begin(), c.candidates.end(), id) != c.candidates.end());
}

TEST_CASE("same seed gives the same metrics and pools stay conserved") {
    RunConfig cfg = small_run(Strategy::segxal);
    auto [train, val] = load_run_data(cfg);
    std::vector<std::vector<MetricsReport>> runs;
    for (int k = 0; k < 2; ++k) {
        Orchestrator o(cfg, train, val);
        std::size_t prev = 0;
        o.run([&](const CycleOutcome& c) {
            const auto& pool = o.state().pool;
            CHECK(pool.total() == 16);
            CHECK(pool.audit().empty());
            CHECK(pool.candidate.empty());
            CHECK(pool.labeled.size() >= prev);
            prev = pool.labeled.size();
            CHECK(c.decisions.size() == c.queried.size());
            // theta = 0 accepts every queried sample.
            for (const auto& d : c.decisions) CHECK(d.accepted);
        });
        CHECK(o.state().phase == "finished");
        CHECK(o.state().stop_reason == "cycles");
        runs.push_back(o.state().per_cycle_metrics);
        runs.back().insert(runs.back().begin(), *o.state().initial_metrics);
    }
    CHECK(runs[0].size() == 3);
    CHECK(same(runs[0], runs[1]));
}

TEST_CASE("random strategy matches an independent loop") {
    RunConfig cfg = small_run();
    auto [train, val] = load_run_data(cfg);
    Orchestrator o(cfg, train, val);
    o.run();

    // The same protocol written out by hand.
    std::map<std::string, const Sample*> by_id;
    std::vector<std::string> ids;
    for (const auto& s : train) by_id[s.id()] = &s, ids.push_back(s.id());
    SamplePool pool = initial_split(ids, cfg.al, cfg.al.seed);
    ModelConfig mc = cfg.model;
    mc.seed = cfg.al.seed;
    SegModel model(mc);
    std::vector<const Sample*> eval;
    for (const auto& s : val) eval.push_back(&s);
    auto fit = [&] {
        std::vector<const Image*> im;
        std::vector<const LabelMask*> lb;
        for (const auto& id : pool.labeled) im.push_back(&by_id[id]->image), lb.push_back(&*by_id[id]->gt);
        model.train(im, lb, mc.epochs_per_cycle);
    };
    fit();
    MetricsReport m0 = compute_metrics(model, eval);
    CHECK(m0.miou == o.state().initial_metrics->miou);
    CHECK(m0.per_class_iou == o.state().initial_metrics->per_class_iou);
    for (int cycle = 0; cycle < cfg.al.num_cycles; ++cycle) {
        std::vector<std::string> un(pool.unlabeled.begin(), pool.unlabeled.end());
        Rng rng = Rng::derive(cfg.al.seed, 0xd5, static_cast<std::uint64_t>(cycle + 1));
        rng.shuffle(un);
        for (int i = 0; i < 2; ++i) pool.move(un[i], PoolTag::unlabeled, PoolTag::labeled);
        fit();
        const MetricsReport m = compute_metrics(model, eval);
        const MetricsReport& got = o.state().per_cycle_metrics.at(cycle);
        CHECK(m.miou == got.miou);
        CHECK(m.per_class_iou == got.per_class_iou);
    }
    CHECK(pool == o.state().pool);
}

TEST_CASE("run directory layout and resume") {
    test::TempDir dir("orch");
    RunConfig cfg = small_run(Strategy::segxal);
    auto [train, val] = load_run_data(cfg);

    RunConfig one = cfg;
    one.al.num_cycles = 1;
    {
        Orchestrator o(one, train, val, dir.str());
        CHECK(o.run());
        CHECK(o.state().stop_reason == "cycles");
    }
    for (const char* f : {"config.json", "palette.json", "state.json", "cycle_0/metrics.json", "cycle_0/checkpoint.bin",
                          "cycle_1/metrics.json", "cycle_1/checkpoint.bin", "cycle_1/decisions.jsonl"})
        CHECK_MESSAGE(fs::exists(dir / f), f);
    CHECK(fs::is_directory(dir / "cycle_1/eem"));
    CHECK(fs::is_directory(dir / "cycle_1/prompts"));
    CHECK(fs::is_directory(dir / "cycle_1/labels"));
    const auto state = al_state_from_json(read_json(dir / "state.json"));
    CHECK(state.cycle == 1);
    CHECK(state.checkpoint == "cycle_1/checkpoint.bin");
    CHECK(state.corrected_labels.size() == state.pool.labeled.size() - 4);
    CHECK(metrics_from_json(read_json(dir / "cycle_1/metrics.json")).cycle == 1);
    CHECK_FALSE(read_json(dir / "cycle_1/metrics.json").contains("wall_time"));

    // Resuming for one more cycle lands where an uninterrupted two-cycle run does.
    Orchestrator r = Orchestrator::resume(dir.str(), train, val, &cfg);
    CHECK(r.state().phase == "ready");
    CHECK(r.run());
    Orchestrator full(cfg, train, val);
    full.run();
    CHECK(r.state().pool == full.state().pool);
    CHECK(same(r.state().per_cycle_metrics, full.state().per_cycle_metrics));
    for (const auto& id : r.state().pool.labeled) CHECK(r.training_label(id) == full.training_label(id));

    // A finished run resumes as a no-op.
    Orchestrator again = Orchestrator::resume(dir.str(), train, val);
    const ALState before = again.state();
    CHECK(again.run());
    CHECK(again.state().per_cycle_metrics.size() == before.per_cycle_metrics.size());
}

TEST_CASE("state and config json") {
    RunConfig cfg = small_run(Strategy::entropy_only);
    cfg.name = "x";
    cfg.al.budget_n = 9;
    cfg.data.kind = "synthetic_dir";
    cfg.data.train_dir = "/tmp/a";
    const RunConfig back = run_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(back.strategy == Strategy::entropy_only);
    CHECK(back.al.budget_n == 9);
    // Missing keys keep the base values.
    CHECK(run_config_from_json({{"al", {{"num_cycles", 7}}}}, cfg).al.budget_n == 9);

    ALState s;
    s.cycle = 2;
    s.num_cycles = 5;
    s.pool.labeled = {"a"};
    s.pool.unlabeled = {"b", "c"};
    s.checkpoint = "cycle_2/checkpoint.bin";
    MetricsReport m;
    m.cycle = 1;
    m.miou = 0.25;
    m.per_class_iou = {0.5, std::nullopt};
    s.initial_metrics = m;
    s.per_cycle_metrics = {m};
    s.phase = "ready";
    s.corrected_labels = {{"a", "cycle_1/labels/a.png"}};
    CHECK(al_state_from_json(nlohmann::json::parse(to_json(s).dump())) == s);

    auto j = to_json(s);
    j["schema"] = "segxal/0";
    CHECK(test::code_of([&] { al_state_from_json(j); }) == Errc::schema_mismatch);
}

TEST_CASE("bad configs and missing runs") {
    RunConfig cfg = small_run();
    auto [train, val] = load_run_data(cfg);
    cfg.al.dice_threshold_theta = 1.5;
    CHECK_FALSE(cfg.violations().empty());
    CHECK(test::code_of([&] { Orchestrator(cfg, train, val); }) == Errc::precondition);
    CHECK(test::code_of([&] { Orchestrator::resume("/nonexistent/run", train, val); }) == Errc::not_found);

    RunConfig ok = small_run();
    Orchestrator o(ok, train, val);
    CHECK(test::code_of([&] { o.run_cycle(); }) == Errc::precondition);
}

TEST_CASE("budget stops the loop") {
    RunConfig cfg = small_run();
    cfg.al.num_cycles = 5;
    cfg.al.budget_n = 3;
    auto [train, val] = load_run_data(cfg);
    Orchestrator o(cfg, train, val);
    o.run();
    CHECK(o.state().queried == 3);
    CHECK(o.state().stop_reason == "budget");
    CHECK(o.state().per_cycle_metrics.size() == 2);
    CHECK(test::code_of([&] { o.run_cycle(); }) == Errc::budget_exhausted);
}

TEST_CASE("ablation table has one row per variant and seed") {
    RunConfig cfg = small_run(Strategy::segxal);
    cfg.al.num_cycles = 1;
    auto [train, val] = load_run_data(cfg);
    const auto variants = standard_ablation_variants();
    REQUIRE(variants.size() == 3);
    const auto rows = run_ablation(cfg, variants, {1, 2}, train, val);
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].variant == "with_eem");
    CHECK(rows[5].variant == "without_ebu");
    CHECK(rows[5].seed == 2);
    for (const auto& r : rows) {
        CHECK(r.miou_per_cycle.size() == 1);
        CHECK(r.final_miou == r.miou_per_cycle.back());
    }
    const std::string csv = ablation_csv(rows);
    CHECK(csv.rfind("variant,seed,miou_cycle_1,final_miou,samples_labeled\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(ablation_json(rows)["rows"].size() == 6);
}

TEST_CASE("class names follow the data kind") {
    RunConfig cfg;
    cfg.model = test::tiny_config();
    CHECK(class_names(cfg).size() == 5);
    cfg.data.kind = "cityscapes";
    cfg.model.num_classes = 19;
    const auto names = class_names(cfg);
    REQUIRE(names.size() == 19);
    CHECK(names[0] == "road");
    CHECK(names[13] == "car");
}
