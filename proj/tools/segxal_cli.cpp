// segxal command line: data generation, AL runs, reports, the annotation service and ablations.
//
// Exit codes:
//   0 ok, 1 error, 2 unwritable output, 3 missing depth coverage, 4 run state schema mismatch,
//   5 missing or empty run dir, 6 port in use, 7 human oracle without a running service,
//   8 run suspended while waiting for annotations.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include <signal.h>

#include <CLI11.hpp>

#include "segxal/dataset.hpp"
#include "segxal/orchestrator.hpp"
#include "segxal/serialize.hpp"
#include "segxal/service.hpp"

namespace fs = std::filesystem;
using namespace segxal;

namespace {

enum Exit { ok = 0, failure = 1, unwritable = 2, no_depth = 3, bad_schema = 4, no_run = 5, port_busy = 6,
            no_service = 7, suspended = 8 };

int fail(int code, const std::string& msg) {
    std::cerr << "segxal: " << msg << "\n";
    return code;
}

std::string run_root() {
    const char* env = std::getenv("SEGXAL_RUN_ROOT");
    return env && *env ? env : "runs";
}

nlohmann::json read_json(const std::string& path) {
    if (!fs::is_regular_file(path)) throw Error(Errc::not_found, "no such file " + path);
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::corrupt_input, path + ": " + e.what());
    }
}

// ---- gen-data

struct GenArgs {
    std::string out;
    SyntheticDatasetSpec spec;
};

int gen_data(const GenArgs& a) {
    try {
        export_synthetic(a.out, a.spec, generate_dataset(a.spec));
    } catch (const Error& e) {
        return fail(e.code() == Errc::io ? unwritable : failure, e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(unwritable, e.what());
    }
    std::cout << "wrote " << a.spec.count << " samples to " << a.out << "\n";
    return ok;
}

// ---- run

struct RunArgs {
    std::string config;
    std::string strategy, oracle, depth, depth_dir, name, resume;
    int cycles = -1;
    long long seed = -1;
};

int check_depth(const RunConfig& cfg, const std::vector<Sample>& train) {
    if (cfg.depth == DepthSource::synthetic || cfg.strategy != Strategy::segxal) return ok;
    const auto missing = DepthProvider::from_directory(cfg.depth, cfg.depth_dir).missing(train);
    if (missing.empty()) return ok;
    std::cerr << "segxal: depth directory '" << cfg.depth_dir << "' misses " << missing.size() << " sample(s):\n";
    for (const auto& id : missing) std::cerr << "  " << id << "\n";
    return no_depth;
}

void print_cycle(const CycleOutcome& c) {
    std::printf("cycle %d: mIoU=%.4f labeled=%d\n", c.cycle, c.metrics.miou, c.metrics.samples_labeled);
    std::fflush(stdout);
}

int drive(Orchestrator& o) {
    const bool fresh = o.state().phase == "new";
    o.initialize();
    if (fresh) std::printf("initial: mIoU=%.4f labeled=%d\n", o.state().initial_metrics->miou,
                           o.state().initial_metrics->samples_labeled);
    if (!o.run(print_cycle)) {
        std::cout << "suspended waiting for annotations; continue with: segxal run --resume " << o.run_dir() << "\n";
        return suspended;
    }
    std::cout << "finished (" << o.state().stop_reason << "), run dir " << o.run_dir() << "\n";
    return ok;
}

int human_guard(Orchestrator& o) {
    if (o.config().oracle != OracleKind::human || service_running(o.run_dir())) return ok;
    o.prepare();
    std::cerr << "segxal: the human oracle needs the annotation service for this run.\n"
              << "  start it:  segxal serve --run " << o.run_dir() << " --port 8765\n"
              << "  then:      segxal run --resume " << o.run_dir() << "\n";
    return no_service;
}

int resume_run(const RunArgs& a) {
    if (!fs::is_directory(a.resume)) return fail(no_run, "no run directory " + a.resume);
    RunConfig stored;
    try {
        stored = run_config_from_json(read_json((fs::path(a.resume) / "config.json").string()));
        auto st = al_state_from_json(read_json((fs::path(a.resume) / "state.json").string()));
        if (st.phase == "finished" && (a.cycles < 0 || a.cycles <= st.cycle)) {
            std::cout << "run " << a.resume << " already finished (" << st.stop_reason << "); nothing to do\n";
            return ok;
        }
    } catch (const Error& e) {
        if (e.code() == Errc::schema_mismatch) return fail(bad_schema, e.what());
        if (e.code() == Errc::not_found) return fail(no_run, e.what());
        return fail(failure, e.what());
    }
    RunConfig over = stored;
    if (a.cycles >= 0) over.al.num_cycles = a.cycles;
    auto [train, val] = load_run_data(stored);
    if (int rc = check_depth(stored, train); rc != ok) return rc;
    try {
        Orchestrator o = Orchestrator::resume(a.resume, std::move(train), std::move(val), &over);
        if (int rc = human_guard(o); rc != ok) return rc;
        return drive(o);
    } catch (const Error& e) {
        return fail(e.code() == Errc::schema_mismatch ? bad_schema : failure, e.what());
    }
}

int run(const RunArgs& a) {
    if (!a.resume.empty()) return resume_run(a);
    if (a.config.empty()) return fail(failure, "run needs --config FILE or --resume RUN_DIR");
    RunConfig cfg;
    try {
        cfg = run_config_from_json(read_json(a.config));
        if (!a.strategy.empty()) cfg.strategy = strategy_from_string(a.strategy);
        if (!a.oracle.empty()) cfg.oracle = oracle_kind_from_string(a.oracle);
        if (!a.depth.empty()) cfg.depth = depth_source_from_string(a.depth);
        if (!a.depth_dir.empty()) cfg.depth_dir = a.depth_dir;
        if (!a.name.empty()) cfg.name = a.name;
        if (a.cycles >= 0) cfg.al.num_cycles = a.cycles;
        if (a.seed >= 0) cfg.al.seed = static_cast<std::uint64_t>(a.seed);
        if (auto bad = cfg.violations(); !bad.empty()) return fail(failure, "invalid config: " + bad.front());
    } catch (const Error& e) {
        return fail(e.code() == Errc::schema_mismatch ? bad_schema : failure, e.what());
    }
    const std::string dir = (fs::path(run_root()) / cfg.name).string();
    if (fs::exists(fs::path(dir) / "state.json"))
        return fail(failure, "run directory " + dir + " already holds a run; use --resume " + dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) return fail(unwritable, "cannot create " + dir + ": " + ec.message());

    auto [train, val] = load_run_data(cfg);
    if (int rc = check_depth(cfg, train); rc != ok) return rc;
    Orchestrator o(cfg, std::move(train), std::move(val), dir);
    if (int rc = human_guard(o); rc != ok) return rc;
    return drive(o);
}

// ---- report

struct ReportArgs {
    std::string run;
    std::string format = "csv";
};

struct ReportTable {
    std::vector<std::string> classes;
    std::vector<MetricsReport> rows;
};

ReportTable load_report(const std::string& dir) {
    ReportTable t;
    const RunConfig cfg = run_config_from_json(read_json((fs::path(dir) / "config.json").string()));
    t.classes = class_names(cfg);
    std::map<int, MetricsReport> by_cycle;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string n = e.path().filename().string();
        if (!e.is_directory() || n.rfind("cycle_", 0) != 0) continue;
        const fs::path m = e.path() / "metrics.json";
        if (!fs::exists(m)) continue;
        MetricsReport r = metrics_from_json(read_json(m.string()));
        if (r.cycle >= 1) by_cycle[r.cycle] = std::move(r);
    }
    for (auto& [k, r] : by_cycle) t.rows.push_back(std::move(r));
    return t;
}

std::string fmt(double v, const char* f = "%.17g") {
    char buf[40];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string report_csv(const ReportTable& t) {
    std::ostringstream os;
    os << "cycle";
    for (const auto& c : t.classes) os << ",iou_" << c;
    os << ",miou,samples_labeled\n";
    for (const auto& r : t.rows) {
        os << r.cycle;
        for (std::size_t c = 0; c < t.classes.size(); ++c) {
            os << ",";
            if (c < r.per_class_iou.size() && r.per_class_iou[c]) os << fmt(*r.per_class_iou[c]);
        }
        os << "," << fmt(r.miou) << "," << r.samples_labeled << "\n";
    }
    return os.str();
}

nlohmann::json report_json(const ReportTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) {
        nlohmann::json iou = nlohmann::json::object();
        for (std::size_t c = 0; c < t.classes.size(); ++c)
            iou[t.classes[c]] = c < r.per_class_iou.size() && r.per_class_iou[c] ? nlohmann::json(*r.per_class_iou[c])
                                                                                  : nlohmann::json(nullptr);
        rows.push_back({{"cycle", r.cycle}, {"iou", iou}, {"miou", r.miou}, {"samples_labeled", r.samples_labeled}});
    }
    return {{"schema", kSchemaVersion}, {"classes", t.classes}, {"rows", rows}};
}

// Percent values with two decimals, one row per cycle.
std::string report_md(const ReportTable& t) {
    std::ostringstream os;
    os << "| Cycle |";
    for (const auto& c : t.classes) os << " " << c << " |";
    os << " mIoU | Labeled |\n|---|";
    for (std::size_t c = 0; c < t.classes.size(); ++c) os << "---|";
    os << "---|---|\n";
    for (const auto& r : t.rows) {
        os << "| " << r.cycle << " |";
        for (std::size_t c = 0; c < t.classes.size(); ++c) {
            const bool has = c < r.per_class_iou.size() && r.per_class_iou[c];
            os << " " << (has ? fmt(100.0 * *r.per_class_iou[c], "%.2f") : std::string("-")) << " |";
        }
        os << " " << fmt(100.0 * r.miou, "%.2f") << " | " << r.samples_labeled << " |\n";
    }
    return os.str();
}

int report(const ReportArgs& a) {
    if (!fs::is_directory(a.run) || fs::is_empty(a.run)) return fail(no_run, "run directory " + a.run + " is missing or empty");
    ReportTable t;
    try {
        t = load_report(a.run);
    } catch (const Error& e) {
        if (e.code() == Errc::not_found) return fail(no_run, e.what());
        return fail(e.code() == Errc::schema_mismatch ? bad_schema : failure, e.what());
    }
    if (t.rows.empty()) return fail(no_run, "run directory " + a.run + " has no completed cycle");
    if (a.format == "csv")
        std::cout << report_csv(t);
    else if (a.format == "json")
        std::cout << report_json(t).dump(2) << "\n";
    else
        std::cout << report_md(t);
    return ok;
}

// ---- serve

struct ServeArgs {
    std::string run;
    std::string host = "127.0.0.1";
    int port = 8765;
    std::string cors = "*";
    double lease = 600.0;
};

int serve(const ServeArgs& a) {
    if (!fs::is_directory(a.run)) return fail(no_run, "no run directory " + a.run);
    sigset_t sigs;
    sigemptyset(&sigs);
    sigaddset(&sigs, SIGINT);
    sigaddset(&sigs, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

    ServiceOptions opt;
    opt.cors_origin = a.cors;
    opt.lease_seconds = a.lease;
    AnnotationService svc(a.run, opt);
    std::promise<int> bound;
    auto bound_port = bound.get_future();
    std::thread worker([&] {
        bool reported = false;
        const bool served = svc.listen(a.host, a.port, [&](int p) {
            reported = true;
            bound.set_value(p);
        });
        if (!served && !reported) bound.set_value(-1);
    });
    const int port = bound_port.get();
    if (port < 0) {
        worker.join();
        return fail(port_busy, "cannot bind " + a.host + ":" + std::to_string(a.port) + " (port in use?)");
    }
    write_service_marker(a.run, a.host, port);
    std::cout << "serving " << a.run << " on http://" << a.host << ":" << port << "\n" << std::flush;
    int sig = 0;
    sigwait(&sigs, &sig);
    svc.stop();
    worker.join();
    remove_service_marker(a.run);
    std::cout << "stopped\n";
    return ok;
}

// ---- ablate

struct AblateArgs {
    std::string config;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string sweep = "components";
    std::vector<double> fractions{0.1, 0.4};
    std::string format = "csv";
    std::string out;
};

int ablate(const AblateArgs& a) {
    RunConfig cfg;
    try {
        if (!a.config.empty()) cfg = run_config_from_json(read_json(a.config));
    } catch (const Error& e) {
        return fail(e.code() == Errc::schema_mismatch ? bad_schema : failure, e.what());
    }
    std::vector<AblationVariant> variants;
    if (a.sweep == "split") {
        for (double f : a.fractions)
            variants.push_back({"initial_" + std::to_string(static_cast<int>(std::lround(f * 100))),
                                {{"al", {{"initial_label_fraction", f}}}}});
    } else {
        variants = standard_ablation_variants();
    }
    auto [train, val] = load_run_data(cfg);
    if (int rc = check_depth(cfg, train); rc != ok) return rc;
    const auto rows = run_ablation(cfg, variants, a.seeds, train, val, [](const AblationRow& r) {
        std::fprintf(stderr, "%s seed %llu: final mIoU=%.4f\n", r.variant.c_str(),
                     static_cast<unsigned long long>(r.seed), r.final_miou);
    });
    const std::string text = a.format == "json" ? ablation_json(rows).dump(2) + "\n" : ablation_csv(rows);
    if (a.out.empty()) {
        std::cout << text;
        return ok;
    }
    try {
        write_file_atomic(a.out, text);
    } catch (const std::exception& e) {
        return fail(unwritable, e.what());
    }
    return ok;
}

// ---- check-depth

int check_depth_cmd(const RunArgs& a) {
    RunConfig cfg;
    try {
        cfg = run_config_from_json(read_json(a.config));
        if (!a.depth.empty()) cfg.depth = depth_source_from_string(a.depth);
        if (!a.depth_dir.empty()) cfg.depth_dir = a.depth_dir;
    } catch (const Error& e) {
        return fail(failure, e.what());
    }
    cfg.strategy = Strategy::segxal;
    auto [train, val] = load_run_data(cfg);
    if (int rc = check_depth(cfg, train); rc != ok) return rc;
    std::cout << "depth covers all " << train.size() << " training samples\n";
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segxal: explainable active learning for semantic segmentation"};
    app.require_subcommand(1);

    GenArgs g;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic street-scene dataset");
    gen->add_option("--out", g.out, "Output directory")->required();
    gen->add_option("--n", g.spec.count, "Number of samples")->required()->check(CLI::NonNegativeNumber);
    gen->add_option("--width", g.spec.width, "Image width");
    gen->add_option("--height", g.spec.height, "Image height");
    gen->add_option("--classes", g.spec.num_classes, "Number of classes");
    gen->add_option("--seed", g.spec.seed, "Generator seed");
    gen->add_option("--max-objects", g.spec.max_objects, "Most objects per scene");
    gen->add_option("--prefix", g.spec.id_prefix, "Sample id prefix");

    RunArgs r;
    auto* run_cmd = app.add_subcommand("run", "Run an active-learning experiment");
    run_cmd->add_option("--config", r.config, "JSON run config");
    run_cmd->add_option("--strategy", r.strategy, "segxal | random | entropy")
        ->check(CLI::IsMember({"segxal", "random", "entropy", "entropy_only"}));
    run_cmd->add_option("--oracle", r.oracle, "machine | human")->check(CLI::IsMember({"machine", "human"}));
    run_cmd->add_option("--depth", r.depth, "synthetic | midas_files | dinov2_files")
        ->check(CLI::IsMember({"synthetic", "midas_files", "dinov2_files"}));
    run_cmd->add_option("--depth-dir", r.depth_dir, "Directory of <id>.depth.png files");
    run_cmd->add_option("--resume", r.resume, "Continue the run in this directory");
    run_cmd->add_option("--name", r.name, "Run name (directory under $SEGXAL_RUN_ROOT)");
    run_cmd->add_option("--cycles", r.cycles, "Number of AL cycles");
    run_cmd->add_option("--seed", r.seed, "AL seed");

    ReportArgs rep;
    auto* rep_cmd = app.add_subcommand("report", "Per-cycle IoU table of a run");
    rep_cmd->add_option("--run", rep.run, "Run directory")->required();
    rep_cmd->add_option("--format", rep.format, "csv | json | md")->check(CLI::IsMember({"csv", "json", "md"}));

    ServeArgs s;
    auto* serve_cmd = app.add_subcommand("serve", "Serve the annotation queue of a run over HTTP");
    serve_cmd->add_option("--run", s.run, "Run directory")->required();
    serve_cmd->add_option("--port", s.port, "TCP port (0 picks one)");
    serve_cmd->add_option("--host", s.host, "Bind address");
    serve_cmd->add_option("--cors-origin", s.cors, "Access-Control-Allow-Origin value");
    serve_cmd->add_option("--lease-seconds", s.lease, "Claim lease length");

    AblateArgs ab;
    auto* ab_cmd = app.add_subcommand("ablate", "EEM component ablation or initial-split sweep");
    ab_cmd->add_option("--config", ab.config, "JSON run config (defaults when omitted)");
    ab_cmd->add_option("--seeds", ab.seeds, "Seeds")->delimiter(',');
    ab_cmd->add_option("--sweep", ab.sweep, "components | split")->check(CLI::IsMember({"components", "split"}));
    ab_cmd->add_option("--fractions", ab.fractions, "Initial label fractions for the split sweep")->delimiter(',');
    ab_cmd->add_option("--format", ab.format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
    ab_cmd->add_option("--out", ab.out, "Output file (stdout when omitted)");

    RunArgs cd;
    auto* cd_cmd = app.add_subcommand("check-depth", "Check that a depth directory covers the training set");
    cd_cmd->add_option("--config", cd.config, "JSON run config")->required();
    cd_cmd->add_option("--depth", cd.depth, "midas_files | dinov2_files");
    cd_cmd->add_option("--depth-dir", cd.depth_dir, "Directory of <id>.depth.png files");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return gen_data(g);
        if (*run_cmd) return run(r);
        if (*rep_cmd) return report(rep);
        if (*serve_cmd) return serve(s);
        if (*ab_cmd) return ablate(ab);
        if (*cd_cmd) return check_depth_cmd(cd);
    } catch (const std::exception& e) {
        return fail(failure, e.what());
    }
    return failure;
}
