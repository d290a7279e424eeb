#include "segxal/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <thread>

#include "segxal/dataset.hpp"
#include "segxal/entropy.hpp"
#include "segxal/png_io.hpp"
#include "segxal/queue.hpp"
#include "segxal/rng.hpp"
#include "segxal/serialize.hpp"

namespace segxal {

namespace fs = std::filesystem;

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::segxal: return "segxal";
        case Strategy::random: return "random";
        case Strategy::entropy_only: return "entropy";
    }
    return "?";
}

std::string_view to_string(OracleKind k) { return k == OracleKind::human ? "human" : "machine"; }

Strategy strategy_from_string(std::string_view s) {
    if (s == "segxal") return Strategy::segxal;
    if (s == "random") return Strategy::random;
    if (s == "entropy" || s == "entropy_only") return Strategy::entropy_only;
    throw Error(Errc::precondition, "unknown strategy '" + std::string(s) + "'");
}

OracleKind oracle_kind_from_string(std::string_view s) {
    if (s == "machine") return OracleKind::machine;
    if (s == "human") return OracleKind::human;
    throw Error(Errc::precondition, "unknown oracle '" + std::string(s) + "'");
}

namespace {

std::string depth_variant_name(DepthSource d) {
    switch (d) {
        case DepthSource::file_midas: return "midas_files";
        case DepthSource::file_dinov2: return "dinov2_files";
        case DepthSource::synthetic: return "synthetic";
    }
    return "?";
}

}  // namespace

std::vector<std::string> RunConfig::violations() const {
    auto v = al.violations();
    for (auto& m : model.violations()) v.push_back("model: " + m);
    if (depth != DepthSource::synthetic && depth_dir.empty()) v.push_back("depth_dir required for file depth");
    if (!(candidates.percentile > 0 && candidates.percentile < 100)) v.push_back("candidates.percentile must lie in (0,100)");
    if (candidates.max_regions < 1) v.push_back("candidates.max_regions must be >= 1");
    if (candidates.min_region_px < 1) v.push_back("candidates.min_region_px must be >= 1");
    if (initial_epochs < 0) v.push_back("initial_epochs must be >= 0");
    if (data.kind != "synthetic" && data.kind != "synthetic_dir" && data.kind != "cityscapes")
        v.push_back("data.kind must be synthetic, synthetic_dir or cityscapes");
    return v;
}

nlohmann::json to_json(const RunConfig& c) {
    return {{"schema", kSchemaVersion},
            {"name", c.name},
            {"al", to_json(c.al)},
            {"model", to_json(c.model)},
            {"strategy", to_string(c.strategy)},
            {"oracle", to_string(c.oracle)},
            {"machine_mode", to_string(c.machine_mode)},
            {"depth", depth_variant_name(c.depth)},
            {"depth_dir", c.depth_dir},
            {"candidates",
             {{"percentile", c.candidates.percentile},
              {"max_regions", c.candidates.max_regions},
              {"min_region_px", c.candidates.min_region_px}}},
            {"pae",
             {{"hard_mask", c.pae.hard_mask},
              {"min_area_fraction", c.pae.min_area_fraction},
              {"halo_px", c.pae.halo_px},
              {"layer", c.pae.gradcam.layer},
              {"classes", c.pae.classes},
              {"z_mode", to_string(c.pae.gradcam.z_mode)}}},
            {"inverted_selection", c.inverted_selection},
            {"initial_epochs", c.initial_epochs},
            {"export_assets", c.export_assets},
            {"human_poll_seconds", c.human_poll_seconds},
            {"human_timeout_seconds", c.human_timeout_seconds},
            {"data",
             {{"kind", c.data.kind},
              {"train_count", c.data.train_count},
              {"val_count", c.data.val_count},
              {"seed", c.data.seed},
              {"max_objects", c.data.max_objects},
              {"train_dir", c.data.train_dir},
              {"val_dir", c.data.val_dir},
              {"cityscapes_root", c.data.cityscapes_root}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base) {
    if (j.contains("schema") && j["schema"] != kSchemaVersion)
        throw Error(Errc::schema_mismatch, "config schema is not " + std::string(kSchemaVersion));
    RunConfig c = base;
    try {
        c.name = j.value("name", c.name);
        if (j.contains("al")) c.al = al_config_from_json(j["al"], c.al);
        if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
        if (j.contains("strategy")) c.strategy = strategy_from_string(j["strategy"].get<std::string>());
        if (j.contains("oracle")) c.oracle = oracle_kind_from_string(j["oracle"].get<std::string>());
        if (j.contains("machine_mode"))
            c.machine_mode = machine_oracle_mode_from_string(j["machine_mode"].get<std::string>());
        if (j.contains("depth")) c.depth = depth_source_from_string(j["depth"].get<std::string>());
        c.depth_dir = j.value("depth_dir", c.depth_dir);
        if (j.contains("candidates")) {
            const auto& k = j["candidates"];
            c.candidates.percentile = k.value("percentile", c.candidates.percentile);
            c.candidates.max_regions = k.value("max_regions", c.candidates.max_regions);
            c.candidates.min_region_px = k.value("min_region_px", c.candidates.min_region_px);
        }
        if (j.contains("pae")) {
            const auto& k = j["pae"];
            c.pae.hard_mask = k.value("hard_mask", c.pae.hard_mask);
            c.pae.min_area_fraction = k.value("min_area_fraction", c.pae.min_area_fraction);
            c.pae.halo_px = k.value("halo_px", c.pae.halo_px);
            c.pae.gradcam.layer = k.value("layer", c.pae.gradcam.layer);
            c.pae.classes = k.value("classes", c.pae.classes);
            if (k.contains("z_mode")) c.pae.gradcam.z_mode = z_mode_from_string(k["z_mode"].get<std::string>());
        }
        c.inverted_selection = j.value("inverted_selection", c.inverted_selection);
        c.initial_epochs = j.value("initial_epochs", c.initial_epochs);
        c.export_assets = j.value("export_assets", c.export_assets);
        c.human_poll_seconds = j.value("human_poll_seconds", c.human_poll_seconds);
        c.human_timeout_seconds = j.value("human_timeout_seconds", c.human_timeout_seconds);
        if (j.contains("data")) {
            const auto& d = j["data"];
            c.data.kind = d.value("kind", c.data.kind);
            c.data.train_count = d.value("train_count", c.data.train_count);
            c.data.val_count = d.value("val_count", c.data.val_count);
            c.data.seed = d.value("seed", c.data.seed);
            c.data.max_objects = d.value("max_objects", c.data.max_objects);
            c.data.train_dir = d.value("train_dir", c.data.train_dir);
            c.data.val_dir = d.value("val_dir", c.data.val_dir);
            c.data.cityscapes_root = d.value("cityscapes_root", c.data.cityscapes_root);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::precondition, std::string("config: ") + e.what());
    }
    return c;
}

std::vector<std::string> class_names(const RunConfig& cfg) {
    static const char* const cityscapes[19] = {"road",   "sidewalk",      "building",     "wall",       "fence",
                                               "pole",   "traffic_light", "traffic_sign", "vegetation", "terrain",
                                               "sky",    "person",        "rider",        "car",        "truck",
                                               "bus",    "train",         "motorcycle",   "bicycle"};
    std::vector<std::string> out;
    for (int c = 0; c < cfg.model.num_classes; ++c) {
        if (cfg.data.kind == "cityscapes" && c < 19)
            out.emplace_back(cityscapes[c]);
        else if (cfg.data.kind != "cityscapes" && c < 2)
            out.emplace_back(c == 0 ? "background" : "road");
        else
            out.push_back("object_" + std::to_string(c));
    }
    return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> load_run_data(const RunConfig& cfg) {
    const auto& d = cfg.data;
    std::vector<Sample> train, val;
    if (d.kind == "synthetic") {
        SyntheticDatasetSpec spec;
        spec.width = cfg.model.width;
        spec.height = cfg.model.height;
        spec.num_classes = cfg.model.num_classes;
        spec.max_objects = d.max_objects;
        spec.count = d.train_count;
        spec.seed = d.seed;
        spec.id_prefix = "train";
        for (auto& s : generate_dataset(spec)) train.push_back(std::move(s.sample));
        spec.count = d.val_count;
        spec.seed = Rng::mix(d.seed + 0x7a1);
        spec.id_prefix = "val";
        for (auto& s : generate_dataset(spec)) val.push_back(std::move(s.sample));
    } else if (d.kind == "synthetic_dir") {
        train = load_synthetic_dir(d.train_dir);
        val = load_synthetic_dir(d.val_dir);
    } else if (d.kind == "cityscapes") {
        CityscapesOptions o{cfg.model.height, cfg.model.width};
        train = load_cityscapes_dir(d.cityscapes_root, Split::train, o);
        val = load_cityscapes_dir(d.cityscapes_root, Split::val, o);
    } else {
        throw Error(Errc::precondition, "unknown data kind '" + d.kind + "'");
    }
    for (auto* set : {&train, &val})
        for (const auto& s : *set)
            if (s.image.height != cfg.model.height || s.image.width != cfg.model.width)
                throw Error(Errc::shape_mismatch, "sample " + s.id() + " does not match the model input size");
    return {std::move(train), std::move(val)};
}

nlohmann::json to_json(const ALState& s) {
    nlohmann::json metrics = nlohmann::json::array();
    for (const auto& m : s.per_cycle_metrics) metrics.push_back(to_json(m, true));
    return {{"schema", kSchemaVersion},
            {"cycle", s.cycle},
            {"num_cycles", s.num_cycles},
            {"pool", pool_to_json(s.pool)},
            {"checkpoint", s.checkpoint},
            {"initial_metrics", s.initial_metrics ? to_json(*s.initial_metrics, true) : nlohmann::json(nullptr)},
            {"per_cycle_metrics", metrics},
            {"strategy", to_string(s.strategy)},
            {"oracle", to_string(s.oracle)},
            {"depth_variant", depth_variant_name(s.depth)},
            {"queried", s.queried},
            {"phase", s.phase},
            {"stop_reason", s.stop_reason},
            {"corrected_labels", s.corrected_labels}};
}

ALState al_state_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("schema", std::string{}) != kSchemaVersion)
        throw Error(Errc::schema_mismatch, "run state schema is not " + std::string(kSchemaVersion));
    ALState s;
    try {
        s.cycle = j.at("cycle").get<int>();
        s.num_cycles = j.at("num_cycles").get<int>();
        s.pool = pool_from_json(j.at("pool"));
        s.checkpoint = j.at("checkpoint").get<std::string>();
        if (!j.at("initial_metrics").is_null()) s.initial_metrics = metrics_from_json(j["initial_metrics"]);
        for (const auto& m : j.at("per_cycle_metrics")) s.per_cycle_metrics.push_back(metrics_from_json(m));
        s.strategy = strategy_from_string(j.at("strategy").get<std::string>());
        s.oracle = oracle_kind_from_string(j.at("oracle").get<std::string>());
        s.depth = depth_source_from_string(j.at("depth_variant").get<std::string>());
        s.queried = j.at("queried").get<int>();
        s.phase = j.at("phase").get<std::string>();
        s.stop_reason = j.value("stop_reason", "");
        s.corrected_labels = j.value("corrected_labels", std::map<std::string, std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::schema_mismatch, std::string("run state: ") + e.what());
    }
    return s;
}

namespace {

ModelConfig seeded_model(const RunConfig& cfg) {
    ModelConfig m = cfg.model;
    m.seed = cfg.al.seed;
    return m;
}

DepthProvider make_provider(const RunConfig& cfg) {
    if (cfg.depth == DepthSource::synthetic) return DepthProvider::synthetic_gt();
    return DepthProvider::from_directory(cfg.depth, cfg.depth_dir);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

nlohmann::json palette_json(int num_classes) {
    nlohmann::json classes = nlohmann::json::array();
    for (int c = 0; c < num_classes; ++c) {
        const Rgb k = class_color(static_cast<std::uint8_t>(c));
        classes.push_back({{"id", c}, {"rgb", {k[0], k[1], k[2]}}});
    }
    const Rgb ig = class_color(kIgnoreLabel);
    nlohmann::json lut = nlohmann::json::array();
    for (const auto& k : heat_colormap()) lut.push_back({k[0], k[1], k[2]});
    return {{"schema", kSchemaVersion},
            {"classes", classes},
            {"ignore", {{"id", kIgnoreLabel}, {"rgb", {ig[0], ig[1], ig[2]}}}},
            {"heat_colormap", lut}};
}

}  // namespace

Orchestrator::Orchestrator(RunConfig cfg, std::vector<Sample> train, std::vector<Sample> val, std::string run_dir)
    : cfg_(std::move(cfg)), train_(std::move(train)), val_(std::move(val)), dir_(std::move(run_dir)),
      model_(seeded_model(cfg_)), depth_(make_provider(cfg_)) {
    const auto bad = cfg_.violations();
    if (!bad.empty()) throw Error(Errc::precondition, "invalid run config: " + bad.front());
    for (std::size_t i = 0; i < train_.size(); ++i) {
        if (!index_.emplace(train_[i].id(), i).second)
            throw Error(Errc::precondition, "duplicate sample id " + train_[i].id());
    }
    if (cfg_.strategy == Strategy::segxal) {
        const auto missing = depth_.missing(train_);
        if (!missing.empty())
            throw Error(Errc::not_found, "depth provider misses " + std::to_string(missing.size()) +
                                             " samples, first " + missing.front());
    }
    state_.num_cycles = cfg_.al.num_cycles;
    state_.strategy = cfg_.strategy;
    state_.oracle = cfg_.oracle;
    state_.depth = cfg_.depth;
}

Orchestrator Orchestrator::resume(const std::string& run_dir, std::vector<Sample> train, std::vector<Sample> val,
                                  const RunConfig* overrides) {
    const fs::path state_path = fs::path(run_dir) / "state.json";
    const fs::path config_path = fs::path(run_dir) / "config.json";
    if (!fs::exists(state_path) || !fs::exists(config_path))
        throw Error(Errc::not_found, "no run state in " + run_dir);
    nlohmann::json sj, cj;
    try {
        sj = nlohmann::json::parse(read_file(state_path.string()));
        cj = nlohmann::json::parse(read_file(config_path.string()));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::schema_mismatch, std::string("unreadable run state: ") + e.what());
    }
    ALState st = al_state_from_json(sj);
    RunConfig cfg = run_config_from_json(cj);
    if (overrides) {
        // Only knobs that do not change what has already happened may be overridden.
        cfg.al.num_cycles = overrides->al.num_cycles;
        cfg.al.budget_n = overrides->al.budget_n;
        cfg.human_poll_seconds = overrides->human_poll_seconds;
        cfg.human_timeout_seconds = overrides->human_timeout_seconds;
    }
    Orchestrator o(cfg, std::move(train), std::move(val), run_dir);
    st.num_cycles = cfg.al.num_cycles;
    if (!st.checkpoint.empty()) o.model_ = SegModel::load(o.path(st.checkpoint));
    for (const auto& [id, rel] : st.corrected_labels) {
        const Sample& s = o.sample(id);
        o.corrected_[id] = load_label_png(o.path(rel), s.gt ? s.gt->num_classes : cfg.model.num_classes);
    }
    for (const auto& id : {st.pool.labeled, st.pool.unlabeled, st.pool.candidate})
        for (const auto& x : id) o.sample(x);
    if (st.pool.total() != 0 && st.pool.total() != o.train_.size())
        throw Error(Errc::schema_mismatch, "run state pool does not match the training data");
    if (st.phase == "finished" && st.cycle < st.num_cycles) st.phase = "ready";
    o.state_ = std::move(st);
    return o;
}

std::string Orchestrator::path(const std::string& rel) const { return (fs::path(dir_) / rel).string(); }

const Sample& Orchestrator::sample(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(Errc::not_found, "unknown sample " + id);
    return train_[it->second];
}

const LabelMask& Orchestrator::training_label(const std::string& id) const {
    if (auto it = corrected_.find(id); it != corrected_.end()) return it->second;
    const Sample& s = sample(id);
    if (!s.gt) throw Error(Errc::missing_gt, "labeled sample " + id + " has no label");
    return *s.gt;
}

void Orchestrator::save_state() const {
    if (dir_.empty()) return;
    write_file_atomic(path("state.json"), to_json(state_).dump(2) + "\n");
}

void Orchestrator::train_round(int epochs) {
    std::vector<const Image*> images;
    std::vector<const LabelMask*> labels;
    for (const auto& id : state_.pool.labeled) {
        images.push_back(&sample(id).image);
        labels.push_back(&training_label(id));
    }
    model_.train(images, labels, epochs);
}

MetricsReport Orchestrator::evaluate() const {
    std::vector<const Sample*> eval;
    for (const auto& s : val_) eval.push_back(&s);
    MetricsReport m = compute_metrics(model_, eval);
    m.samples_labeled = static_cast<int>(state_.pool.labeled.size());
    return m;
}

void Orchestrator::persist_cycle(int cycle, const MetricsReport& m, const std::vector<SelectionDecision>& decisions) {
    if (dir_.empty()) return;
    const std::string rel = "cycle_" + std::to_string(cycle);
    fs::create_directories(path(rel));
    model_.save(path(rel + "/checkpoint.bin"));
    write_file_atomic(path(rel + "/metrics.json"), to_json(m).dump(2) + "\n");
    std::string lines;
    for (const auto& d : decisions) lines += to_json(d).dump() + "\n";
    write_file_atomic(path(rel + "/decisions.jsonl"), lines);
    state_.checkpoint = rel + "/checkpoint.bin";
}

void Orchestrator::prepare() {
    if (dir_.empty() || state_.phase != "new") return;
    fs::create_directories(dir_);
    write_file_atomic(path("config.json"), to_json(cfg_).dump(2) + "\n");
    write_file_atomic(path("palette.json"), palette_json(cfg_.model.num_classes).dump(2) + "\n");
    save_state();
}

void Orchestrator::initialize() {
    if (state_.phase != "new") return;
    prepare();
    std::vector<std::string> ids;
    for (const auto& s : train_) ids.push_back(s.id());
    state_.pool = initial_split(ids, cfg_.al, cfg_.al.seed);
    require(!state_.pool.labeled.empty(), Errc::precondition, "initial labeled pool is empty");
    const auto start = std::chrono::steady_clock::now();
    train_round(cfg_.initial_epochs > 0 ? cfg_.initial_epochs : cfg_.model.epochs_per_cycle);
    MetricsReport m = evaluate();
    m.cycle = 0;
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    persist_cycle(0, m, {});
    state_.initial_metrics = m;
    state_.phase = "ready";
    save_state();
}

int Orchestrator::per_cycle_queries(std::size_t available) const {
    const auto n = static_cast<int>(std::lround(cfg_.al.query_fraction_per_cycle * static_cast<double>(train_.size())));
    int q = std::max(1, n);
    if (cfg_.al.budget_n > 0) q = std::min(q, cfg_.al.budget_n - state_.queried);
    return std::max(0, std::min(q, static_cast<int>(available)));
}

bool Orchestrator::finished() {
    if (state_.phase == "awaiting_oracle") return false;
    std::string why;
    if (state_.cycle >= state_.num_cycles)
        why = "cycles";
    else if (cfg_.al.budget_n > 0 && state_.queried >= cfg_.al.budget_n)
        why = "budget";
    else if (state_.pool.unlabeled.empty())
        why = "unlabeled_exhausted";
    if (why.empty()) return false;
    if (state_.phase != "finished" || state_.stop_reason != why) {
        state_.phase = "finished";
        state_.stop_reason = why;
        save_state();
    }
    return true;
}

std::vector<std::string> Orchestrator::draw_candidates(int count) {
    std::vector<std::string> pool(state_.pool.unlabeled.begin(), state_.pool.unlabeled.end());
    Rng rng = Rng::derive(cfg_.al.seed, 0xd5, static_cast<std::uint64_t>(state_.cycle + 1));
    rng.shuffle(pool);
    pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(count)));
    return pool;
}

Orchestrator::Scored Orchestrator::score_segxal(const Sample& s) const {
    Scored out;
    out.id = s.id();
    out.probs = model_.predict_probs(s.image);
    const EntropyResult ent = entropy_map(out.probs);
    ProxGradCamOptions opt = cfg_.pae;
    opt.tau_quantile = cfg_.al.depth_quantile_tau;
    out.pae = prox_gradcam(model_, s, depth_, opt);
    out.eem = fuse(out.pae.map, ent.map, cfg_.al.fusion_alpha, cfg_.al.fusion_beta);
    out.prompts = extract_candidates(out.eem, s.id(), cfg_.candidates);
    out.score = mean_of(out.eem.map.values);
    return out;
}

namespace {

void write_prompts(const std::string& file, const std::vector<CandidatePrompt>& prompts) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : prompts) arr.push_back(to_json(p));
    write_file_atomic(file, arr.dump(2) + "\n");
}

}  // namespace

std::vector<AnnotationRecord> Orchestrator::human_annotate(int cycle, const std::vector<Scored*>& picked,
                                                           bool& suspended) {
    require(!dir_.empty(), Errc::precondition, "the human oracle needs a run directory");
    TicketQueue queue(dir_);
    const std::string rel = "cycle_" + std::to_string(cycle) + "/assets";
    const auto existing = queue.list();
    auto find = [&](const std::string& tid) -> const Ticket* {
        for (const auto& t : existing)
            if (t.ticket_id == tid) return &t;
        return nullptr;
    };
    for (Scored* sc : picked) {
        const std::string tid = ticket_id_for(cycle, sc->id);
        if (find(tid)) continue;
        const Sample& s = sample(sc->id);
        const std::string base = rel + "/" + sc->id;
        fs::create_directories(path(base));
        save_image_png(path(base + "/raw.png"), s.image);
        save_label_png(path(base + "/initial_seg.png"), sc->probs.argmax());
        save_heatmap_png(path(base + "/eem.png"), sc->eem.map);
        auto side = eem_sidecar(sc->eem, cfg_.candidates, sc->prompts);
        side["sample_id"] = sc->id;
        write_file_atomic(path(base + "/prompts.json"), side.dump(2) + "\n");
        std::map<std::string, std::string> refs = {{"raw", base + "/raw.png"},
                                                   {"initial_seg", base + "/initial_seg.png"},
                                                   {"eem", base + "/eem.png"},
                                                   {"prompts", base + "/prompts.json"},
                                                   {"palette", "palette.json"}};
        queue.enqueue(sc->id, cycle, sc->prompts.empty() ? 0.0 : sc->prompts.front().score, refs);
    }
    state_.phase = "awaiting_oracle";
    save_state();

    const auto start = std::chrono::steady_clock::now();
    while (true) {
        queue.expire_leases();
        std::map<std::string, Ticket> mine;
        for (const auto& t : queue.list())
            if (t.cycle == cycle) mine[t.sample_id] = t;
        bool all = true;
        for (Scored* sc : picked) {
            const auto it = mine.find(sc->id);
            if (it == mine.end() ||
                (it->second.status != TicketStatus::submitted && it->second.status != TicketStatus::resolved))
                all = false;
        }
        if (all) break;
        const double waited = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (cfg_.human_timeout_seconds > 0 && waited >= cfg_.human_timeout_seconds) {
            suspended = true;
            return {};
        }
        std::this_thread::sleep_for(std::chrono::duration<double>(cfg_.human_poll_seconds));
    }
    std::vector<AnnotationRecord> out;
    for (Scored* sc : picked) {
        const std::string tid = ticket_id_for(cycle, sc->id);
        Ticket t = *queue.get(tid);
        out.push_back(queue.load_record(t));
        if (t.status == TicketStatus::submitted) queue.resolve(tid);
    }
    return out;
}

CycleOutcome Orchestrator::run_cycle() {
    require(state_.phase != "new", Errc::precondition, "initialize() before run_cycle()");
    require(state_.cycle < state_.num_cycles, Errc::precondition, "all cycles completed");
    require(!state_.pool.labeled.empty(), Errc::precondition, "labeled pool is empty");
    if (cfg_.al.budget_n > 0 && state_.queried >= cfg_.al.budget_n)
        throw Error(Errc::budget_exhausted, "labelling budget of " + std::to_string(cfg_.al.budget_n) + " reached");

    const auto start = std::chrono::steady_clock::now();
    const std::size_t total_before = state_.pool.total();
    CycleOutcome out;
    out.cycle = state_.cycle + 1;
    const std::string rel = "cycle_" + std::to_string(out.cycle);

    // Steps 1-2: the model is frozen until retraining; draw D^S, or pick it up again after a suspension.
    const bool resuming = state_.phase == "awaiting_oracle";
    // After a suspension D^S sits in the candidate pool; the query count is the one computed before the draw.
    const int n = per_cycle_queries(state_.pool.unlabeled.size() + (resuming ? state_.pool.candidate.size() : 0));
    if (!resuming) {
        require(n > 0, Errc::budget_exhausted, "nothing left to query");
        const int draw = cfg_.strategy == Strategy::random
                             ? n
                             : static_cast<int>(std::ceil(cfg_.al.subset_multiplier * n - 1e-9));
        out.candidates = draw_candidates(draw);
        for (const auto& id : out.candidates) state_.pool.move(id, PoolTag::unlabeled, PoolTag::candidate);
    } else {
        out.candidates.assign(state_.pool.candidate.begin(), state_.pool.candidate.end());
    }

    std::vector<SelectionDecision> decisions;
    if (cfg_.strategy == Strategy::segxal) {
        // Step 3: score every candidate; ids are processed in sorted order for determinism.
        std::vector<std::string> ids(out.candidates);
        std::sort(ids.begin(), ids.end());
        std::vector<Scored> scored;
        for (const auto& id : ids) scored.push_back(score_segxal(sample(id)));
        std::vector<Scored*> order;
        for (auto& s : scored) order.push_back(&s);
        std::stable_sort(order.begin(), order.end(), [](const Scored* a, const Scored* b) { return a->score > b->score; });
        std::vector<Scored*> picked;
        for (Scored* s : order) {
            if (static_cast<int>(picked.size()) >= n) break;
            if (!s->prompts.empty()) picked.push_back(s);
        }
        if (!dir_.empty() && cfg_.export_assets) {
            fs::create_directories(path(rel + "/eem"));
            fs::create_directories(path(rel + "/prompts"));
            for (const auto& s : scored) {
                save_heatmap_png(path(rel + "/eem/" + s.id + ".png"), s.eem.map);
                auto side = eem_sidecar(s.eem, cfg_.candidates, s.prompts);
                side["sample_id"] = s.id;
                side["score"] = s.score;
                write_file_atomic(path(rel + "/eem/" + s.id + ".json"), side.dump(2) + "\n");
                write_prompts(path(rel + "/prompts/" + s.id + ".json"), s.prompts);
            }
        }

        // Step 4: oracle.
        std::vector<AnnotationRecord> records;
        if (cfg_.oracle == OracleKind::machine) {
            for (Scored* s : picked)
                records.push_back(machine_annotate(sample(s->id), s->prompts, s->probs.argmax(), cfg_.machine_mode));
        } else {
            bool suspended = false;
            records = human_annotate(out.cycle, picked, suspended);
            if (suspended) {
                out.suspended = true;
                return out;
            }
        }

        // Step 5: DICE gate.
        std::vector<LabelMask> preds;
        preds.reserve(picked.size());
        for (Scored* s : picked) preds.push_back(s->probs.argmax());
        std::vector<SelectionInput> inputs;
        for (std::size_t i = 0; i < picked.size(); ++i) {
            inputs.push_back({picked[i]->id, &preds[i], &records[i]});
            out.queried.push_back(picked[i]->id);
        }
        decisions = select(inputs, cfg_.al.dice_threshold_theta, state_.pool, out.cycle, cfg_.inverted_selection);
        for (std::size_t i = 0; i < decisions.size(); ++i) {
            if (!decisions[i].accepted) continue;
            const std::string& id = decisions[i].sample_id;
            corrected_[id] = records[i].corrected;
            std::string label_rel;
            if (!dir_.empty()) {
                label_rel = rel + "/labels/" + id + ".png";
                fs::create_directories(path(rel + "/labels"));
                save_label_png(path(label_rel), records[i].corrected);
            }
            state_.corrected_labels[id] = label_rel;
        }
    } else {
        // Baselines label the chosen samples fully with their ground truth.
        std::vector<std::string> chosen = out.candidates;
        if (cfg_.strategy == Strategy::entropy_only) {
            std::vector<std::pair<double, std::string>> ranked;
            std::vector<std::string> ids(out.candidates);
            std::sort(ids.begin(), ids.end());
            for (const auto& id : ids) ranked.emplace_back(entropy_map(model_.predict_probs(sample(id).image)).stats.mean, id);
            std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
            chosen.clear();
            for (int i = 0; i < n && i < static_cast<int>(ranked.size()); ++i) chosen.push_back(ranked[i].second);
        }
        for (const auto& id : chosen) {
            if (!sample(id).gt) throw Error(Errc::missing_gt, "baseline strategies need gt for " + id);
            state_.pool.move(id, PoolTag::candidate, PoolTag::labeled);
            out.queried.push_back(id);
        }
        const std::vector<std::string> rest(state_.pool.candidate.begin(), state_.pool.candidate.end());
        for (const auto& id : rest) state_.pool.move(id, PoolTag::candidate, PoolTag::unlabeled);
    }
    state_.queried += static_cast<int>(out.queried.size());
    if (state_.pool.total() != total_before || !state_.pool.audit().empty())
        throw Error(Errc::precondition, "pool conservation violated in cycle " + std::to_string(out.cycle));

    // Steps 6-7: warm-start retraining, then evaluation.
    train_round(cfg_.model.epochs_per_cycle);
    MetricsReport m = evaluate();
    m.cycle = out.cycle;
    std::vector<double> dices;
    int accepted = 0;
    for (const auto& d : decisions) {
        dices.push_back(d.dice);
        accepted += d.accepted;
    }
    m.dice = summarize_dice(dices, accepted);
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.metrics = m;
    out.decisions = decisions;
    state_.cycle = out.cycle;
    state_.per_cycle_metrics.push_back(m);
    state_.phase = "ready";
    persist_cycle(out.cycle, m, decisions);
    save_state();
    return out;
}

bool Orchestrator::run(const std::function<void(const CycleOutcome&)>& on_cycle) {
    initialize();
    while (!finished()) {
        CycleOutcome o = run_cycle();
        if (o.suspended) return false;
        if (on_cycle) on_cycle(o);
    }
    return true;
}

std::vector<AblationVariant> standard_ablation_variants() {
    return {{"with_eem", nlohmann::json::object()},
            {"without_pae", {{"al", {{"fusion_alpha", 0.0}, {"fusion_beta", 0.5}}}}},
            {"without_ebu", {{"al", {{"fusion_alpha", 0.5}, {"fusion_beta", 0.0}}}}}};
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds, const std::vector<Sample>& train,
                                      const std::vector<Sample>& val,
                                      const std::function<void(const AblationRow&)>& on_row) {
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        RunConfig cfg = run_config_from_json(v.overrides, base);
        const auto bad = cfg.violations();
        if (!bad.empty()) throw Error(Errc::precondition, "variant " + v.name + ": " + bad.front());
        for (std::uint64_t seed : seeds) {
            cfg.al.seed = seed;
            Orchestrator o(cfg, train, val);
            o.run();
            AblationRow row;
            row.variant = v.name;
            row.seed = seed;
            for (const auto& m : o.state().per_cycle_metrics) row.miou_per_cycle.push_back(m.miou);
            row.final_miou = row.miou_per_cycle.empty() ? o.state().initial_metrics->miou : row.miou_per_cycle.back();
            row.samples_labeled = static_cast<int>(o.state().pool.labeled.size());
            if (on_row) on_row(row);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::size_t cycles = 0;
    for (const auto& r : rows) cycles = std::max(cycles, r.miou_per_cycle.size());
    std::ostringstream os;
    os.precision(10);
    os << "variant,seed";
    for (std::size_t k = 1; k <= cycles; ++k) os << ",miou_cycle_" << k;
    os << ",final_miou,samples_labeled\n";
    for (const auto& r : rows) {
        os << r.variant << ',' << r.seed;
        for (std::size_t k = 0; k < cycles; ++k) {
            os << ',';
            if (k < r.miou_per_cycle.size()) os << r.miou_per_cycle[k];
        }
        os << ',' << r.final_miou << ',' << r.samples_labeled << '\n';
    }
    return os.str();
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows)
        arr.push_back({{"variant", r.variant},
                       {"seed", r.seed},
                       {"miou_per_cycle", r.miou_per_cycle},
                       {"final_miou", r.final_miou},
                       {"samples_labeled", r.samples_labeled}});
    return {{"schema", kSchemaVersion}, {"rows", arr}};
}

}  // namespace segxal
