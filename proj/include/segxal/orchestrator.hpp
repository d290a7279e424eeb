#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/eem.hpp"
#include "segxal/metrics.hpp"
#include "segxal/model.hpp"
#include "segxal/oracle.hpp"
#include "segxal/proximity.hpp"
#include "segxal/selection.hpp"
#include "segxal/types.hpp"

namespace segxal {

enum class Strategy { segxal, random, entropy_only };
enum class OracleKind { machine, human };

std::string_view to_string(Strategy s);
std::string_view to_string(OracleKind k);
Strategy strategy_from_string(std::string_view s);
OracleKind oracle_kind_from_string(std::string_view s);

/// Where the train/val samples come from.
struct DataConfig {
    std::string kind = "synthetic";  ///< synthetic | synthetic_dir | cityscapes
    int train_count = 200;
    int val_count = 50;
    std::uint64_t seed = 7;
    int max_objects = 4;
    std::string train_dir;
    std::string val_dir;
    std::string cityscapes_root;
};

struct RunConfig {
    std::string name = "run";
    ALConfig al;
    ModelConfig model = ModelConfig::desk_preset();
    Strategy strategy = Strategy::segxal;
    OracleKind oracle = OracleKind::machine;
    MachineOracleMode machine_mode = MachineOracleMode::ground_truth;
    DepthSource depth = DepthSource::synthetic;
    std::string depth_dir;
    CandidateOptions candidates;
    ProxGradCamOptions pae;  ///< tau_quantile is taken from al.depth_quantile_tau
    bool inverted_selection = false;
    int initial_epochs = 0;  ///< 0 uses model.epochs_per_cycle
    bool export_assets = true;
    double human_poll_seconds = 1.0;
    double human_timeout_seconds = 0.0;  ///< 0 waits indefinitely
    DataConfig data;

    std::vector<std::string> violations() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep the values of `base`.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base = {});

/// Display names of the classes: Cityscapes train ids for cityscapes data, generic names otherwise.
std::vector<std::string> class_names(const RunConfig& cfg);

/// Train and validation samples described by the data section, sized to the model input.
std::pair<std::vector<Sample>, std::vector<Sample>> load_run_data(const RunConfig& cfg);

struct ALState {
    int cycle = 0;
    int num_cycles = 0;
    SamplePool pool;
    std::string checkpoint;  ///< relative to the run dir
    std::optional<MetricsReport> initial_metrics;
    std::vector<MetricsReport> per_cycle_metrics;
    Strategy strategy = Strategy::segxal;
    OracleKind oracle = OracleKind::machine;
    DepthSource depth = DepthSource::synthetic;
    int queried = 0;
    std::string phase = "new";  ///< new | ready | awaiting_oracle | finished
    std::string stop_reason;
    /// Ids whose training label is an oracle-corrected mask, with its relative path (empty in memory-only runs).
    std::map<std::string, std::string> corrected_labels;

    bool operator==(const ALState&) const = default;
};

nlohmann::json to_json(const ALState& s);
/// Throws schema_mismatch for a foreign or older schema.
ALState al_state_from_json(const nlohmann::json& j);

struct CycleOutcome {
    int cycle = 0;
    MetricsReport metrics;
    std::vector<std::string> candidates;  ///< D^S in draw order
    std::vector<std::string> queried;     ///< samples sent to the oracle (or labeled outright)
    std::vector<SelectionDecision> decisions;
    bool suspended = false;  ///< human oracle did not finish in time; resume later
};

class Orchestrator {
public:
    /// `run_dir` empty keeps everything in memory.
    Orchestrator(RunConfig cfg, std::vector<Sample> train, std::vector<Sample> val, std::string run_dir = "");

    /// Reopens a run directory written earlier; samples must be the ones the run was started with.
    static Orchestrator resume(const std::string& run_dir, std::vector<Sample> train, std::vector<Sample> val,
                               const RunConfig* overrides = nullptr);

    /// Writes config.json, palette.json and a phase-"new" state.json without training.
    void prepare();

    /// Initial split, first training round and cycle-0 evaluation. No-op once done.
    void initialize();

    /// True once cycles, budget or the unlabeled pool are used up; sets stop_reason.
    bool finished();
    CycleOutcome run_cycle();
    /// Runs cycles until finished or suspended. Returns false when suspended.
    bool run(const std::function<void(const CycleOutcome&)>& on_cycle = {});

    const ALState& state() const { return state_; }
    const RunConfig& config() const { return cfg_; }
    const SegModel& model() const { return model_; }
    const std::string& run_dir() const { return dir_; }
    const Sample& sample(const std::string& id) const;
    /// Label the model trains on for a labeled sample.
    const LabelMask& training_label(const std::string& id) const;

    /// Per-candidate scoring used by the segxal strategy (also handy for inspection).
    struct Scored {
        std::string id;
        ProbMap probs;
        EEMask eem;
        ProxGradCamResult pae;
        std::vector<CandidatePrompt> prompts;
        double score = 0.0;
    };
    Scored score_segxal(const Sample& s) const;

private:
    void train_round(int epochs);
    MetricsReport evaluate() const;
    void persist_cycle(int cycle, const MetricsReport& m, const std::vector<SelectionDecision>& decisions);
    void save_state() const;
    std::string path(const std::string& rel) const;
    std::vector<std::string> draw_candidates(int count);
    int per_cycle_queries(std::size_t available) const;
    std::vector<AnnotationRecord> human_annotate(int cycle, const std::vector<Scored*>& picked, bool& suspended);

    RunConfig cfg_;
    std::vector<Sample> train_;
    std::vector<Sample> val_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, LabelMask> corrected_;
    std::string dir_;
    SegModel model_;
    DepthProvider depth_;
    ALState state_;
};

struct AblationVariant {
    std::string name;
    nlohmann::json overrides;  ///< applied on top of the base RunConfig
};

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    std::vector<double> miou_per_cycle;
    double final_miou = 0.0;
    int samples_labeled = 0;
};

/// with_eem, without_pae (alpha = 0) and without_ebu (beta = 0).
std::vector<AblationVariant> standard_ablation_variants();

/// One memory-only run per (variant, seed) on the same data.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds, const std::vector<Sample>& train,
                                      const std::vector<Sample>& val,
                                      const std::function<void(const AblationRow&)>& on_row = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows);

}  // namespace segxal
