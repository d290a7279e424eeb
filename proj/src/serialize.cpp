#include "segxal/serialize.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace segxal {

using nlohmann::json;

json pool_to_json(const SamplePool& pool) {
    return json{{"schema", kSchemaVersion},
                {"labeled", pool.labeled},
                {"unlabeled", pool.unlabeled},
                {"candidate", pool.candidate}};
}

SamplePool pool_from_json(const json& j) {
    if (!j.is_object()) throw CorruptInputError(0, "pool document is not an object");
    if (j.value("schema", std::string{}) != kSchemaVersion)
        throw Error(Errc::schema_mismatch, "expected schema " + std::string(kSchemaVersion));
    SamplePool pool;
    try {
        pool.labeled = j.at("labeled").get<std::set<std::string>>();
        pool.unlabeled = j.at("unlabeled").get<std::set<std::string>>();
        pool.candidate = j.at("candidate").get<std::set<std::string>>();
    } catch (const json::exception& e) {
        throw CorruptInputError(0, std::string("pool document: ") + e.what());
    }
    if (auto problems = pool.audit(); !problems.empty())
        throw CorruptInputError(0, "pool document violates disjointness: " + problems.front());
    return pool;
}

Bytes serialize_pool(const SamplePool& pool) {
    const std::string s = pool_to_json(pool).dump();
    return Bytes(s.begin(), s.end());
}

SamplePool deserialize_pool(const Bytes& bytes) {
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        throw CorruptInputError(e.byte, "malformed pool document");
    }
    return pool_from_json(j);
}

json to_json(const ALConfig& c) {
    return json{{"initial_label_fraction", c.initial_label_fraction},
                {"query_fraction_per_cycle", c.query_fraction_per_cycle},
                {"subset_multiplier", c.subset_multiplier},
                {"num_cycles", c.num_cycles},
                {"budget_n", c.budget_n},
                {"fusion_alpha", c.fusion_alpha},
                {"fusion_beta", c.fusion_beta},
                {"dice_threshold_theta", c.dice_threshold_theta},
                {"depth_quantile_tau", c.depth_quantile_tau},
                {"seed", c.seed}};
}

ALConfig al_config_from_json(const json& j, ALConfig c) {
    c.initial_label_fraction = j.value("initial_label_fraction", c.initial_label_fraction);
    c.query_fraction_per_cycle = j.value("query_fraction_per_cycle", c.query_fraction_per_cycle);
    c.subset_multiplier = j.value("subset_multiplier", c.subset_multiplier);
    c.num_cycles = j.value("num_cycles", c.num_cycles);
    c.budget_n = j.value("budget_n", c.budget_n);
    c.fusion_alpha = j.value("fusion_alpha", c.fusion_alpha);
    c.fusion_beta = j.value("fusion_beta", c.fusion_beta);
    c.dice_threshold_theta = j.value("dice_threshold_theta", c.dice_threshold_theta);
    c.depth_quantile_tau = j.value("depth_quantile_tau", c.depth_quantile_tau);
    c.seed = j.value("seed", c.seed);
    return c;
}

void write_file_atomic(const std::string& path, std::string_view contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::io, "cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error(Errc::io, "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw Error(Errc::io, "rename " + tmp.string() + " -> " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace segxal
