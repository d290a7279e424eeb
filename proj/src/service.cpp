#include "segxal/service.hpp"

#include <algorithm>
#include <filesystem>
#include <regex>

#include <signal.h>
#include <unistd.h>

#include <httplib.h>

#include "segxal/geometry.hpp"
#include "segxal/png_io.hpp"
#include "segxal/serialize.hpp"

namespace segxal {

namespace fs = std::filesystem;

namespace {

HttpResponse json_response(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json"}; }

HttpResponse error_response(int status, const std::string& msg) {
    return json_response(status, {{"error", msg}, {"status", status}});
}

int http_status(Errc c) {
    switch (c) {
        case Errc::not_found: return 404;
        case Errc::conflict:
        case Errc::duplicate_ticket: return 409;
        case Errc::lease_expired: return 410;
        case Errc::invalid_geometry: return 422;
        case Errc::precondition: return 400;
        default: return 500;
    }
}

nlohmann::json ticket_summary(const Ticket& t) {
    nlohmann::json j = to_json(t);
    j.erase("record_ref");
    if (t.lease_expiry_ms == 0) j["lease_expiry_ms"] = nullptr;
    return j;
}

std::string annotator_of(const nlohmann::json& body) {
    if (!body.is_object() || !body.contains("annotator_id") || !body["annotator_id"].is_string() ||
        body["annotator_id"].get<std::string>().empty())
        throw Error(Errc::precondition, "annotator_id is required");
    return body["annotator_id"].get<std::string>();
}

nlohmann::json parse_body(const std::string& body) {
    try {
        return body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::precondition, std::string("malformed JSON body: ") + e.what());
    }
}

}  // namespace

struct AnnotationService::Server {
    httplib::Server http;
};

AnnotationService::AnnotationService(std::string run_dir, ServiceOptions opt)
    : dir_(std::move(run_dir)), opt_(std::move(opt)) {
    queue_ = std::make_unique<TicketQueue>(dir_, opt_.lease_seconds, opt_.clock);
}

AnnotationService::~AnnotationService() { stop(); }

std::map<std::string, std::string> AnnotationService::common_headers() const {
    return {{"Access-Control-Allow-Origin", opt_.cors_origin},
            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
            {"Access-Control-Allow-Headers", "Content-Type"}};
}

bool AnnotationService::active() const { return fs::exists(fs::path(dir_) / "state.json"); }

HttpResponse AnnotationService::handle(const std::string& method, const std::string& path,
                                       const std::string& body) const {
    static const std::regex ticket_re(R"(^/api/tickets/([A-Za-z0-9_.\-]+)/(claim|annotation)$)");
    try {
        if (method == "OPTIONS") return {204, "", "text/plain"};
        std::smatch m;
        if (method == "GET" && path == "/api/queue") return queue_listing();
        if (method == "GET" && path == "/api/status") return status();
        if (method == "GET" && path.rfind("/api/assets/", 0) == 0) return asset(path.substr(12));
        if (method == "POST" && std::regex_match(path, m, ticket_re))
            return m[2] == "claim" ? claim(m[1], body) : annotate(m[1], body);
        if (path.rfind("/api/", 0) == 0) return error_response(404, "no route " + method + " " + path);
        return error_response(404, "not found");
    } catch (const Error& e) {
        return error_response(http_status(e.code()), e.what());
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

HttpResponse AnnotationService::queue_listing() const {
    if (!active()) return error_response(503, "no active run in " + dir_);
    queue_->expire_leases();
    std::vector<Ticket> open;
    for (auto& t : queue_->list())
        if (t.status == TicketStatus::pending || t.status == TicketStatus::claimed) open.push_back(std::move(t));
    int current = 0;
    for (const auto& t : open) current = std::max(current, t.cycle);
    std::erase_if(open, [&](const Ticket& t) { return t.cycle != current; });
    std::stable_sort(open.begin(), open.end(), [](const Ticket& a, const Ticket& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.ticket_id < b.ticket_id;
    });
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : open) arr.push_back(ticket_summary(t));
    return json_response(200, {{"cycle", current}, {"tickets", arr}});
}

HttpResponse AnnotationService::claim(const std::string& ticket_id, const std::string& body) const {
    const auto j = parse_body(body);
    const Ticket t = queue_->claim(ticket_id, annotator_of(j));
    return json_response(200, {{"ticket", ticket_summary(t)}});
}

HttpResponse AnnotationService::annotate(const std::string& ticket_id, const std::string& body) const {
    const auto j = parse_body(body);
    const std::string who = annotator_of(j);
    const auto existing = queue_->get(ticket_id);
    if (!existing) return error_response(404, "no ticket " + ticket_id);
    if (existing->status == TicketStatus::claimed && existing->claimed_by == who &&
        queue_->now_ms() > existing->lease_expiry_ms) {
        queue_->expire_leases();
        return error_response(410, "lease on " + ticket_id + " expired");
    }
    if (existing->status != TicketStatus::claimed || existing->claimed_by != who)
        return error_response(409, "ticket " + ticket_id + " is not claimed by " + who);

    const auto seg_ref = existing->asset_refs.find("initial_seg");
    if (seg_ref == existing->asset_refs.end()) throw Error(Errc::not_found, "ticket has no initial segmentation");
    int num_classes = 0;
    if (fs::exists(fs::path(dir_) / "palette.json"))
        num_classes = static_cast<int>(nlohmann::json::parse(read_file((fs::path(dir_) / "palette.json").string()))["classes"].size());
    const LabelMask initial = load_label_png((fs::path(dir_) / seg_ref->second).string(), num_classes);

    const auto edits = parse_edits(j, initial.height, initial.width, num_classes > 0 ? num_classes : 256);
    if (edits.empty()) throw Error(Errc::invalid_geometry, "no edits");
    const LabelMask corrected = apply_edits(initial, edits);

    // Coverage of every edit, to report which prompts the annotator touched.
    LabelMask touched(initial.height, initial.width, 2, 0);
    for (const auto& e : edits) {
        std::vector<std::uint8_t> m;
        if (const auto* p = std::get_if<PolygonEdit>(&e))
            m = rasterize_polygon(p->vertices, initial.height, initial.width);
        else
            m = rle_decode(std::get<BrushEdit>(e).runs, initial.height, initial.width);
        for (std::size_t i = 0; i < m.size(); ++i) touched.labels[i] |= m[i];
    }
    AnnotationRecord rec;
    rec.sample_id = existing->sample_id;
    rec.corrected = corrected;
    rec.source = OracleSource::human;
    rec.elapsed = j.value("elapsed", 0.0);
    if (const auto pr = existing->asset_refs.find("prompts"); pr != existing->asset_refs.end()) {
        const auto side = nlohmann::json::parse(read_file((fs::path(dir_) / pr->second).string()));
        for (const auto& r : side.value("regions", nlohmann::json::array())) {
            const CandidatePrompt p = prompt_from_json(r);
            bool hit = false;
            for (const auto& run : p.region)
                for (int k = 0; k < run.length && !hit; ++k)
                    hit = touched.at(run.row, run.col + k) != 0;
            if (hit) rec.regions_covered.push_back(p.rank);
        }
    }
    std::size_t changed = 0;
    for (std::size_t i = 0; i < corrected.labels.size(); ++i) changed += corrected.labels[i] != initial.labels[i];

    const Ticket t = queue_->submit(ticket_id, who, rec);
    return json_response(200, {{"ticket", ticket_summary(t)},
                               {"checksum", mask_checksum(corrected)},
                               {"changed_pixels", changed},
                               {"regions_covered", rec.regions_covered}});
}

HttpResponse AnnotationService::asset(const std::string& rel) const {
    if (rel.empty() || rel.front() == '/' || rel.find("..") != std::string::npos || rel.find('\\') != std::string::npos)
        return error_response(400, "invalid asset path");
    const fs::path p = fs::path(dir_) / rel;
    if (!fs::is_regular_file(p)) return error_response(404, "no asset " + rel);
    const std::string ext = p.extension().string();
    const std::string type = ext == ".png" ? "image/png" : ext == ".json" ? "application/json" : "application/octet-stream";
    return {200, read_file(p.string()), type};
}

HttpResponse AnnotationService::status() const {
    nlohmann::json out = {{"schema", kSchemaVersion}, {"active", active()}, {"run_dir", fs::path(dir_).filename().string()}};
    if (active()) {
        const auto st = nlohmann::json::parse(read_file((fs::path(dir_) / "state.json").string()));
        out["cycle"] = st.value("cycle", 0);
        out["num_cycles"] = st.value("num_cycles", 0);
        out["phase"] = st.value("phase", "");
        out["strategy"] = st.value("strategy", "");
        out["oracle"] = st.value("oracle", "");
        out["depth_variant"] = st.value("depth_variant", "");
        const auto& pool = st.at("pool");
        out["pool"] = {{"labeled", pool.value("labeled", nlohmann::json::array()).size()},
                       {"unlabeled", pool.value("unlabeled", nlohmann::json::array()).size()},
                       {"candidate", pool.value("candidate", nlohmann::json::array()).size()}};
        nlohmann::json trend = nlohmann::json::array();
        if (st.contains("initial_metrics") && !st["initial_metrics"].is_null())
            trend.push_back({{"cycle", 0}, {"miou", st["initial_metrics"]["miou"]}});
        for (const auto& m : st.value("per_cycle_metrics", nlohmann::json::array()))
            trend.push_back({{"cycle", m["cycle"]}, {"miou", m["miou"]}, {"samples_labeled", m["samples_labeled"]}});
        out["miou_trend"] = trend;
    }
    std::map<std::string, int> counts = {{"pending", 0}, {"claimed", 0}, {"submitted", 0}, {"resolved", 0}};
    for (const auto& t : queue_->list()) ++counts[std::string(to_string(t.status))];
    out["queue"] = counts;
    return json_response(200, out);
}

bool AnnotationService::listen(const std::string& host, int port, const std::function<void(int)>& on_bound) {
    server_ = std::make_unique<Server>();
    auto& http = server_->http;
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        const HttpResponse r = handle(req.method, req.path, req.body);
        for (const auto& [k, v] : common_headers()) res.set_header(k, v);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    // httplib's default also sets SO_REUSEPORT, which would let a second service share the port.
    http.set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    http.Get(".*", route);
    http.Post(".*", route);
    http.Options(".*", route);
    int bound = port;
    if (port == 0) {
        bound = http.bind_to_any_port(host);
        if (bound <= 0) return false;
    } else if (!http.bind_to_port(host, port)) {
        return false;
    }
    if (on_bound) on_bound(bound);
    return http.listen_after_bind();
}

void AnnotationService::stop() {
    if (server_) server_->http.stop();
}

void write_service_marker(const std::string& run_dir, const std::string& host, int port) {
    const nlohmann::json j = {{"pid", static_cast<long>(::getpid())}, {"host", host}, {"port", port}};
    write_file_atomic((fs::path(run_dir) / "service.json").string(), j.dump() + "\n");
}

void remove_service_marker(const std::string& run_dir) {
    std::error_code ec;
    fs::remove(fs::path(run_dir) / "service.json", ec);
}

bool service_running(const std::string& run_dir) {
    const fs::path p = fs::path(run_dir) / "service.json";
    if (!fs::exists(p)) return false;
    try {
        const auto j = nlohmann::json::parse(read_file(p.string()));
        const long pid = j.at("pid").get<long>();
        return pid > 0 && ::kill(static_cast<pid_t>(pid), 0) == 0;
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace segxal
