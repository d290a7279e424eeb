#include "segxal/queue.hpp"

#include <chrono>
#include <filesystem>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "segxal/serialize.hpp"

namespace segxal {

namespace fs = std::filesystem;

std::string_view to_string(TicketStatus s) {
    switch (s) {
        case TicketStatus::pending: return "pending";
        case TicketStatus::claimed: return "claimed";
        case TicketStatus::submitted: return "submitted";
        case TicketStatus::resolved: return "resolved";
    }
    return "?";
}

TicketStatus ticket_status_from_string(std::string_view s) {
    if (s == "pending") return TicketStatus::pending;
    if (s == "claimed") return TicketStatus::claimed;
    if (s == "submitted") return TicketStatus::submitted;
    if (s == "resolved") return TicketStatus::resolved;
    throw Error(Errc::corrupt_input, "unknown ticket status '" + std::string(s) + "'");
}

bool ticket_transition_allowed(TicketStatus from, TicketStatus to) {
    using S = TicketStatus;
    return (from == S::pending && to == S::claimed) || (from == S::claimed && to == S::submitted) ||
           (from == S::submitted && to == S::resolved) || (from == S::claimed && to == S::pending);
}

nlohmann::json to_json(const Ticket& t) {
    return {{"ticket_id", t.ticket_id},     {"sample_id", t.sample_id},   {"cycle", t.cycle},
            {"status", to_string(t.status)}, {"lease_expiry_ms", t.lease_expiry_ms},
            {"claimed_by", t.claimed_by},   {"claimed_at_ms", t.claimed_at_ms},
            {"score", t.score},             {"asset_refs", t.asset_refs}, {"record_ref", t.record_ref}};
}

Ticket ticket_from_json(const nlohmann::json& j) {
    Ticket t;
    t.ticket_id = j.at("ticket_id").get<std::string>();
    t.sample_id = j.at("sample_id").get<std::string>();
    t.cycle = j.at("cycle").get<int>();
    t.status = ticket_status_from_string(j.at("status").get<std::string>());
    t.lease_expiry_ms = j.value("lease_expiry_ms", std::int64_t{0});
    t.claimed_by = j.value("claimed_by", "");
    t.claimed_at_ms = j.value("claimed_at_ms", std::int64_t{0});
    t.score = j.value("score", 0.0);
    t.asset_refs = j.value("asset_refs", std::map<std::string, std::string>{});
    t.record_ref = j.value("record_ref", "");
    return t;
}

std::string ticket_id_for(int cycle, const std::string& sample_id) {
    return "c" + std::to_string(cycle) + "-" + sample_id;
}

std::int64_t wall_clock_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

TicketQueue::TicketQueue(std::string run_dir, double lease_seconds, Clock clock)
    : dir_(std::move(run_dir)), lease_ms_(static_cast<std::int64_t>(lease_seconds * 1000.0)),
      clock_(clock ? std::move(clock) : Clock(wall_clock_ms)) {
    require(fs::is_directory(dir_), Errc::not_found, "run directory " + dir_ + " does not exist");
}

namespace {

class FileLock {
public:
    explicit FileLock(const std::string& path) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw Error(Errc::io, "cannot open lock file " + path);
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            throw Error(Errc::io, "cannot lock " + path);
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

}  // namespace

template <class F>
auto TicketQueue::locked(F&& f) const {
    FileLock lock((fs::path(dir_) / "queue.lock").string());
    return f();
}

std::vector<Ticket> TicketQueue::load_unlocked() const {
    const fs::path p = fs::path(dir_) / "queue.jsonl";
    std::vector<Ticket> out;
    if (!fs::exists(p)) return out;
    std::istringstream in(read_file(p.string()));
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            try {
                out.push_back(ticket_from_json(nlohmann::json::parse(line)));
            } catch (const nlohmann::json::exception& e) {
                throw CorruptInputError(offset, std::string("queue.jsonl: ") + e.what());
            }
        }
        offset += line.size() + 1;
    }
    return out;
}

void TicketQueue::save_unlocked(const std::vector<Ticket>& tickets) const {
    std::string text;
    for (const auto& t : tickets) text += to_json(t).dump() + "\n";
    write_file_atomic((fs::path(dir_) / "queue.jsonl").string(), text);
}

Ticket TicketQueue::enqueue(const std::string& sample_id, int cycle, double score,
                            std::map<std::string, std::string> asset_refs) {
    return locked([&] {
        auto tickets = load_unlocked();
        for (const auto& t : tickets)
            if (t.sample_id == sample_id && t.status != TicketStatus::resolved)
                throw Error(Errc::duplicate_ticket, "sample " + sample_id + " already has ticket " + t.ticket_id);
        Ticket t;
        t.ticket_id = ticket_id_for(cycle, sample_id);
        for (const auto& o : tickets)
            if (o.ticket_id == t.ticket_id) throw Error(Errc::duplicate_ticket, "ticket " + t.ticket_id + " exists");
        t.sample_id = sample_id;
        t.cycle = cycle;
        t.score = score;
        t.asset_refs = std::move(asset_refs);
        tickets.push_back(t);
        save_unlocked(tickets);
        return t;
    });
}

std::vector<Ticket> TicketQueue::list() const {
    return locked([&] { return load_unlocked(); });
}

std::optional<Ticket> TicketQueue::get(const std::string& ticket_id) const {
    for (auto& t : list())
        if (t.ticket_id == ticket_id) return t;
    return std::nullopt;
}

namespace {

Ticket& find_ticket(std::vector<Ticket>& tickets, const std::string& id) {
    for (auto& t : tickets)
        if (t.ticket_id == id) return t;
    throw Error(Errc::not_found, "no ticket " + id);
}

// Claims whose lease ran out go back to pending.
int release_expired(std::vector<Ticket>& tickets, std::int64_t now) {
    int n = 0;
    for (auto& t : tickets)
        if (t.status == TicketStatus::claimed && now > t.lease_expiry_ms) {
            t.status = TicketStatus::pending;
            t.claimed_by.clear();
            t.lease_expiry_ms = 0;
            t.claimed_at_ms = 0;
            ++n;
        }
    return n;
}

}  // namespace

Ticket TicketQueue::claim(const std::string& ticket_id, const std::string& annotator_id) {
    require(!annotator_id.empty(), Errc::precondition, "annotator_id must not be empty");
    return locked([&] {
        auto tickets = load_unlocked();
        release_expired(tickets, now_ms());
        Ticket& t = find_ticket(tickets, ticket_id);
        if (t.status != TicketStatus::pending)
            throw Error(Errc::conflict, "ticket " + ticket_id + " is " + std::string(to_string(t.status)));
        t.status = TicketStatus::claimed;
        t.claimed_by = annotator_id;
        t.claimed_at_ms = now_ms();
        t.lease_expiry_ms = t.claimed_at_ms + lease_ms_;
        Ticket out = t;
        save_unlocked(tickets);
        return out;
    });
}

Ticket TicketQueue::submit(const std::string& ticket_id, const std::string& annotator_id,
                           const AnnotationRecord& record) {
    return locked([&] {
        auto tickets = load_unlocked();
        Ticket& t = find_ticket(tickets, ticket_id);
        const std::int64_t now = now_ms();
        if (t.status == TicketStatus::claimed && now > t.lease_expiry_ms) {
            const bool mine = t.claimed_by == annotator_id;
            release_expired(tickets, now);
            save_unlocked(tickets);
            if (mine) throw Error(Errc::lease_expired, "lease on " + ticket_id + " expired");
            throw Error(Errc::conflict, "ticket " + ticket_id + " is not claimed by " + annotator_id);
        }
        if (t.status != TicketStatus::claimed || t.claimed_by != annotator_id)
            throw Error(Errc::conflict, "ticket " + ticket_id + " is not claimed by " + annotator_id);
        const fs::path rel = fs::path("annotations") / (ticket_id + ".json");
        fs::create_directories(fs::path(dir_) / "annotations");
        AnnotationRecord rec = record;
        rec.source = OracleSource::human;
        rec.annotator_id = annotator_id;
        if (rec.elapsed <= 0.0) rec.elapsed = static_cast<double>(now - t.claimed_at_ms) / 1000.0;
        write_file_atomic((fs::path(dir_) / rel).string(), to_json(rec).dump() + "\n");
        t.status = TicketStatus::submitted;
        t.record_ref = rel.string();
        Ticket out = t;
        save_unlocked(tickets);
        return out;
    });
}

Ticket TicketQueue::resolve(const std::string& ticket_id) {
    return locked([&] {
        auto tickets = load_unlocked();
        Ticket& t = find_ticket(tickets, ticket_id);
        if (t.status != TicketStatus::submitted)
            throw Error(Errc::conflict, "ticket " + ticket_id + " is not submitted");
        t.status = TicketStatus::resolved;
        Ticket out = t;
        save_unlocked(tickets);
        return out;
    });
}

AnnotationRecord TicketQueue::load_record(const Ticket& t) const {
    require(!t.record_ref.empty(), Errc::not_found, "ticket " + t.ticket_id + " has no record");
    const std::string text = read_file((fs::path(dir_) / t.record_ref).string());
    return annotation_record_from_json(nlohmann::json::parse(text));
}

int TicketQueue::expire_leases() {
    return locked([&] {
        auto tickets = load_unlocked();
        const int n = release_expired(tickets, now_ms());
        if (n) save_unlocked(tickets);
        return n;
    });
}

}  // namespace segxal
