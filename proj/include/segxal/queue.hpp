#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "segxal/oracle.hpp"

namespace segxal {

enum class TicketStatus { pending, claimed, submitted, resolved };

std::string_view to_string(TicketStatus s);
TicketStatus ticket_status_from_string(std::string_view s);

/// Legal edges: pending->claimed->submitted->resolved, and claimed->pending on lease expiry.
bool ticket_transition_allowed(TicketStatus from, TicketStatus to);

struct Ticket {
    std::string ticket_id;
    std::string sample_id;
    int cycle = 0;
    TicketStatus status = TicketStatus::pending;
    std::int64_t lease_expiry_ms = 0;  ///< unix epoch milliseconds, 0 when unclaimed
    std::string claimed_by;
    double score = 0.0;  ///< top candidate-prompt score
    std::map<std::string, std::string> asset_refs;  ///< name -> path relative to the run dir
    std::string record_ref;  ///< relative path of the submitted AnnotationRecord
    std::int64_t claimed_at_ms = 0;

    bool operator==(const Ticket&) const = default;
};

nlohmann::json to_json(const Ticket& t);
Ticket ticket_from_json(const nlohmann::json& j);

std::string ticket_id_for(int cycle, const std::string& sample_id);

/// Human-oracle queue persisted as <run_dir>/queue.jsonl. Every operation takes an exclusive
/// file lock, reloads, mutates and rewrites atomically, so several processes may share it.
class TicketQueue {
public:
    using Clock = std::function<std::int64_t()>;

    explicit TicketQueue(std::string run_dir, double lease_seconds = 600.0, Clock clock = {});

    const std::string& run_dir() const { return dir_; }
    std::int64_t now_ms() const { return clock_(); }

    /// Throws duplicate_ticket while the sample has an unresolved ticket.
    Ticket enqueue(const std::string& sample_id, int cycle, double score,
                   std::map<std::string, std::string> asset_refs);
    std::vector<Ticket> list() const;
    std::optional<Ticket> get(const std::string& ticket_id) const;

    /// not_found, or conflict when the ticket is not pending.
    Ticket claim(const std::string& ticket_id, const std::string& annotator_id);
    /// conflict unless claimed by this annotator; lease_expired when the lease ran out.
    Ticket submit(const std::string& ticket_id, const std::string& annotator_id, const AnnotationRecord& record);
    /// conflict unless submitted.
    Ticket resolve(const std::string& ticket_id);
    AnnotationRecord load_record(const Ticket& t) const;

    /// Returns expired claims to pending; number of tickets released.
    int expire_leases();

private:
    template <class F>
    auto locked(F&& f) const;
    std::vector<Ticket> load_unlocked() const;
    void save_unlocked(const std::vector<Ticket>& tickets) const;

    std::string dir_;
    std::int64_t lease_ms_;
    Clock clock_;
};

std::int64_t wall_clock_ms();

}  // namespace segxal
