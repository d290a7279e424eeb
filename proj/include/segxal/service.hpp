#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include "segxal/queue.hpp"

namespace segxal {

struct HttpResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

struct ServiceOptions {
    std::string cors_origin = "*";
    double lease_seconds = 600.0;
    TicketQueue::Clock clock;  ///< defaults to the wall clock
};

/// HTTP/JSON front of the human-oracle queue for one run directory. All state lives in the
/// run directory, so the service can be restarted at any time.
class AnnotationService {
public:
    explicit AnnotationService(std::string run_dir, ServiceOptions opt = {});
    ~AnnotationService();

    /// Transport-free request handling; `path` excludes the query string.
    HttpResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

    /// Headers every response carries (CORS).
    std::map<std::string, std::string> common_headers() const;

    /// Binds and serves until stop(). Port 0 picks a free port. Returns false when the port cannot be bound.
    bool listen(const std::string& host, int port, const std::function<void(int)>& on_bound = {});
    void stop();

private:
    HttpResponse queue_listing() const;
    HttpResponse claim(const std::string& ticket_id, const std::string& body) const;
    HttpResponse annotate(const std::string& ticket_id, const std::string& body) const;
    HttpResponse asset(const std::string& rel) const;
    HttpResponse status() const;
    bool active() const;

    std::string dir_;
    ServiceOptions opt_;
    std::unique_ptr<TicketQueue> queue_;
    struct Server;
    std::unique_ptr<Server> server_;
};

/// Writes <run_dir>/service.json so other processes can find the service.
void write_service_marker(const std::string& run_dir, const std::string& host, int port);
void remove_service_marker(const std::string& run_dir);
/// True when the marker names a live process.
bool service_running(const std::string& run_dir);

}  // namespace segxal
