#pragma once

#include <memory>
#include <string>
#include <thread>

#include "triage/study.hpp"

namespace httplib {
class Server;
}

namespace triage {

/// JSON-over-HTTP front end for a StudyService.
///
///   POST /sessions                  {participant_id, group}
///   GET  /sessions/:id/trial
///   POST /sessions/:id/decision     {alert_id, decision, decision_time_ms, confidence_rating?}
///   GET  /sessions/:id/progress
///   GET  /export/logs               application/x-ndjson
///   GET  /analysis?c_fn=10&c_fp=1
///
/// Errors come back as {"error": code, "message": text} with the status the
/// service assigned.
class StudyServer {
public:
    explicit StudyServer(StudyService& service);
    ~StudyServer();

    StudyServer(const StudyServer&) = delete;
    StudyServer& operator=(const StudyServer&) = delete;

    /// Binds and serves on a background thread; port 0 picks a free port.
    /// Returns the bound port.
    int start(const std::string& host, int port);
    /// Blocks the caller until stop().
    void run(const std::string& host, int port);
    void stop();

private:
    void install_routes();

    StudyService& service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace triage
