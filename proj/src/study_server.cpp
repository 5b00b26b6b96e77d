#include "triage/study_server.hpp"

#include <httplib.h>

namespace triage {

namespace {

using nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"error", code}, {"message", message}});
}

template <class F>
void guarded(httplib::Response& res, F&& body) {
    try {
        body();
    } catch (const StudyError& e) {
        send_error(res, e.status(), e.code(), e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, "bad_request", e.what());
    } catch (const std::invalid_argument& e) {
        send_error(res, 400, "bad_request", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
    }
}

json parse_body(const httplib::Request& req) {
    auto j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw StudyError(400, "bad_request", "request body must be a JSON object");
    }
    return j;
}

double query_double(const httplib::Request& req, const char* key, double fallback) {
    if (!req.has_param(key)) {
        return fallback;
    }
    const auto v = req.get_param_value(key);
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) {
        throw StudyError(400, "bad_request", std::string("query parameter ") + key + " is not a number");
    }
    return x;
}

}  // namespace

StudyServer::StudyServer(StudyService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

StudyServer::~StudyServer() {
    stop();
}

void StudyServer::install_routes() {
    auto& svc = service_;

    server_->Post("/sessions", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = parse_body(req);
            const auto pid = body.at("participant_id").get<std::string>();
            const auto group = group_from_string(body.value("group", "proxy_analyst"));
            auto out = to_json(svc.create_session(pid, group));
            out["instructions"] = svc.instructions();
            send_json(res, 201, out);
        });
    });

    server_->Get("/sessions/:id/trial", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, svc.next_trial(req.path_params.at("id"))); });
    });

    server_->Post("/sessions/:id/decision", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto sub = submission_from_json(parse_body(req));
            const auto p = svc.submit_decision(req.path_params.at("id"), sub);
            send_json(res, 200, {{"accepted", true}, {"progress", to_json(p)}});
        });
    });

    server_->Get("/sessions/:id/progress", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, to_json(svc.progress(req.path_params.at("id")))); });
    });

    server_->Get("/export/logs", [&svc](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { res.set_content(svc.export_jsonl(), "application/x-ndjson"); });
    });

    server_->Get("/analysis", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const double c_fn = query_double(req, "c_fn", 10.0);
            const double c_fp = query_double(req, "c_fp", 1.0);
            CostModel cost;
            try {
                cost = CostModel(c_fn, c_fp);
            } catch (const std::exception& e) {
                throw StudyError(400, "bad_request", e.what());
            }
            try {
                send_json(res, 200, to_json(svc.analysis(cost)));
            } catch (const std::invalid_argument& e) {
                throw StudyError(409, "no_completed_sessions", e.what());
            }
        });
    });
}

int StudyServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = server_->bind_to_any_port(host);
    } else if (!server_->bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void StudyServer::run(const std::string& host, int port) {
    if (!server_->listen(host, port)) {
        throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
    }
}

void StudyServer::stop() {
    if (server_) {
        server_->stop();
    }
    if (thread_.joinable()) {
        thread_.join();
    }
}

}  // namespace triage
