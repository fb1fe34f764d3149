#pragma once

// Operator HTTP service around a live Campaign. One simulation thread owns the
// campaign; handlers reach it only through a task queue drained between ticks,
// and read tick snapshots published under a lock.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <future>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "raceway/supervisor.hpp"

namespace raceway::service {

using nlohmann::json;
using supervisor::Campaign;
using supervisor::TickRecord;

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0: any free port
    std::optional<double> time_acceleration;  // overrides the scenario
    std::optional<std::filesystem::path> log_dir;
    std::optional<std::filesystem::path> static_dir;
    std::size_t stream_buffer = 20000;  // records kept for slow stream clients
};

struct HttpResult {
    int status = 200;
    json body;
};

class Service {
public:
    Service(Scenario s, estimation::CalibrationModel model, ServiceOptions opt = {})
        : opt_(std::move(opt)), campaign_(std::move(s), std::move(model)) {
        acceleration_ = opt_.time_acceleration.value_or(campaign_.scenario().time_acceleration);
        if (!(acceleration_ >= 1)) throw ValidationError(std::vector<std::string>{"time_acceleration must be >= 1"});
        offset_ = campaign_.scenario().utc_offset;
        for (const auto& r : campaign_.scenario().reactors) names_.push_back(r.name);
        histories_.resize(names_.size());
        latest_.resize(names_.size());
        if (opt_.log_dir) {
            logs_.emplace(*opt_.log_dir, campaign_);
            logs_->attach(campaign_);
        }
        campaign_.on_record([this](const TickRecord& r) { publish(r); });
        campaign_.on_event([this](const json& e) {
            std::lock_guard lk(data_mu_);
            events_.push_back(e);
        });
        routes();
    }

    ~Service() { stop(); }
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and starts the simulation and HTTP threads. Throws on bind failure.
    void start() {
        if (opt_.static_dir && !http_.set_mount_point("/", opt_.static_dir->string()))
            throw Error("static directory '" + opt_.static_dir->string() + "' does not exist");
        // SO_REUSEADDR only: the library default also sets SO_REUSEPORT, which
        // would let a second server share the port silently.
        http_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
        });
        if (opt_.port == 0) port_ = http_.bind_to_any_port(opt_.host);
        else port_ = http_.bind_to_port(opt_.host, opt_.port) ? opt_.port : -1;
        if (port_ <= 0) throw Error("cannot bind " + opt_.host + ":" + std::to_string(opt_.port));
        running_ = true;
        sim_thread_ = std::thread([this] { simulate(); });
        http_thread_ = std::thread([this] { http_.listen_after_bind(); });
        spdlog::info("serving on http://{}:{} (time x{})", opt_.host, port_, acceleration_);
    }

    void stop() {
        if (!running_.exchange(false)) return;
        http_.stop();
        stream_cv_.notify_all();
        task_cv_.notify_all();
        if (http_thread_.joinable()) http_thread_.join();
        if (sim_thread_.joinable()) sim_thread_.join();
        if (logs_) logs_->flush();
    }

    /// Blocks until the campaign has run to its end (or the service stops).
    void wait_finished() {
        std::unique_lock lk(data_mu_);
        stream_cv_.wait(lk, [this] { return sim_done_ || !running_; });
    }

    int port() const { return port_; }

private:
    // ---- simulation thread ------------------------------------------------

    void simulate() {
        const auto wall0 = std::chrono::steady_clock::now();
        const Timestamp sim0 = campaign_.now();
        while (running_) {
            run_tasks();
            if (campaign_.finished()) {
                if (!sim_done_) {
                    if (logs_) logs_->write_summary(campaign_);
                    std::lock_guard lk(data_mu_);
                    sim_done_ = true;
                    stream_cv_.notify_all();
                }
                std::unique_lock lk(task_mu_);
                task_cv_.wait_for(lk, std::chrono::milliseconds(50));
                continue;
            }
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
            const Timestamp target = sim0 + Seconds{static_cast<std::int64_t>(wall * acceleration_)};
            int budget = 2000;  // ticks between task checks
            while (campaign_.now() < target && !campaign_.finished() && budget-- > 0) campaign_.step();
            if (campaign_.now() >= campaign_.scenario().end()) campaign_.finish();
            if (campaign_.now() >= target) {
                std::unique_lock lk(task_mu_);
                task_cv_.wait_for(lk, std::chrono::milliseconds(5));
            }
        }
    }

    void run_tasks() {
        std::deque<std::function<void()>> tasks;
        {
            std::lock_guard lk(task_mu_);
            tasks.swap(tasks_);
        }
        for (auto& t : tasks) t();
    }

    /// Runs f on the simulation thread between ticks and waits for its result.
    HttpResult on_sim_thread(std::function<HttpResult()> f) {
        auto task = std::make_shared<std::packaged_task<HttpResult()>>(std::move(f));
        auto fut = task->get_future();
        {
            std::lock_guard lk(task_mu_);
            tasks_.push_back([task] { (*task)(); });
        }
        task_cv_.notify_all();
        if (fut.wait_for(std::chrono::seconds(10)) != std::future_status::ready)
            return {503, {{"error", "simulation busy"}}};
        return fut.get();
    }

    void publish(const TickRecord& r) {
        const std::size_t idx = index_of(r.reactor);
        std::lock_guard lk(data_mu_);
        histories_[idx].push_back(r);
        latest_[idx] = r;
        stream_.push_back({++seq_, supervisor::to_json(r, offset_).dump()});
        while (stream_.size() > opt_.stream_buffer) stream_.pop_front();
        stream_cv_.notify_all();
    }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return i;
        return 0;
    }

    std::optional<std::size_t> reactor_param(const httplib::Request& req) const {
        if (!req.has_param("reactor")) return 0;
        const auto name = req.get_param_value("reactor");
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return i;
        return std::nullopt;
    }

    // ---- HTTP ---------------------------------------------------------------

    static void reply(httplib::Response& res, const HttpResult& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }

    static std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
        try {
            auto j = json::parse(req.body);
            if (j.is_object()) return j;
        } catch (const json::parse_error&) {
        }
        reply(res, {400, {{"error", "body must be a JSON object"}}});
        return std::nullopt;
    }

    /// Query strings decode '+' as a space; put it back for offsets.
    static Timestamp query_time(std::string s) {
        for (auto& c : s)
            if (c == ' ') c = '+';
        return parse_iso8601(s).t;
    }

    HttpResult command(supervisor::Command c) {
        return on_sim_thread([this, c] {
            const auto v = campaign_.command_violations(c);
            if (!v.empty()) return HttpResult{422, {{"error", v.front()}, {"violations", v}}};
            campaign_.apply(c);
            return HttpResult{200, {{"accepted", true}, {"t", format_iso8601(campaign_.now(), offset_)}}};
        });
    }

    void routes() {
        http_.Get("/api/state", [this](const httplib::Request& req, httplib::Response& res) {
            const auto idx = reactor_param(req);
            if (!idx) return reply(res, {404, {{"error", "unknown reactor"}}});
            std::optional<TickRecord> rec;
            {
                std::lock_guard lk(data_mu_);
                rec = latest_[*idx];
            }
            if (!rec) return reply(res, {503, {{"error", "no data yet"}}});
            reply(res, {200, supervisor::to_json(*rec, offset_)});
        });

        http_.Get("/api/history", [this](const httplib::Request& req, httplib::Response& res) {
            const auto idx = reactor_param(req);
            if (!idx) return reply(res, {404, {{"error", "unknown reactor"}}});
            Timestamp from = Timestamp::min(), to = Timestamp::max();
            try {
                if (req.has_param("from")) from = query_time(req.get_param_value("from"));
                if (req.has_param("to")) to = query_time(req.get_param_value("to"));
            } catch (const Error& e) {
                return reply(res, {400, {{"error", e.what()}}});
            }
            json out = json::array();
            {
                std::lock_guard lk(data_mu_);
                const auto& h = histories_[*idx];
                auto it = std::lower_bound(h.begin(), h.end(), from,
                                           [](const TickRecord& r, Timestamp t) { return r.t < t; });
                for (; it != h.end() && it->t <= to; ++it) out.push_back(supervisor::to_json(*it, offset_));
            }
            reply(res, {200, out});
        });

        http_.Get("/api/ledger", [this](const httplib::Request&, httplib::Response& res) {
            reply(res, on_sim_thread([this] { return HttpResult{200, supervisor::to_json(campaign_.report())}; }));
        });

        http_.Get("/api/config", [this](const httplib::Request&, httplib::Response& res) {
            reply(res, on_sim_thread([this] {
                json j{{"scenario", to_json(campaign_.scenario())},
                       {"time_acceleration", acceleration_},
                       {"now", format_iso8601(campaign_.now(), offset_)},
                       {"finished", campaign_.finished()}};
                j["active"] = json::array();
                for (const auto& r : campaign_.latest())
                    j["active"].push_back({{"reactor", r.reactor},
                                           {"mode", to_string(r.mode)},
                                           {"x_max_gl", r.x_max_active},
                                           {"x_min_gl", r.x_min_active}});
                return HttpResult{200, j};
            }));
        });

        http_.Get("/api/events", [this](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lk(data_mu_);
            reply(res, {200, json(events_)});
        });

        http_.Post("/api/setpoint", [this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req, res);
            if (!body) return;
            const json* x = body->contains("x_max") ? &(*body)["x_max"] : body->contains("x_max_gl") ? &(*body)["x_max_gl"] : nullptr;
            if (!x || !x->is_number()) return reply(res, {422, {{"error", "x_max must be a number"}}});
            supervisor::Command c;
            c.kind = supervisor::Command::Kind::setpoint;
            c.value = x->get<double>();
            c.reactor = body->value("reactor", "");
            reply(res, command(c));
        });

        http_.Post("/api/mode", [this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req, res);
            if (!body) return;
            const auto mode = operating_mode_from_string(body->value("mode", ""));
            if (!mode) return reply(res, {422, {{"error", "mode must be 'turbidostat' or 'chemostat'"}}});
            supervisor::Command c;
            c.kind = supervisor::Command::Kind::mode;
            c.mode = *mode;
            c.reactor = body->value("reactor", "");
            reply(res, command(c));
        });

        http_.Post("/api/harvest/manual", [this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req, res);
            if (!body) return;
            if (!body->contains("volume_l") || !(*body)["volume_l"].is_number())
                return reply(res, {422, {{"error", "volume_l must be a number"}}});
            supervisor::Command c;
            c.kind = supervisor::Command::Kind::manual_harvest;
            c.value = (*body)["volume_l"].get<double>();
            c.reactor = body->value("reactor", "");
            reply(res, command(c));
        });

        http_.Get("/api/stream", [this](const httplib::Request&, httplib::Response& res) {
            std::uint64_t last = 0;
            {
                std::lock_guard lk(data_mu_);
                last = seq_ > names_.size() ? seq_ - names_.size() : 0;  // start with the current snapshot
            }
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider("text/event-stream", [this, last](std::size_t, httplib::DataSink& sink) mutable {
                std::vector<std::string> out;
                {
                    std::unique_lock lk(data_mu_);
                    stream_cv_.wait_for(lk, std::chrono::seconds(1), [&] { return seq_ > last || !running_; });
                    if (!running_) return false;
                    for (const auto& [seq, doc] : stream_)
                        if (seq > last) out.push_back(doc);
                    last = seq_;
                }
                if (out.empty()) return sink.write(": ping\n\n", 8);
                for (const auto& doc : out) {
                    const std::string frame = "data: " + doc + "\n\n";
                    if (!sink.write(frame.data(), frame.size())) return false;
                }
                return true;
            });
        });
    }

    ServiceOptions opt_;
    Campaign campaign_;
    std::optional<supervisor::LogWriter> logs_;
    double acceleration_ = 1.0;
    Seconds offset_{0};
    std::vector<std::string> names_;

    httplib::Server http_;
    int port_ = -1;
    std::atomic<bool> running_{false};
    std::thread sim_thread_;
    std::thread http_thread_;

    std::mutex task_mu_;
    std::condition_variable task_cv_;
    std::deque<std::function<void()>> tasks_;

    std::mutex data_mu_;
    std::condition_variable stream_cv_;
    std::vector<std::vector<TickRecord>> histories_;
    std::vector<std::optional<TickRecord>> latest_;
    std::deque<std::pair<std::uint64_t, std::string>> stream_;
    std::uint64_t seq_ = 0;
    std::vector<json> events_;
    bool sim_done_ = false;
};

}  // namespace raceway::service
