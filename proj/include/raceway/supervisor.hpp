#pragma once

// Closed-loop campaign runner: plant steps at dt, sensing cycles every
// cycle_period, TickRecords every log_interval, operator commands applied
// between ticks.

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "raceway/accounting.hpp"
#include "raceway/calibration_io.hpp"
#include "raceway/control.hpp"
#include "raceway/estimation.hpp"
#include "raceway/irradiance.hpp"
#include "raceway/ledger_io.hpp"
#include "raceway/plant.hpp"
#include "raceway/scenario.hpp"
#include "raceway/sensor.hpp"
#include "raceway/synthetic.hpp"

namespace raceway::supervisor {

using nlohmann::json;

struct TickRecord {
    Timestamp t{};
    std::string reactor;
    double x_true = 0.0;
    std::optional<double> x_hat;  // last available estimate
    int u = 0;
    double q_d = 0.0;  // L/min
    double i0 = 0.0;   // W/m^2
    double cum_volume = 0.0;
    double cum_mass = 0.0;
    OperatingMode mode = OperatingMode::turbidostat;
    double x_max_active = 0.0;
    double x_min_active = 0.0;
};

inline json to_json(const TickRecord& r, Seconds offset) {
    return {{"t", format_iso8601(r.t, offset)},
            {"reactor", r.reactor},
            {"x_true_gl", r.x_true},
            {"x_hat_gl", r.x_hat ? json(*r.x_hat) : json(nullptr)},
            {"u", r.u},
            {"q_d_lpm", r.q_d},
            {"i0_wm2", r.i0},
            {"cum_volume_l", r.cum_volume},
            {"cum_mass_g", r.cum_mass},
            {"mode", to_string(r.mode)},
            {"x_max_gl", r.x_max_active},
            {"x_min_gl", r.x_min_active}};
}

inline TickRecord tick_from_json(const json& j) {
    TickRecord r;
    r.t = parse_iso8601(j.at("t").get<std::string>()).t;
    r.reactor = j.at("reactor").get<std::string>();
    r.x_true = j.at("x_true_gl").get<double>();
    if (!j.at("x_hat_gl").is_null()) r.x_hat = j.at("x_hat_gl").get<double>();
    r.u = j.at("u").get<int>();
    r.q_d = j.at("q_d_lpm").get<double>();
    r.i0 = j.at("i0_wm2").get<double>();
    r.cum_volume = j.at("cum_volume_l").get<double>();
    r.cum_mass = j.at("cum_mass_g").get<double>();
    const auto mode = operating_mode_from_string(j.at("mode").get<std::string>());
    if (!mode) throw IngestionError("tick record has unknown mode");
    r.mode = *mode;
    r.x_max_active = j.at("x_max_gl").get<double>();
    r.x_min_active = j.at("x_min_gl").get<double>();
    return r;
}

inline json to_json(const accounting::HarvestEvent& e, const std::string& reactor, Seconds offset) {
    json j{{"kind", "harvest"},
           {"reactor", reactor},
           {"t", format_iso8601(e.t_start, offset)},
           {"t_end", format_iso8601(e.t_end, offset)},
           {"mode", accounting::to_string(e.mode)},
           {"volume_l", e.volume_l}};
    j["x_start_gl"] = e.x_start ? json(*e.x_start) : json(nullptr);
    j["x_end_gl"] = e.x_end ? json(*e.x_end) : json(nullptr);
    return j;
}

inline accounting::HarvestEvent harvest_from_json(const json& j) {
    accounting::HarvestEvent e;
    e.t_start = parse_iso8601(j.at("t").get<std::string>()).t;
    e.t_end = parse_iso8601(j.at("t_end").get<std::string>()).t;
    e.mode = accounting::harvest_mode_from_string(j.at("mode").get<std::string>());
    e.volume_l = j.at("volume_l").get<double>();
    if (!j.at("x_start_gl").is_null()) e.x_start = j.at("x_start_gl").get<double>();
    if (!j.at("x_end_gl").is_null()) e.x_end = j.at("x_end_gl").get<double>();
    return e;
}

// ---------------------------------------------------------------------------
// Estimator

/// Fits the estimator on a synthetic calibration campaign run before the
/// scenario start, with lambda picked by blocked cross-validation.
inline estimation::CalibrationModel calibrate_estimator(const Scenario& s) {
    synthetic::DatasetSpec spec;
    spec.n_samples = s.estimator.calibration_samples;
    spec.seed = sensor::cycle_seed(s.seed, 0xCA11B);
    const Timestamp t0 = s.start - spec.spacing * static_cast<int>(spec.n_samples);
    const auto data = synthetic::calibration_dataset(s.sensor, spec, t0);
    const auto cv = estimation::cross_validate(data, synthetic::default_lambda_grid(data));
    estimation::CalibrationModel m;
    try {
        m = estimation::fit_lasso(data, cv.lambda_star);
    } catch (const estimation::ConvergenceError& e) {
        spdlog::warn("calibration fit did not converge; using last iterate");
        m = e.last_iterate().model;
    }
    m.feature_names = estimation::feature_names(s.sensor.n_abs_channels(), s.sensor.n_fluo_channels());
    spdlog::info("estimator calibrated: lambda={:.3g}, {} of {} features active", m.lambda, m.nonzero_count(),
                 m.n_features());
    return m;
}

inline estimation::CalibrationModel load_or_calibrate(const Scenario& s) {
    auto m = s.estimator.model_file ? estimation::load_model(*s.estimator.model_file) : calibrate_estimator(s);
    const auto expected = s.sensor.n_abs_channels() + 2 * s.sensor.n_fluo_channels();
    if (m.n_features() != expected)
        throw ValidationError(std::vector<std::string>{"estimator model has " + std::to_string(m.n_features()) +
                                                       " features, sensor produces " + std::to_string(expected)});
    return m;
}

inline plant::IrradianceSeries make_irradiance(const Scenario& s) {
    if (s.irradiance.file) return plant::load_irradiance(*s.irradiance.file);
    return plant::synth_irradiance(s.first_date(), s.campaign_days() + 1, s.irradiance.peak_wm2, s.irradiance.sunrise,
                            s.irradiance.sunset, s.utc_offset);
}

// ---------------------------------------------------------------------------
// Report

struct NamedWindow {
    std::string name;
    Date from{};
    Date to{};
    accounting::WindowResult result;
};

struct SetpointBurst {
    Timestamp setpoint_t{};
    double new_x_max = 0.0;
    std::optional<accounting::HarvestEvent> burst;  // first dilution after the change
};

struct DailyMax {
    Date date{};
    double x_hat_max = 0.0;
    double x_max_active = 0.0;
};

struct ReactorReport {
    std::string name;
    OperatingMode mode = OperatingMode::turbidostat;
    double volume_l = 0.0;
    double area_m2 = 0.0;
    int days = 0;
    std::vector<accounting::DailyRow> rows;
    accounting::BalanceReport balance;       // harvested mass from estimated concentrations
    accounting::BalanceReport true_balance;  // harvested mass from the plant's outlet
    std::optional<double> grown_mass_g;
    std::vector<NamedWindow> windows;
    std::optional<estimation::ErrorMetrics> estimator;
    std::size_t harvest_events = 0;
    std::vector<SetpointBurst> setpoint_bursts;
    std::vector<DailyMax> daily_max;
};

struct CampaignReport {
    std::string scenario;
    std::uint64_t seed = 0;
    Timestamp start{};
    Timestamp end{};
    Seconds utc_offset{0};
    bool complete = true;
    std::vector<ReactorReport> reactors;
};

inline json to_json(const accounting::BalanceReport& b) {
    return {{"total_volume_l", b.total_volume_l},
            {"total_mass_g", b.total_mass_g},
            {"initial_cb_gl", b.initial_cb},
            {"final_cb_gl", b.final_cb},
            {"initial_standing_g", b.initial_standing_g},
            {"final_standing_g", b.final_standing_g},
            {"net_production_g", b.net_production_g},
            {"net_areal_productivity", b.net_areal_productivity}};
}

inline json to_json(const CampaignReport& rep) {
    const auto off = rep.utc_offset;
    json j{{"scenario", rep.scenario},
           {"seed", rep.seed},
           {"start", format_iso8601(rep.start, off)},
           {"end", format_iso8601(rep.end, off)},
           {"complete", rep.complete}};
    j["reactors"] = json::array();
    for (const auto& r : rep.reactors) {
        json rj{{"name", r.name},
                {"mode", to_string(r.mode)},
                {"harvest_events", r.harvest_events},
                {"balance", to_json(r.balance)},
                {"true_balance", to_json(r.true_balance)}};
        if (r.grown_mass_g) {
            rj["grown_mass_g"] = *r.grown_mass_g;
            rj["mass_identity_residual_g"] = r.true_balance.net_production_g - *r.grown_mass_g;
        }
        rj["daily"] = json::array();
        for (const auto& d : r.rows)
            rj["daily"].push_back({{"date", format_date(d.date)},
                                   {"volume_l", d.harvested_volume_l},
                                   {"mass_g", d.harvested_mass_g}});
        rj["windows"] = json::array();
        for (const auto& w : r.windows)
            rj["windows"].push_back({{"name", w.name},
                                     {"from", format_date(w.from)},
                                     {"to", format_date(w.to)},
                                     {"days", w.result.days},
                                     {"mass_g", w.result.mass_g},
                                     {"productivity", w.result.productivity}});
        if (r.estimator)
            rj["estimator"] = {{"mae_gl", r.estimator->mae}, {"rmse_gl", r.estimator->rmse}, {"n", r.estimator->n}};
        rj["setpoint_bursts"] = json::array();
        for (const auto& b : r.setpoint_bursts) {
            json bj{{"t", format_iso8601(b.setpoint_t, off)}, {"x_max_gl", b.new_x_max}};
            if (b.burst) bj["burst"] = to_json(*b.burst, r.name, off);
            rj["setpoint_bursts"].push_back(bj);
        }
        rj["daily_x_hat_max"] = json::array();
        for (const auto& d : r.daily_max)
            rj["daily_x_hat_max"].push_back(
                {{"date", format_date(d.date)}, {"x_hat_max_gl", d.x_hat_max}, {"x_max_gl", d.x_max_active}});
        j["reactors"].push_back(std::move(rj));
    }
    return j;
}

/// Raw per-reactor material a report is computed from; filled either by a
/// live campaign or by reloading its logs.
struct ReactorTrace {
    std::string name;
    OperatingMode mode = OperatingMode::turbidostat;
    double volume_l = 0.0;
    double area_m2 = 0.0;
    double initial_x = 0.0;
    double final_x = 0.0;
    double true_harvest_mass_g = 0.0;
    std::optional<double> grown_mass_g;
    std::vector<accounting::HarvestEvent> events;
    std::vector<control::SetpointEvent> applied_setpoints;
    std::vector<estimation::TimedValue> estimate_at_sample;
    std::vector<estimation::TimedValue> dry_weights;
    std::map<Date, DailyMax> daily_max;
};

inline ReactorReport build_reactor_report(const ReactorTrace& tr, Seconds offset, Date first, Date last) {
    ReactorReport r;
    r.name = tr.name;
    r.mode = tr.mode;
    r.volume_l = tr.volume_l;
    r.area_m2 = tr.area_m2;
    r.days = static_cast<int>((std::chrono::sys_days{last} - std::chrono::sys_days{first}).count()) + 1;
    r.harvest_events = tr.events.size();
    r.rows = accounting::build_daily_ledger(tr.events, offset, first, last, tr.volume_l);
    r.balance = accounting::balance(r.rows, tr.initial_x, tr.final_x, tr.volume_l, tr.area_m2, r.days);
    r.true_balance = r.balance;
    r.true_balance.total_mass_g = tr.true_harvest_mass_g;
    r.true_balance.net_production_g =
        tr.true_harvest_mass_g + r.true_balance.final_standing_g - r.true_balance.initial_standing_g;
    r.true_balance.net_areal_productivity = r.true_balance.net_production_g / (tr.area_m2 * r.days);
    r.grown_mass_g = tr.grown_mass_g;

    const auto add_window = [&](std::string name, Date from, Date to) {
        if (std::chrono::sys_days{from} > std::chrono::sys_days{to}) return;
        r.windows.push_back({std::move(name), from, to, accounting::windowed_productivity(r.rows, from, to, {}, tr.area_m2)});
    };
    add_window("campaign", first, last);
    if (tr.mode == OperatingMode::turbidostat) {
        // Steady segments between setpoint changes, leaving out the first day
        // and every change day.
        const std::chrono::days one{1};
        auto from = std::chrono::sys_days{first} + one;
        double x = 0;
        std::vector<std::pair<Date, double>> changes;
        for (const auto& e : tr.applied_setpoints) changes.emplace_back(local_date(e.t, offset), e.new_x_max);
        x = tr.daily_max.empty() ? 0.0 : tr.daily_max.begin()->second.x_max_active;
        for (const auto& [d, nx] : changes) {
            char name[32];
            std::snprintf(name, sizeof name, "x_max=%.2f", x);
            add_window(name, Date{from}, Date{std::chrono::sys_days{d} - one});
            from = std::chrono::sys_days{d} + one;
            x = nx;
        }
        char name[32];
        std::snprintf(name, sizeof name, "x_max=%.2f", x);
        add_window(name, Date{from}, last);
    }
    try {
        r.estimator = estimation::metrics(tr.estimate_at_sample, tr.dry_weights);
    } catch (const MetricsError&) {
    }
    for (const auto& sp : tr.applied_setpoints) {
        SetpointBurst b{sp.t, sp.new_x_max, std::nullopt};
        for (const auto& e : tr.events)
            if (e.t_start >= sp.t) {
                b.burst = e;
                break;
            }
        r.setpoint_bursts.push_back(b);
    }
    for (const auto& [_, d] : tr.daily_max) r.daily_max.push_back(d);
    return r;
}

// ---------------------------------------------------------------------------
// Commands

struct Command {
    enum class Kind { setpoint, mode, manual_harvest } kind = Kind::setpoint;
    std::string reactor;  // empty: first reactor
    double value = 0.0;   // x_max (g/L) or volume (L)
    OperatingMode mode = OperatingMode::turbidostat;
};

// ---------------------------------------------------------------------------

class Campaign {
public:
    using RecordSink = std::function<void(const TickRecord&)>;
    using EventSink = std::function<void(const json&)>;

    Campaign(Scenario s, estimation::CalibrationModel model)
        : s_(std::move(s)), model_(std::move(model)), irr_(make_irradiance(s_)), now_(s_.start) {
        s_.validate();
        for (std::size_t i = 0; i < s_.reactors.size(); ++i) {
            Reactor r;
            r.spec = s_.reactors[i];
            r.mode = r.spec.mode;
            r.state = {s_.start, r.spec.initial_x_gl, r.spec.reactor.volume_l};
            r.seed = sensor::cycle_seed(s_.seed, 0x5EED0000ULL + i);
            r.dw_rng.seed(sensor::cycle_seed(s_.seed, 0xD1200000ULL + i));
            r.next_cycle = s_.start;
            r.setpoints = r.spec.setpoint_events;
            r.active = r.spec.turbidostat;
            r.chem_day = s_.first_date();
            r.trace.name = r.spec.name;
            r.trace.mode = r.spec.mode;
            r.trace.volume_l = r.spec.reactor.volume_l;
            r.trace.area_m2 = r.spec.reactor.area_m2;
            r.trace.initial_x = r.spec.initial_x_gl;
            r.trace.final_x = r.spec.initial_x_gl;
            reactors_.push_back(std::move(r));
        }
    }

    void on_record(RecordSink f) { record_sinks_.push_back(std::move(f)); }
    void on_event(EventSink f) { event_sinks_.push_back(std::move(f)); }
    void keep_history(bool on) { keep_history_ = on; }

    const Scenario& scenario() const { return s_; }
    const estimation::CalibrationModel& model() const { return model_; }
    Timestamp now() const { return now_; }
    bool finished() const { return finished_; }

    std::optional<std::size_t> reactor_index(const std::string& name) const {
        if (name.empty()) return 0;
        for (std::size_t i = 0; i < reactors_.size(); ++i)
            if (reactors_[i].spec.name == name) return i;
        return std::nullopt;
    }

    /// Checks a command against current configuration without applying it.
    std::vector<std::string> command_violations(const Command& c) const {
        std::vector<std::string> v;
        const auto idx = reactor_index(c.reactor);
        if (!idx) return {"unknown reactor '" + c.reactor + "'"};
        const auto& r = reactors_[*idx];
        switch (c.kind) {
            case Command::Kind::setpoint: {
                auto trial = r.active;
                trial.x_max = c.value;
                v = trial.violations();
                break;
            }
            case Command::Kind::manual_harvest:
                if (!(c.value > 0 && c.value < r.spec.reactor.volume_l))
                    v.emplace_back("manual harvest volume_l must lie in (0, reactor volume)");
                break;
            case Command::Kind::mode: break;
        }
        return v;
    }

    /// Applies an operator command at the current tick boundary.
    void apply(const Command& c) {
        if (auto v = command_violations(c); !v.empty()) throw ValidationError(std::move(v));
        auto& r = reactors_[*reactor_index(c.reactor)];
        json ev{{"t", iso(now_)}, {"reactor", r.spec.name}, {"source", "operator"}};
        switch (c.kind) {
            case Command::Kind::setpoint: {
                control::SetpointEvent e{now_, c.value};
                // Keep the list sorted; an event at now_ goes after earlier ones at now_.
                auto it = std::upper_bound(r.setpoints.begin(), r.setpoints.end(), e,
                                           [](const auto& a, const auto& b) { return a.t < b.t; });
                r.setpoints.insert(it, e);
                ev["kind"] = "setpoint_requested";
                ev["x_max_gl"] = c.value;
                break;
            }
            case Command::Kind::mode:
                if (c.mode != r.mode) close_event(r);
                r.mode = c.mode;
                r.trace.mode = c.mode;
                if (c.mode == OperatingMode::chemostat) r.ctrl.u = 0;
                ev["kind"] = "mode";
                ev["mode"] = to_string(c.mode);
                break;
            case Command::Kind::manual_harvest:
                r.manual_remaining += c.value;
                ev["kind"] = "manual_harvest_requested";
                ev["volume_l"] = c.value;
                break;
        }
        spdlog::info("{} {}: {}", iso(now_), r.spec.name, ev.dump());
        emit(ev);
    }

    /// Advances the whole loop by one dt.
    void step() {
        if (finished_) return;
        if (now_ >= s_.end()) {
            finish();
            return;
        }
        const Timestamp t = now_;
        const bool log_tick = (t - s_.start) % s_.log_interval == Seconds{0};
        const double i0 = irr_.at(t);
        for (auto& r : reactors_) step_reactor(r, t, i0, log_tick);
        now_ += s_.dt;
        if ((now_ - s_.start) % Seconds{60} == Seconds{0}) flush();
    }

    /// Closes open events and emits the final records. Idempotent.
    void finish() {
        if (finished_) return;
        finished_ = true;
        const double i0 = irr_.at(now_);
        for (auto& r : reactors_) {
            close_event(r);
            r.trace.final_x = r.state.x_gl;
            r.trace.grown_mass_g = r.grown;
            emit_record(make_record(r, now_, i0, 0.0));
            emit({{"kind", "campaign_end"},
                  {"t", iso(now_)},
                  {"reactor", r.spec.name},
                  {"final_x_gl", r.state.x_gl},
                  {"grown_mass_g", r.grown},
                  {"overflow_mass_g", r.cum_mass}});
        }
        flush();
    }

    void run() {
        while (!finished_) step();
    }

    void add_flush_hook(std::function<void()> f) { flush_hooks_.push_back(std::move(f)); }

    std::vector<TickRecord> latest() const {
        std::vector<TickRecord> out;
        for (const auto& r : reactors_) out.push_back(r.last_record);
        return out;
    }

    const std::vector<TickRecord>& history(std::size_t idx) const { return reactors_.at(idx).history; }

    /// Report over everything simulated so far.
    CampaignReport report() const {
        CampaignReport rep;
        rep.scenario = s_.name;
        rep.seed = s_.seed;
        rep.start = s_.start;
        rep.end = s_.end();
        rep.utc_offset = s_.utc_offset;
        rep.complete = finished_;
        for (const auto& r : reactors_) {
            auto tr = r.trace;
            tr.final_x = r.state.x_gl;
            tr.true_harvest_mass_g = r.cum_mass;
            tr.grown_mass_g = r.grown;
            if (r.open) {
                auto e = *r.open;
                e.t_end = now_;
                if (e.mode == accounting::HarvestMode::chemostat) e.x_end = r.x_hat;
                tr.events.push_back(e);
            }
            rep.reactors.push_back(build_reactor_report(tr, s_.utc_offset, s_.first_date(), s_.last_date()));
        }
        return rep;
    }

    /// Ledger in the fixture format, standing biomass from the simulated truth.
    accounting::CampaignLedger ledger() const {
        accounting::CampaignLedger L;
        const auto rep = report();
        for (const auto& r : rep.reactors) {
            L.reactors.push_back(r.name);
            L.rows[r.name] = r.rows;
            accounting::ReactorSummary sum;
            sum.initial_cb = r.balance.initial_cb;
            sum.final_cb = r.balance.final_cb;
            sum.initial_standing_g = r.balance.initial_standing_g;
            sum.final_standing_g = r.balance.final_standing_g;
            sum.volume_l = r.volume_l;
            sum.area_m2 = r.area_m2;
            sum.days = r.days;
            L.summary[r.name] = sum;
            for (const auto& w : r.windows) L.windows.push_back({w.name, r.name, w.from, w.to, {}});
        }
        return L;
    }

private:
    struct PendingEstimate {
        Timestamp available{};
        double x_hat = 0.0;
    };

    struct Reactor {
        ReactorScenario spec;
        OperatingMode mode = OperatingMode::turbidostat;
        plant::ReactorState state;
        sensor::FoulingState fouling;
        std::uint64_t seed = 0;
        std::uint64_t cycle_index = 0;
        Timestamp next_cycle{};
        std::deque<PendingEstimate> pending;
        std::optional<double> x_hat;
        std::mt19937_64 dw_rng;
        control::ControllerState ctrl;
        std::vector<control::SetpointEvent> setpoints;
        std::optional<control::SetpointEvent> applied;
        std::size_t rejected_logged = 0;
        control::TurbidostatConfig active;
        Date chem_day{};
        double chem_delivered = 0.0;
        double manual_remaining = 0.0;
        std::optional<accounting::HarvestEvent> open;
        double cum_volume = 0.0;
        double cum_mass = 0.0;
        double grown = 0.0;
        TickRecord last_record;
        std::vector<TickRecord> history;
        ReactorTrace trace;
    };

    std::string iso(Timestamp t) const { return format_iso8601(t, s_.utc_offset); }

    void emit(const json& ev) {
        for (auto& f : event_sinks_) f(ev);
    }

    void emit_record(const TickRecord& rec) {
        for (auto& f : record_sinks_) f(rec);
    }

    void flush() {
        for (auto& f : flush_hooks_) f();
    }

    TickRecord make_record(Reactor& r, Timestamp t, double i0, double q) const {
        TickRecord rec;
        rec.t = t;
        rec.reactor = r.spec.name;
        rec.x_true = r.state.x_gl;
        rec.x_hat = r.x_hat;
        rec.u = q > 0 ? 1 : 0;
        rec.q_d = q;
        rec.i0 = i0;
        rec.cum_volume = r.cum_volume;
        rec.cum_mass = r.cum_mass;
        rec.mode = r.mode;
        rec.x_max_active = r.active.x_max;
        rec.x_min_active = r.active.x_min();
        r.last_record = rec;
        if (keep_history_) r.history.push_back(rec);
        return rec;
    }

    void close_event(Reactor& r) {
        if (!r.open) return;
        r.open->t_end = now_;
        if (r.open->mode == accounting::HarvestMode::chemostat) r.open->x_end = r.x_hat;
        r.trace.events.push_back(*r.open);
        emit(to_json(*r.open, r.spec.name, s_.utc_offset));
        r.open.reset();
    }

    void sense(Reactor& r, Timestamp t) {
        if (t == r.next_cycle) {
            const auto cycle = sensor::run_cycle(r.state.x_gl, s_.sensor, r.fouling,
                                                 sensor::cycle_seed(r.seed, r.cycle_index), t);
            r.fouling = cycle.fouling;
            if (!cycle.frame.blank_ok) spdlog::warn("{} {}: blank check failed", iso(t), r.spec.name);
            const auto p = estimation::predict_detailed(model_, estimation::extract_features(cycle.frame));
            r.pending.push_back({sensor::frame_available_at(t, s_.sensor), p.x_hat});
            ++r.cycle_index;
            r.next_cycle += s_.sensor.cycle_period;
        }
        while (!r.pending.empty() && r.pending.front().available <= t) {
            r.x_hat = r.pending.front().x_hat;
            r.pending.pop_front();
        }
    }

    void sample_dry_weight(Reactor& r, Timestamp t) {
        const auto tod = local_time_of_day(t, s_.utc_offset).seconds;
        for (const auto& when : s_.dry_weight.times) {
            if (tod < when.seconds || tod >= when.seconds + s_.dt.count()) continue;
            const auto dw = synthetic::dry_weight(r.state.x_gl, s_.dry_weight.sigma_gl, r.dw_rng, s_.dry_weight.replicates);
            r.trace.dry_weights.push_back({t, dw.mean});
            json ev{{"kind", "dry_weight"}, {"t", iso(t)}, {"reactor", r.spec.name}, {"mean_gl", dw.mean},
                    {"sd_gl", dw.sigma}};
            if (r.x_hat) {
                r.trace.estimate_at_sample.push_back({t, *r.x_hat});
                ev["x_hat_gl"] = *r.x_hat;
            }
            emit(ev);
        }
    }

    void update_setpoint(Reactor& r, Timestamp t) {
        const auto out = control::apply_setpoint_events(t, r.setpoints, r.spec.turbidostat);
        for (; r.rejected_logged < out.rejected.size(); ++r.rejected_logged) {
            const auto& e = out.rejected[r.rejected_logged];
            spdlog::warn("{} {}: setpoint {} rejected", iso(t), r.spec.name, e.new_x_max);
            emit({{"kind", "setpoint_rejected"}, {"t", iso(t)}, {"reactor", r.spec.name}, {"x_max_gl", e.new_x_max}});
        }
        const bool changed = out.applied && (!r.applied || r.applied->t != out.applied->t ||
                                             r.applied->new_x_max != out.applied->new_x_max);
        if (changed) {
            r.applied = out.applied;
            r.trace.applied_setpoints.push_back(*out.applied);
            spdlog::info("{} {}: x_max -> {}", iso(t), r.spec.name, out.cfg.x_max);
            emit({{"kind", "setpoint_applied"},
                  {"t", iso(t)},
                  {"reactor", r.spec.name},
                  {"x_max_gl", out.cfg.x_max},
                  {"x_min_gl", out.cfg.x_min()},
                  {"tie", out.tie}});
        }
        r.active = out.cfg;
    }

    void step_reactor(Reactor& r, Timestamp t, double i0, bool log_tick) {
        sense(r, t);
        sample_dry_weight(r, t);
        update_setpoint(r, t);

        const Date today = local_date(t, s_.utc_offset);
        if (today != r.chem_day) {
            r.chem_day = today;
            r.chem_delivered = 0.0;
        }

        double q = 0.0;
        auto kind = accounting::HarvestMode::turbidostat;
        if (r.manual_remaining > 0 && r.x_hat) {
            q = std::min(r.active.q_max, r.manual_remaining * 60.0 / static_cast<double>(s_.dt.count()));
            kind = accounting::HarvestMode::manual;
        } else if (r.mode == OperatingMode::turbidostat) {
            // No estimate yet: hold the pump off rather than fault.
            if (r.x_hat) {
                const auto prev_fault = r.ctrl.fault;
                r.ctrl = control::turbidostat_step(*r.x_hat, t, r.active, r.ctrl);
                if (r.ctrl.fault && !prev_fault) emit({{"kind", "fault"}, {"t", iso(t)}, {"reactor", r.spec.name}});
            }
            q = control::dilution_flow(r.ctrl, r.active);
        } else {
            q = control::chemostat_flow(t, r.spec.chemostat, r.chem_delivered, r.state.volume_l, s_.dt);
            kind = accounting::HarvestMode::chemostat;
        }

        if (r.open && (q <= 0 || r.open->mode != kind)) close_event(r);
        if (q > 0 && !r.open) {
            accounting::HarvestEvent e;
            e.t_start = t;
            e.mode = kind;
            e.x_start = r.x_hat;
            r.open = e;
        }

        if (log_tick) emit_record(make_record(r, t, i0, q));

        const auto res = plant::step(r.state, {t, i0}, q, s_.dt, r.spec.reactor, r.spec.growth);
        r.state = res.state;
        r.cum_volume += res.overflow.volume_l;
        r.cum_mass += res.overflow.mass_g;
        r.grown += res.grown_mass_g;
        if (r.open) r.open->volume_l += res.overflow.volume_l;
        if (kind == accounting::HarvestMode::chemostat) r.chem_delivered += res.overflow.volume_l;
        if (kind == accounting::HarvestMode::manual) r.manual_remaining = std::max(0.0, r.manual_remaining - res.overflow.volume_l);

        if (r.x_hat) {
            auto& dm = r.trace.daily_max[today];
            dm.date = today;
            dm.x_hat_max = std::max(dm.x_hat_max, *r.x_hat);
            dm.x_max_active = std::max(dm.x_max_active, r.active.x_max);
        }
    }

    Scenario s_;
    estimation::CalibrationModel model_;
    plant::IrradianceSeries irr_;
    Timestamp now_;
    bool finished_ = false;
    bool keep_history_ = false;
    std::vector<Reactor> reactors_;
    std::vector<RecordSink> record_sinks_;
    std::vector<EventSink> event_sinks_;
    std::vector<std::function<void()>> flush_hooks_;
};

// ---------------------------------------------------------------------------
// Log files

/// Append-only campaign logs: campaign.json, ticks_<reactor>.jsonl, events.jsonl.
class LogWriter {
public:
    LogWriter(const std::filesystem::path& dir, const Campaign& c) : dir_(dir), offset_(c.scenario().utc_offset) {
        std::filesystem::create_directories(dir_);
        json meta = to_json(c.scenario());
        meta["estimator_model"] = to_json(c.model());
        std::ofstream(dir_ / "campaign.json") << meta.dump(2) << '\n';
        for (const auto& r : c.scenario().reactors) {
            auto& f = ticks_[r.name];
            f.open(dir_ / ("ticks_" + r.name + ".jsonl"), std::ios::trunc);
            if (!f) throw Error("cannot write tick log in " + dir_.string());
        }
        events_.open(dir_ / "events.jsonl", std::ios::trunc);
        if (!events_) throw Error("cannot write event log in " + dir_.string());
    }

    void attach(Campaign& c) {
        c.on_record([this](const TickRecord& r) { ticks_.at(r.reactor) << to_json(r, offset_).dump() << '\n'; });
        c.on_event([this](const json& e) { events_ << e.dump() << '\n'; });
        c.add_flush_hook([this] { flush(); });
    }

    void flush() {
        for (auto& [_, f] : ticks_) f.flush();
        events_.flush();
    }

    void write_summary(const Campaign& c) {
        std::ofstream(dir_ / "report.json") << to_json(c.report()).dump(2) << '\n';
        std::ofstream ledger(dir_ / "ledger.csv");
        accounting::write_ledger(ledger, c.ledger());
    }

private:
    std::filesystem::path dir_;
    Seconds offset_;
    std::map<std::string, std::ofstream> ticks_;
    std::ofstream events_;
};

/// Runs a scenario to completion. With an output directory, logs are written
/// as the run goes and flushed on failure before rethrowing.
inline CampaignReport run_scenario(const Scenario& s, const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                   std::optional<estimation::CalibrationModel> model = std::nullopt) {
    Campaign c(s, model ? std::move(*model) : load_or_calibrate(s));
    std::optional<LogWriter> logs;
    if (out_dir) {
        logs.emplace(*out_dir, c);
        logs->attach(c);
    }
    try {
        c.run();
    } catch (...) {
        if (logs) logs->flush();
        throw;
    }
    if (logs) logs->write_summary(c);
    return c.report();
}

// ---------------------------------------------------------------------------
// Reloading logs

/// Reads a JSONL file; a malformed final line (interrupted write) is dropped,
/// a malformed earlier line is an error.
inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open '" + path.string() + "'");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(std::move(line));
    std::vector<json> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            out.push_back(json::parse(lines[i]));
        } catch (const json::parse_error&) {
            if (i + 1 == lines.size()) {
                spdlog::warn("{}: dropping truncated final line", path.string());
                break;
            }
            throw IngestionError("malformed JSON in " + path.filename().string(), i + 1);
        }
    }
    return out;
}

inline std::vector<TickRecord> load_ticks(const std::filesystem::path& path) {
    std::vector<TickRecord> out;
    std::size_t line = 0;
    for (const auto& j : read_jsonl(path)) {
        ++line;
        try {
            out.push_back(tick_from_json(j));
        } catch (const json::exception& e) {
            throw IngestionError(std::string("bad tick record: ") + e.what(), line);
        }
    }
    return out;
}

/// Rebuilds the campaign report from a log directory written by run_scenario.
inline CampaignReport report_from_logs(const std::filesystem::path& dir) {
    std::ifstream meta_in(dir / "campaign.json");
    if (!meta_in) throw IngestionError("no campaign.json in '" + dir.string() + "'");
    json meta;
    try {
        meta = json::parse(meta_in);
    } catch (const json::parse_error& e) {
        throw IngestionError(std::string("campaign.json: ") + e.what());
    }
    meta.erase("estimator_model");
    const Scenario s = parse_scenario(meta);
    const auto events = read_jsonl(dir / "events.jsonl");

    CampaignReport rep;
    rep.scenario = s.name;
    rep.seed = s.seed;
    rep.start = s.start;
    rep.end = s.end();
    rep.utc_offset = s.utc_offset;
    rep.complete = false;
    for (const auto& rs : s.reactors) {
        ReactorTrace tr;
        tr.name = rs.name;
        tr.mode = rs.mode;
        tr.volume_l = rs.reactor.volume_l;
        tr.area_m2 = rs.reactor.area_m2;
        const auto ticks = load_ticks(dir / ("ticks_" + rs.name + ".jsonl"));
        if (ticks.empty()) throw IngestionError("tick log for " + rs.name + " is empty");
        tr.initial_x = ticks.front().x_true;
        tr.final_x = ticks.back().x_true;
        tr.true_harvest_mass_g = ticks.back().cum_mass;
        tr.mode = ticks.back().mode;
        for (const auto& t : ticks)
            if (t.x_hat && t.t < s.end()) {
                const Date d = local_date(t.t, s.utc_offset);
                auto& dm = tr.daily_max[d];
                dm.date = d;
                dm.x_hat_max = std::max(dm.x_hat_max, *t.x_hat);
                dm.x_max_active = std::max(dm.x_max_active, t.x_max_active);
            }
        std::size_t line = 0;
        for (const auto& e : events) {
            ++line;
            if (e.value("reactor", "") != rs.name) continue;
            try {
                const std::string kind = e.at("kind").get<std::string>();
                const Timestamp t = parse_iso8601(e.at("t").get<std::string>()).t;
                if (kind == "harvest") tr.events.push_back(harvest_from_json(e));
                else if (kind == "setpoint_applied") tr.applied_setpoints.push_back({t, e.at("x_max_gl").get<double>()});
                else if (kind == "dry_weight") {
                    tr.dry_weights.push_back({t, e.at("mean_gl").get<double>()});
                    if (e.contains("x_hat_gl")) tr.estimate_at_sample.push_back({t, e.at("x_hat_gl").get<double>()});
                } else if (kind == "campaign_end") {
                    tr.grown_mass_g = e.at("grown_mass_g").get<double>();
                    rep.complete = true;
                }
            } catch (const json::exception& ex) {
                throw IngestionError(std::string("bad event: ") + ex.what(), line);
            }
        }
        rep.reactors.push_back(build_reactor_report(tr, s.utc_offset, s.first_date(), s.last_date()));
    }
    return rep;
}

/// Human-readable summary of a report.
inline std::string format_report(const CampaignReport& rep) {
    std::ostringstream out;
    char buf[160];
    out << "campaign " << rep.scenario << " (seed " << rep.seed << ")  " << format_iso8601(rep.start, rep.utc_offset)
        << " to " << format_iso8601(rep.end, rep.utc_offset) << (rep.complete ? "" : "  [incomplete]") << '\n';
    for (const auto& r : rep.reactors) {
        out << '\n' << r.name << " (" << to_string(r.mode) << "), " << r.harvest_events << " harvest events\n";
        out << "  date         volume_l     mass_g\n";
        for (const auto& d : r.rows) {
            std::snprintf(buf, sizeof buf, "  %s %10.2f %10.2f\n", format_date(d.date).c_str(), d.harvested_volume_l,
                          d.harvested_mass_g);
            out << buf;
        }
        const auto& b = r.balance;
        std::snprintf(buf, sizeof buf, "  total harvested            %10.2f L %10.2f g\n", b.total_volume_l,
                      b.total_mass_g);
        out << buf;
        std::snprintf(buf, sizeof buf, "  standing biomass           %10.2f g -> %.2f g\n", b.initial_standing_g,
                      b.final_standing_g);
        out << buf;
        std::snprintf(buf, sizeof buf, "  net production             %10.2f g  (%.2f g/m2/d)\n", b.net_production_g,
                      b.net_areal_productivity);
        out << buf;
        std::snprintf(buf, sizeof buf, "  net production, outlet     %10.2f g  (%.2f g/m2/d)\n",
                      r.true_balance.net_production_g, r.true_balance.net_areal_productivity);
        out << buf;
        if (r.grown_mass_g) {
            std::snprintf(buf, sizeof buf, "  grown biomass              %10.2f g  (residual %.2e g)\n", *r.grown_mass_g,
                          r.true_balance.net_production_g - *r.grown_mass_g);
            out << buf;
        }
        for (const auto& w : r.windows) {
            std::snprintf(buf, sizeof buf, "  window %-12s %s..%s  %2d d  %.2f g/m2/d\n", w.name.c_str(),
                          format_date(w.from).c_str(), format_date(w.to).c_str(), w.result.days, w.result.productivity);
            out << buf;
        }
        if (r.estimator) {
            std::snprintf(buf, sizeof buf, "  estimator vs dry weight    MAE %.4f  RMSE %.4f g/L  (n=%zu)\n",
                          r.estimator->mae, r.estimator->rmse, r.estimator->n);
            out << buf;
        }
        for (const auto& sp : r.setpoint_bursts) {
            out << "  setpoint " << format_iso8601(sp.setpoint_t, rep.utc_offset) << " -> " << sp.new_x_max;
            if (sp.burst) {
                std::snprintf(buf, sizeof buf, ": first harvest %.1f L", sp.burst->volume_l);
                out << buf;
            }
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace raceway::supervisor
