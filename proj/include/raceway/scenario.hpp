#pragma once

// Campaign scenario documents (JSON). Missing sections fall back to library
// defaults; unknown keys are violations so typos do not pass silently.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "raceway/control.hpp"
#include "raceway/errors.hpp"
#include "raceway/plant.hpp"
#include "raceway/sensor.hpp"
#include "raceway/time.hpp"

namespace raceway {

enum class OperatingMode { turbidostat, chemostat };

inline std::string to_string(OperatingMode m) { return m == OperatingMode::turbidostat ? "turbidostat" : "chemostat"; }

inline std::optional<OperatingMode> operating_mode_from_string(const std::string& s) {
    if (s == "turbidostat") return OperatingMode::turbidostat;
    if (s == "chemostat") return OperatingMode::chemostat;
    return std::nullopt;
}

struct IrradianceSpec {
    std::optional<std::string> file;  // CSV timestamp,irradiance_wm2
    double peak_wm2 = 950.0;
    TimeOfDay sunrise{7 * 3600 + 15 * 60};
    TimeOfDay sunset{21 * 3600 + 15 * 60};
};

struct EstimatorSpec {
    std::optional<std::string> model_file;  // absent: calibrate on a synthetic campaign
    std::size_t calibration_samples = 60;
};

struct DryWeightSpec {
    double sigma_gl = 0.02;
    int replicates = 3;
    std::vector<TimeOfDay> times{TimeOfDay{8 * 3600}, TimeOfDay{14 * 3600}};
};

struct ReactorScenario {
    std::string name = "rw5";
    OperatingMode mode = OperatingMode::turbidostat;
    double initial_x_gl = 1.0;
    plant::ReactorParams reactor;
    plant::GrowthParams growth;
    control::TurbidostatConfig turbidostat;
    control::ChemostatSchedule chemostat;
    std::vector<control::SetpointEvent> setpoint_events;
};

struct Scenario {
    std::string name = "campaign";
    Timestamp start{};
    Seconds utc_offset{0};
    double duration_days = 1.0;
    Seconds dt{1};
    Seconds log_interval{10};
    double time_acceleration = 1.0;
    std::uint64_t seed = 1;
    IrradianceSpec irradiance;
    sensor::SensorConfig sensor = sensor::SensorConfig::defaults();
    EstimatorSpec estimator;
    DryWeightSpec dry_weight;
    std::vector<ReactorScenario> reactors;

    Seconds duration() const { return Seconds{std::llround(duration_days * 86400.0)}; }
    Timestamp end() const { return start + duration(); }
    Date first_date() const { return local_date(start, utc_offset); }
    Date last_date() const { return local_date(end() - Seconds{1}, utc_offset); }
    int campaign_days() const {
        return static_cast<int>((std::chrono::sys_days{last_date()} - std::chrono::sys_days{first_date()}).count()) + 1;
    }

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (!(duration_days > 0 && std::isfinite(duration_days))) v.emplace_back("duration_days must be positive");
        if (dt <= Seconds{0} || dt > plant::kMaxStep) v.emplace_back("dt_s must lie in (0, 60]");
        if (log_interval <= Seconds{0} || (dt > Seconds{0} && log_interval % dt != Seconds{0}))
            v.emplace_back("log_interval_s must be a positive multiple of dt_s");
        if (dt > Seconds{0} && duration() % dt != Seconds{0}) v.emplace_back("duration must be a whole number of steps");
        if (!(time_acceleration >= 1)) v.emplace_back("time_acceleration must be >= 1");
        if (!(irradiance.peak_wm2 >= 0)) v.emplace_back("irradiance.peak_wm2 must be >= 0");
        if (!(irradiance.sunrise < irradiance.sunset)) v.emplace_back("irradiance.sunrise must precede sunset");
        if (!(dry_weight.sigma_gl >= 0)) v.emplace_back("dry_weight.sigma_gl must be >= 0");
        if (dry_weight.replicates < 1) v.emplace_back("dry_weight.replicates must be >= 1");
        if (estimator.calibration_samples < 5) v.emplace_back("estimator.calibration_samples must be >= 5");
        for (auto& s : sensor.violations()) v.push_back(s);
        if (reactors.empty()) v.emplace_back("scenario needs at least one reactor");
        std::set<std::string> names;
        for (const auto& r : reactors) {
            const std::string p = "reactor '" + r.name + "': ";
            if (r.name.empty()) v.emplace_back("reactor name must not be empty");
            if (!names.insert(r.name).second) v.push_back(p + "duplicate name");
            if (!(r.initial_x_gl >= 0 && std::isfinite(r.initial_x_gl))) v.push_back(p + "initial_x_gl must be >= 0");
            try {
                r.reactor.validate();
            } catch (const Error& e) {
                v.push_back(p + e.what());
            }
            try {
                r.growth.validate();
            } catch (const Error& e) {
                v.push_back(p + e.what());
            }
            for (auto& s : r.turbidostat.violations()) v.push_back(p + s);
            for (auto& s : r.chemostat.violations()) v.push_back(p + s);
            for (std::size_t i = 0; i < r.setpoint_events.size(); ++i) {
                if (i && r.setpoint_events[i].t < r.setpoint_events[i - 1].t)
                    v.push_back(p + "setpoint_events must be sorted by time");
                auto trial = r.turbidostat;
                trial.x_max = r.setpoint_events[i].new_x_max;
                for (auto& s : trial.violations()) v.push_back(p + "setpoint event " + std::to_string(i) + ": " + s);
            }
        }
        return v;
    }
    void validate() const {
        if (auto v = violations(); !v.empty()) throw ValidationError(std::move(v));
    }
};

namespace detail {

/// Pulls typed fields out of a JSON object, collecting every problem instead
/// of stopping at the first.
class Reader {
public:
    Reader(const nlohmann::json& obj, std::string path, std::vector<std::string>& errors)
        : obj_(obj), path_(std::move(path)), errors_(errors) {
        if (!obj_.is_object()) errors_.push_back(where("") + "must be an object");
    }

    ~Reader() {
        if (!obj_.is_object()) return;
        for (const auto& [k, _] : obj_.items())
            if (!seen_.contains(k)) errors_.push_back(where(k) + "unknown key");
    }
    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;

    bool has(const std::string& key) {
        seen_.insert(key);
        return obj_.is_object() && obj_.contains(key);
    }

    const nlohmann::json* child(const std::string& key) { return has(key) ? &obj_.at(key) : nullptr; }

    std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void number(const std::string& key, double& out) {
        if (!has(key)) return;
        const auto& j = obj_.at(key);
        if (j.is_number()) out = j.get<double>();
        else errors_.push_back(where(key) + "must be a number");
    }

    template <class Int>
    void integer(const std::string& key, Int& out) {
        if (!has(key)) return;
        const auto& j = obj_.at(key);
        if (j.is_number_integer() && (std::is_signed_v<Int> || j.get<std::int64_t>() >= 0)) out = j.get<Int>();
        else errors_.push_back(where(key) + "must be a non-negative integer");
    }

    void seconds(const std::string& key, Seconds& out) {
        std::int64_t s = out.count();
        integer(key, s);
        out = Seconds{s};
    }

    void string(const std::string& key, std::string& out) {
        if (!has(key)) return;
        const auto& j = obj_.at(key);
        if (j.is_string()) out = j.get<std::string>();
        else errors_.push_back(where(key) + "must be a string");
    }

    void optional_string(const std::string& key, std::optional<std::string>& out) {
        std::string s;
        if (!has(key)) return;
        string(key, s);
        out = s;
    }

    void time_of_day(const std::string& key, TimeOfDay& out) {
        std::string s;
        if (!has(key)) return;
        string(key, s);
        try {
            out = parse_time_of_day(s);
        } catch (const Error& e) {
            errors_.push_back(where(key) + e.what());
        }
    }

    void timestamp(const std::string& key, Timestamp& out, Seconds* offset = nullptr) {
        std::string s;
        if (!has(key)) return;
        string(key, s);
        try {
            const auto p = parse_iso8601(s);
            out = p.t;
            if (offset) *offset = p.utc_offset;
        } catch (const Error& e) {
            errors_.push_back(where(key) + e.what());
        }
    }

    void numbers(const std::string& key, std::vector<double>& out) {
        if (!has(key)) return;
        const auto& j = obj_.at(key);
        if (!j.is_array()) {
            errors_.push_back(where(key) + "must be an array of numbers");
            return;
        }
        std::vector<double> v;
        for (const auto& e : j) {
            if (e.is_number()) v.push_back(e.get<double>());
            else if (e.is_string() && e.get<std::string>() == "inf") v.push_back(std::numeric_limits<double>::infinity());
            else {
                errors_.push_back(where(key) + "must be an array of numbers");
                return;
            }
        }
        out = std::move(v);
    }

    std::string where(const std::string& key) const {
        const std::string p = key.empty() ? path_ : child_path(key);
        return (p.empty() ? std::string("scenario") : p) + ": ";
    }

    std::vector<std::string>& errors() { return errors_; }

private:
    const nlohmann::json& obj_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

inline void read_turbidostat(Reader& r, control::TurbidostatConfig& c) {
    r.number("x_max_gl", c.x_max);
    r.number("hysteresis_gl", c.hysteresis);
    r.time_of_day("light_start", c.light_start);
    r.time_of_day("light_end", c.light_end);
    r.number("q_max_lpm", c.q_max);
}

inline void read_chemostat(Reader& r, control::ChemostatSchedule& c) {
    r.number("daily_fraction", c.daily_fraction);
    r.time_of_day("start_time", c.start_time);
    r.number("q_rate_lpm", c.q_rate);
    if (const auto* days = r.child("operating_days")) {
        if (!days->is_array()) {
            r.errors().push_back(r.where("operating_days") + "must be an array of dates");
            return;
        }
        c.operating_days.clear();
        for (const auto& d : *days) {
            try {
                c.operating_days.insert(parse_date(d.is_string() ? d.get<std::string>() : std::string()));
            } catch (const Error& e) {
                r.errors().push_back(r.where("operating_days") + e.what());
            }
        }
    }
}

inline void read_sensor(Reader& r, sensor::SensorConfig& c) {
    r.seconds("cycle_period_s", c.cycle_period);
    r.seconds("cycle_duration_s", c.cycle_duration);
    std::size_t n_abs = c.n_abs_channels(), n_fluo = c.n_fluo_channels();
    const bool resize = r.has("n_abs_channels") || r.has("n_fluo_channels");
    r.integer("n_abs_channels", n_abs);
    r.integer("n_fluo_channels", n_fluo);
    if (resize) {
        const auto d = sensor::SensorConfig::defaults(n_abs, n_fluo);
        c.abs_gain = d.abs_gain;
        c.abs_saturation = d.abs_saturation;
        c.fluo_gain = d.fluo_gain;
    }
    r.numbers("abs_gain", c.abs_gain);
    r.numbers("abs_saturation_gl", c.abs_saturation);
    r.numbers("fluo_gain", c.fluo_gain);
    r.number("fluo_quench", c.fluo_quench);
    r.number("noise_sigma", c.noise_sigma);
    r.number("fouling_rate", c.fouling_rate);
    r.number("flush_efficiency", c.flush_efficiency);
    r.number("blank_tolerance", c.blank_tolerance);
}

inline ReactorScenario read_reactor(const nlohmann::json& j, const std::string& path, const Scenario& s,
                                    std::vector<std::string>& errors) {
    ReactorScenario rs;
    Reader r(j, path, errors);
    r.string("name", rs.name);
    std::string mode = to_string(rs.mode);
    r.string("mode", mode);
    if (auto m = operating_mode_from_string(mode)) rs.mode = *m;
    else errors.push_back(r.where("mode") + "must be 'turbidostat' or 'chemostat'");
    r.number("initial_x_gl", rs.initial_x_gl);

    if (const auto* g = r.child("geometry")) {
        Reader gr(*g, r.child_path("geometry"), errors);
        double area = rs.reactor.area_m2, depth = rs.reactor.depth_m;
        gr.number("area_m2", area);
        gr.number("depth_m", depth);
        if (area > 0 && depth > 0) rs.reactor = plant::ReactorParams::from_geometry(area, depth);
        else errors.push_back(gr.where("") + "area_m2 and depth_m must be positive");
    }
    if (const auto* g = r.child("growth")) {
        Reader gr(*g, r.child_path("growth"), errors);
        gr.number("mu_max_per_d", rs.growth.mu_max);
        gr.number("k_i_wm2", rs.growth.k_i);
        gr.number("extinction_m2_per_g", rs.growth.extinction);
        gr.number("maintenance_per_d", rs.growth.maintenance);
    }
    rs.turbidostat.utc_offset = s.utc_offset;
    if (const auto* t = r.child("turbidostat")) {
        Reader tr(*t, r.child_path("turbidostat"), errors);
        read_turbidostat(tr, rs.turbidostat);
    }
    rs.chemostat.utc_offset = s.utc_offset;
    for (auto d = std::chrono::sys_days{s.first_date()}; d <= std::chrono::sys_days{s.last_date()};
         d += std::chrono::days{1})
        rs.chemostat.operating_days.insert(Date{d});
    if (const auto* c = r.child("chemostat")) {
        Reader cr(*c, r.child_path("chemostat"), errors);
        read_chemostat(cr, rs.chemostat);
    }
    if (const auto* ev = r.child("setpoint_events")) {
        if (!ev->is_array()) errors.push_back(r.where("setpoint_events") + "must be an array");
        else
            for (std::size_t i = 0; i < ev->size(); ++i) {
                Reader er((*ev)[i], r.child_path("setpoint_events") + "[" + std::to_string(i) + "]", errors);
                control::SetpointEvent e;
                if (!er.has("t") || !er.has("x_max_gl"))
                    errors.push_back(er.where("") + "needs 't' and 'x_max_gl'");
                er.timestamp("t", e.t);
                er.number("x_max_gl", e.new_x_max);
                rs.setpoint_events.push_back(e);
            }
    }
    return rs;
}

}  // namespace detail

/// Parses a scenario document. Relative file paths are resolved against base_dir.
/// Throws ValidationError listing every problem found.
inline Scenario parse_scenario(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    Scenario s;
    std::vector<std::string> errors;
    {
        detail::Reader r(j, "", errors);
        r.string("name", s.name);
        if (!r.has("start")) errors.emplace_back("scenario: 'start' is required");
        r.timestamp("start", s.start, &s.utc_offset);
        r.number("duration_days", s.duration_days);
        r.seconds("dt_s", s.dt);
        r.seconds("log_interval_s", s.log_interval);
        r.number("time_acceleration", s.time_acceleration);
        r.integer("seed", s.seed);

        if (const auto* irr = r.child("irradiance")) {
            detail::Reader ir(*irr, "irradiance", errors);
            ir.optional_string("file", s.irradiance.file);
            ir.number("peak_wm2", s.irradiance.peak_wm2);
            ir.time_of_day("sunrise", s.irradiance.sunrise);
            ir.time_of_day("sunset", s.irradiance.sunset);
            if (s.irradiance.file && !base_dir.empty() && std::filesystem::path(*s.irradiance.file).is_relative())
                s.irradiance.file = (base_dir / *s.irradiance.file).string();
        }
        if (const auto* sen = r.child("sensor")) {
            detail::Reader sr(*sen, "sensor", errors);
            detail::read_sensor(sr, s.sensor);
        }
        if (const auto* est = r.child("estimator")) {
            detail::Reader er(*est, "estimator", errors);
            er.optional_string("model_file", s.estimator.model_file);
            er.integer("calibration_samples", s.estimator.calibration_samples);
            if (s.estimator.model_file && !base_dir.empty() &&
                std::filesystem::path(*s.estimator.model_file).is_relative())
                s.estimator.model_file = (base_dir / *s.estimator.model_file).string();
        }
        if (const auto* dw = r.child("dry_weight")) {
            detail::Reader dr(*dw, "dry_weight", errors);
            dr.number("sigma_gl", s.dry_weight.sigma_gl);
            dr.integer("replicates", s.dry_weight.replicates);
            if (const auto* times = dr.child("times")) {
                s.dry_weight.times.clear();
                if (!times->is_array()) errors.emplace_back("dry_weight.times: must be an array of HH:MM strings");
                else
                    for (const auto& t : *times) {
                        try {
                            s.dry_weight.times.push_back(
                                parse_time_of_day(t.is_string() ? t.get<std::string>() : std::string()));
                        } catch (const Error& e) {
                            errors.push_back(std::string("dry_weight.times: ") + e.what());
                        }
                    }
            }
        }
        if (const auto* rs = r.child("reactors")) {
            if (!rs->is_array()) errors.emplace_back("reactors: must be an array");
            else
                for (std::size_t i = 0; i < rs->size(); ++i)
                    s.reactors.push_back(
                        detail::read_reactor((*rs)[i], "reactors[" + std::to_string(i) + "]", s, errors));
        }
    }
    for (auto& v : s.violations()) errors.push_back(std::move(v));
    if (!errors.empty()) throw ValidationError(std::move(errors));
    return s;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open scenario '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw IngestionError(std::string("scenario is not valid JSON: ") + e.what());
    }
    return parse_scenario(j, std::filesystem::path(path).parent_path());
}

namespace detail {

inline nlohmann::json numbers_json(const std::vector<double>& v) {
    auto a = nlohmann::json::array();
    for (double x : v) a.push_back(std::isinf(x) ? nlohmann::json("inf") : nlohmann::json(x));
    return a;
}

}  // namespace detail

/// Fully resolved document; parse_scenario(to_json(s)) reproduces s.
inline nlohmann::json to_json(const Scenario& s) {
    using nlohmann::json;
    json j;
    j["name"] = s.name;
    j["start"] = format_iso8601(s.start, s.utc_offset);
    j["duration_days"] = s.duration_days;
    j["dt_s"] = s.dt.count();
    j["log_interval_s"] = s.log_interval.count();
    j["time_acceleration"] = s.time_acceleration;
    j["seed"] = s.seed;
    j["irradiance"] = {{"peak_wm2", s.irradiance.peak_wm2},
                       {"sunrise", format_time_of_day(s.irradiance.sunrise)},
                       {"sunset", format_time_of_day(s.irradiance.sunset)}};
    if (s.irradiance.file) j["irradiance"]["file"] = *s.irradiance.file;
    const auto& c = s.sensor;
    j["sensor"] = {{"cycle_period_s", c.cycle_period.count()},
                   {"cycle_duration_s", c.cycle_duration.count()},
                   {"abs_gain", detail::numbers_json(c.abs_gain)},
                   {"abs_saturation_gl", detail::numbers_json(c.abs_saturation)},
                   {"fluo_gain", detail::numbers_json(c.fluo_gain)},
                   {"fluo_quench", c.fluo_quench},
                   {"noise_sigma", c.noise_sigma},
                   {"fouling_rate", c.fouling_rate},
                   {"flush_efficiency", c.flush_efficiency},
                   {"blank_tolerance", c.blank_tolerance}};
    j["estimator"] = {{"calibration_samples", s.estimator.calibration_samples}};
    if (s.estimator.model_file) j["estimator"]["model_file"] = *s.estimator.model_file;
    j["dry_weight"] = {{"sigma_gl", s.dry_weight.sigma_gl}, {"replicates", s.dry_weight.replicates}};
    j["dry_weight"]["times"] = json::array();
    for (auto t : s.dry_weight.times) j["dry_weight"]["times"].push_back(format_time_of_day(t));
    j["reactors"] = json::array();
    for (const auto& r : s.reactors) {
        json rj;
        rj["name"] = r.name;
        rj["mode"] = to_string(r.mode);
        rj["initial_x_gl"] = r.initial_x_gl;
        rj["geometry"] = {{"area_m2", r.reactor.area_m2}, {"depth_m", r.reactor.depth_m}};
        rj["growth"] = {{"mu_max_per_d", r.growth.mu_max},
                        {"k_i_wm2", r.growth.k_i},
                        {"extinction_m2_per_g", r.growth.extinction},
                        {"maintenance_per_d", r.growth.maintenance}};
        rj["turbidostat"] = {{"x_max_gl", r.turbidostat.x_max},
                             {"hysteresis_gl", r.turbidostat.hysteresis},
                             {"light_start", format_time_of_day(r.turbidostat.light_start)},
                             {"light_end", format_time_of_day(r.turbidostat.light_end)},
                             {"q_max_lpm", r.turbidostat.q_max}};
        rj["chemostat"] = {{"daily_fraction", r.chemostat.daily_fraction},
                           {"start_time", format_time_of_day(r.chemostat.start_time)},
                           {"q_rate_lpm", r.chemostat.q_rate}};
        rj["chemostat"]["operating_days"] = json::array();
        for (const auto& d : r.chemostat.operating_days) rj["chemostat"]["operating_days"].push_back(format_date(d));
        rj["setpoint_events"] = json::array();
        for (const auto& e : r.setpoint_events)
            rj["setpoint_events"].push_back({{"t", format_iso8601(e.t, s.utc_offset)}, {"x_max_gl", e.new_x_max}});
        j["reactors"].push_back(std::move(rj));
    }
    return j;
}

}  // namespace raceway
