#pragma once

// Constrained hysteresis turbidostat and fixed-fraction chemostat.
//
// Turbidostat dilution state:
//   u = 1       if x_hat > x_max and t in the daylight window
//   u = 0       if x_hat < x_min or t outside the window
//   u = u_prev  otherwise
// with Q_d = u * q_max. Equality with either threshold holds the state.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "raceway/errors.hpp"
#include "raceway/time.hpp"

namespace raceway::control {

struct TurbidostatConfig {
    double x_max = 1.0;       // g/L
    double hysteresis = 0.05; // g/L, x_min = x_max - hysteresis
    TimeOfDay light_start{9 * 3600};
    TimeOfDay light_end{20 * 3600};  // exclusive
    double q_max = 15.0;      // L/min
    Seconds utc_offset{0};    // campaign clock

    double x_min() const { return x_max - hysteresis; }

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (!(hysteresis > 0 && hysteresis < x_max && std::isfinite(x_max)))
            v.emplace_back("turbidostat: need 0 < hysteresis < x_max");
        if (!(light_start < light_end)) v.emplace_back("turbidostat: light_start must precede light_end");
        if (!(q_max > 0 && std::isfinite(q_max))) v.emplace_back("turbidostat: q_max must be positive");
        return v;
    }
    void validate() const {
        if (auto v = violations(); !v.empty()) throw ValidationError(std::move(v));
    }
};

struct ControllerState {
    int u = 0;
    Timestamp last_change{};
    std::uint64_t rising_edges = 0;
    std::uint64_t falling_edges = 0;
    bool fault = false;
};

inline bool in_light_window(Timestamp t, const TurbidostatConfig& cfg) {
    const TimeOfDay tod = local_time_of_day(t, cfg.utc_offset);
    return cfg.light_start <= tod && tod < cfg.light_end;
}

inline ControllerState turbidostat_step(double x_hat, Timestamp t, const TurbidostatConfig& cfg,
                                        const ControllerState& prev) {
    ControllerState next = prev;
    int u = prev.u;
    if (std::isnan(x_hat)) {
        next.fault = true;
        u = 0;
    } else {
        if (x_hat < 0) throw ParameterError("turbidostat: estimate must be clamped to >= 0");
        next.fault = false;
        const bool light = in_light_window(t, cfg);
        if (x_hat > cfg.x_max && light)
            u = 1;
        else if (x_hat < cfg.x_min() || !light)
            u = 0;
    }
    if (u != prev.u) {
        next.last_change = t;
        (u ? next.rising_edges : next.falling_edges)++;
    }
    next.u = u;
    return next;
}

/// Bang-bang dilution flow, L/min.
inline double dilution_flow(const ControllerState& s, const TurbidostatConfig& cfg) {
    return s.u ? cfg.q_max : 0.0;
}

// ---------------------------------------------------------------------------

struct ChemostatSchedule {
    std::set<Date> operating_days;
    double daily_fraction = 0.20;
    TimeOfDay start_time{10 * 3600};
    double q_rate = 15.0;  // L/min
    Seconds utc_offset{0};

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (!(daily_fraction > 0 && daily_fraction < 1)) v.emplace_back("chemostat: daily_fraction must lie in (0, 1)");
        if (!(q_rate > 0 && std::isfinite(q_rate))) v.emplace_back("chemostat: q_rate must be positive");
        return v;
    }
    void validate() const {
        if (auto v = violations(); !v.empty()) throw ValidationError(std::move(v));
    }
};

/// Chemostat flow at t given the volume already delivered on t's local date.
/// With a step length, the final step is cut so the day total lands exactly
/// on daily_fraction * V.
inline double chemostat_flow(Timestamp t, const ChemostatSchedule& sched, double delivered_today_l, double volume_l,
                             std::optional<Seconds> dt = std::nullopt) {
    if (delivered_today_l < 0) throw ParameterError("chemostat: delivered volume must be >= 0");
    if (!sched.operating_days.contains(local_date(t, sched.utc_offset))) return 0.0;
    if (local_time_of_day(t, sched.utc_offset) < sched.start_time) return 0.0;
    const double remaining = sched.daily_fraction * volume_l - delivered_today_l;
    if (!(remaining > 0)) return 0.0;
    if (dt) return std::min(sched.q_rate, remaining * 60.0 / static_cast<double>(dt->count()));
    return sched.q_rate;
}

// ---------------------------------------------------------------------------

struct SetpointEvent {
    Timestamp t{};
    double new_x_max = 0.0;
};

struct SetpointOutcome {
    TurbidostatConfig cfg;
    std::optional<SetpointEvent> applied;  // event that determined x_max
    std::vector<SetpointEvent> rejected;   // due events that would break the band invariant
    bool tie = false;                      // another due event shares the applied one's timestamp
};

/// The latest valid event with event.t <= t sets x_max; the band width is kept.
/// Events must be sorted by time. Among equal timestamps the later entry wins.
inline SetpointOutcome apply_setpoint_events(Timestamp t, std::span<const SetpointEvent> events,
                                             const TurbidostatConfig& cfg) {
    SetpointOutcome out{cfg, std::nullopt, {}, false};
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (i && events[i].t < events[i - 1].t) throw ParameterError("setpoint events must be sorted by time");
        if (events[i].t > t) break;
        TurbidostatConfig trial = cfg;
        trial.x_max = events[i].new_x_max;
        if (!trial.violations().empty()) {
            out.rejected.push_back(events[i]);
            continue;
        }
        out.tie = out.applied && out.applied->t == events[i].t;
        out.applied = events[i];
        out.cfg = trial;
    }
    return out;
}

}  // namespace raceway::control
