#pragma once

// Harvest bookkeeping and biomass balance.
//
// Turbidostat events are short, so the outlet concentration is taken as the
// online estimate when harvesting started. Chemostat events wash the culture
// down noticeably and use the mean of the before/after concentrations.
//
//   net production = harvested + final standing - initial standing

#include <chrono>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "raceway/errors.hpp"
#include "raceway/time.hpp"

namespace raceway::accounting {

enum class HarvestMode { turbidostat, chemostat, manual };

inline std::string to_string(HarvestMode m) {
    switch (m) {
        case HarvestMode::turbidostat: return "turbidostat";
        case HarvestMode::chemostat: return "chemostat";
        case HarvestMode::manual: return "manual";
    }
    return "?";
}

inline HarvestMode harvest_mode_from_string(const std::string& s) {
    if (s == "turbidostat") return HarvestMode::turbidostat;
    if (s == "chemostat") return HarvestMode::chemostat;
    if (s == "manual") return HarvestMode::manual;
    throw ParameterError("unknown harvest mode '" + s + "'");
}

struct HarvestEvent {
    Timestamp t_start{};
    Timestamp t_end{};
    double volume_l = 0.0;
    HarvestMode mode = HarvestMode::turbidostat;
    std::optional<double> x_start;  // g/L
    std::optional<double> x_end;    // g/L
};

struct DailyRow {
    Date date{};
    double harvested_volume_l = 0.0;
    double harvested_mass_g = 0.0;
};

struct BalanceReport {
    double total_volume_l = 0.0;
    double total_mass_g = 0.0;
    double initial_cb = 0.0;
    double final_cb = 0.0;
    double initial_standing_g = 0.0;
    double final_standing_g = 0.0;
    double net_production_g = 0.0;
    double net_areal_productivity = 0.0;  // g m^-2 d^-1
};

inline double turbidostat_event_mass(const HarvestEvent& ev) {
    if (ev.mode != HarvestMode::turbidostat) throw AccountingError("turbidostat_event_mass: event is not a turbidostat event");
    if (!ev.x_start) throw AccountingError("turbidostat event lacks its start concentration");
    return ev.volume_l * *ev.x_start;
}

/// Exponential-washout mass for a chemostat event: what a well-mixed reactor
/// starting at x_start loses when `volume` of medium displaces culture.
inline double chemostat_washout_mass(const HarvestEvent& ev, double reactor_volume_l) {
    if (!ev.x_start) throw AccountingError("chemostat event lacks its start concentration");
    if (!(reactor_volume_l > 0)) throw AccountingError("reactor volume must be positive");
    return reactor_volume_l * *ev.x_start * -std::expm1(-ev.volume_l / reactor_volume_l);
}

/// Trapezoid of before/after concentrations. The washout estimate is logged
/// alongside for diagnosis.
inline double chemostat_event_mass(const HarvestEvent& ev, std::optional<double> reactor_volume_l = std::nullopt) {
    if (ev.mode != HarvestMode::chemostat) throw AccountingError("chemostat_event_mass: event is not a chemostat event");
    if (!ev.x_start || !ev.x_end) throw AccountingError("chemostat event lacks a before/after concentration");
    const double mass = ev.volume_l * (*ev.x_start + *ev.x_end) / 2.0;
    if (reactor_volume_l)
        spdlog::debug("chemostat event {:.1f} L: trapezoid {:.2f} g, washout {:.2f} g", ev.volume_l, mass,
                      chemostat_washout_mass(ev, *reactor_volume_l));
    return mass;
}

inline double event_mass(const HarvestEvent& ev, std::optional<double> reactor_volume_l = std::nullopt) {
    switch (ev.mode) {
        case HarvestMode::turbidostat: return turbidostat_event_mass(ev);
        case HarvestMode::chemostat: return chemostat_event_mass(ev, reactor_volume_l);
        case HarvestMode::manual:
            if (!ev.x_start) throw AccountingError("manual event lacks its start concentration");
            return ev.volume_l * *ev.x_start;
    }
    throw AccountingError("unknown harvest mode");
}

/// One row per local date in [first, last]; each event lands on the date it
/// started. Events must be time-ordered and must not overlap.
inline std::vector<DailyRow> build_daily_ledger(std::span<const HarvestEvent> events, Seconds utc_offset, Date first,
                                                Date last, std::optional<double> reactor_volume_l = std::nullopt) {
    const auto d0 = std::chrono::sys_days{first};
    const auto d1 = std::chrono::sys_days{last};
    if (d1 < d0) throw AccountingError("ledger date range is empty");
    std::vector<DailyRow> rows;
    for (auto d = d0; d <= d1; d += std::chrono::days{1}) rows.push_back({Date{d}, 0.0, 0.0});

    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& ev = events[i];
        if (ev.volume_l < 0 || ev.t_end < ev.t_start) throw AccountingError("malformed harvest event");
        if (i && ev.t_start < events[i - 1].t_end)
            throw AccountingError("harvest events overlap or are out of order at " +
                                  format_iso8601(ev.t_start, utc_offset));
        const Date start = local_date(ev.t_start, utc_offset);
        if (ev.t_end > ev.t_start && local_date(ev.t_end - Seconds{1}, utc_offset) != start)
            spdlog::warn("harvest event starting {} spans midnight; booked on its start date",
                         format_iso8601(ev.t_start, utc_offset));
        const auto idx = (std::chrono::sys_days{start} - d0).count();
        if (idx < 0 || idx >= static_cast<long>(rows.size()))
            throw AccountingError("harvest event on " + format_date(start) + " lies outside the ledger range");
        rows[static_cast<std::size_t>(idx)].harvested_volume_l += ev.volume_l;
        rows[static_cast<std::size_t>(idx)].harvested_mass_g += event_mass(ev, reactor_volume_l);
    }
    return rows;
}

struct Totals {
    double volume_l = 0.0;
    double mass_g = 0.0;
};

inline Totals totals(std::span<const DailyRow> rows) {
    Totals t;
    for (const auto& r : rows) {
        t.volume_l += r.harvested_volume_l;
        t.mass_g += r.harvested_mass_g;
    }
    return t;
}

/// Balance from standing masses given directly.
inline BalanceReport balance_from_standing(std::span<const DailyRow> rows, double initial_standing_g,
                                           double final_standing_g, double volume_l, double area_m2, int days) {
    if (!(area_m2 > 0)) throw AccountingError("balance: area must be positive");
    if (days < 1) throw AccountingError("balance: campaign must last at least one day");
    if (!(volume_l > 0)) throw AccountingError("balance: reactor volume must be positive");
    const Totals t = totals(rows);
    BalanceReport b;
    b.total_volume_l = t.volume_l;
    b.total_mass_g = t.mass_g;
    b.initial_standing_g = initial_standing_g;
    b.final_standing_g = final_standing_g;
    b.initial_cb = initial_standing_g / volume_l;
    b.final_cb = final_standing_g / volume_l;
    b.net_production_g = b.total_mass_g + b.final_standing_g - b.initial_standing_g;
    b.net_areal_productivity = b.net_production_g / (area_m2 * days);
    return b;
}

inline BalanceReport balance(std::span<const DailyRow> rows, double initial_cb, double final_cb, double volume_l,
                             double area_m2, int days) {
    auto b = balance_from_standing(rows, initial_cb * volume_l, final_cb * volume_l, volume_l, area_m2, days);
    b.initial_cb = initial_cb;
    b.final_cb = final_cb;
    return b;
}

struct WindowResult {
    double mass_g = 0.0;
    int days = 0;
    double productivity = 0.0;  // g m^-2 d^-1
};

/// Harvested areal productivity over [from, to], with excluded dates removed
/// from both the mass sum and the day count.
inline WindowResult windowed_productivity(std::span<const DailyRow> rows, Date from, Date to,
                                          const std::set<Date>& excluded, double area_m2) {
    if (!(area_m2 > 0)) throw AccountingError("windowed productivity: area must be positive");
    const auto d0 = std::chrono::sys_days{from};
    const auto d1 = std::chrono::sys_days{to};
    WindowResult w;
    for (auto d = d0; d <= d1; d += std::chrono::days{1})
        if (!excluded.contains(Date{d})) ++w.days;
    if (w.days == 0) throw AccountingError("windowed productivity: window is empty after exclusions");
    for (const auto& r : rows) {
        const auto d = std::chrono::sys_days{r.date};
        if (d >= d0 && d <= d1 && !excluded.contains(r.date)) w.mass_g += r.harvested_mass_g;
    }
    w.productivity = w.mass_g / (area_m2 * w.days);
    return w;
}

}  // namespace raceway::accounting
