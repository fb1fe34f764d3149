#pragma once

// Campaign ledger file: the daily harvest table followed by a balance summary
// and the productivity windows to evaluate.
//
//   date,volume_rw5_l,mass_rw5_g,volume_rw6_l,mass_rw6_g
//   2026-04-27,8480.00,10489.00,2400.00,3401.67
//   ...
//   [summary]
//   key,rw5,rw6
//   initial_cb_gl,1.42,1.54
//   ...
//   [windows]
//   name,reactor,from,to,excluded
//   around_1.0,rw5,2026-04-28,2026-05-04,
//   [reported_days]
//   name,reactor,date
//   setpoint_transition,rw5,2026-05-05
//
// Empty or "--" mass cells read as zero. Reactor names come from the header.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "raceway/accounting.hpp"
#include "raceway/calibration_io.hpp"
#include "raceway/errors.hpp"
#include "raceway/time.hpp"

namespace raceway::accounting {

struct ReactorSummary {
    double initial_cb = 0.0;
    double final_cb = 0.0;
    std::optional<double> initial_standing_g;
    std::optional<double> final_standing_g;
    double volume_l = 12000.0;
    double area_m2 = 80.0;
    int days = 0;
};

struct WindowSpec {
    std::string name;
    std::string reactor;
    Date from{};
    Date to{};
    std::set<Date> excluded;
};

struct ReportedDay {
    std::string name;
    std::string reactor;
    Date date{};
};

struct CampaignLedger {
    std::vector<std::string> reactors;
    std::map<std::string, std::vector<DailyRow>> rows;
    std::map<std::string, ReactorSummary> summary;
    std::vector<WindowSpec> windows;
    std::vector<ReportedDay> reported_days;
};

namespace detail {

inline std::string trim(std::string s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    return s.substr(i);
}

inline double cell_value(const std::string& cell, std::size_t lineno, const std::string& column) {
    const std::string c = trim(cell);
    if (c.empty() || c == "--") return 0.0;
    const double v = estimation::detail::parse_double(c, lineno, column);
    if (!(v >= 0) || !std::isfinite(v)) throw IngestionError("column '" + column + "' must be non-negative", lineno);
    return v;
}

inline Date cell_date(const std::string& cell, std::size_t lineno) {
    try {
        return parse_date(trim(cell));
    } catch (const Error& e) {
        throw IngestionError(e.what(), lineno);
    }
}

}  // namespace detail

inline CampaignLedger parse_ledger(std::istream& in) {
    CampaignLedger L;
    std::string line, section;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    bool section_header_pending = false;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            if (section != "summary" && section != "windows" && section != "reported_days")
                throw IngestionError("unknown section [" + section + "]", lineno);
            section_header_pending = true;
            continue;
        }
        const auto cells = estimation::detail::split_csv(line);

        if (section.empty()) {
            if (header.empty()) {
                // date,volume_<r>_l,mass_<r>_g,...
                if (cells.empty() || detail::trim(cells[0]) != "date")
                    throw IngestionError("ledger header must start with 'date'", lineno);
                if (cells.size() < 3 || (cells.size() - 1) % 2 != 0)
                    throw IngestionError("ledger header needs volume_<reactor>_l,mass_<reactor>_g column pairs",
                                         lineno);
                for (std::size_t c = 1; c < cells.size(); c += 2) {
                    const std::string v = detail::trim(cells[c]), m = detail::trim(cells[c + 1]);
                    if (v.rfind("volume_", 0) != 0 || v.size() < 10 || v.substr(v.size() - 2) != "_l")
                        throw IngestionError("column " + std::to_string(c + 1) + " '" + v +
                                                 "' should be volume_<reactor>_l",
                                             lineno);
                    const std::string name = v.substr(7, v.size() - 9);
                    if (m != "mass_" + name + "_g")
                        throw IngestionError("column " + std::to_string(c + 2) + " '" + m + "' should be mass_" +
                                                 name + "_g",
                                             lineno);
                    L.reactors.push_back(name);
                    L.rows[name];
                }
                header = cells;
                continue;
            }
            if (cells.size() != header.size())
                throw IngestionError("expected " + std::to_string(header.size()) + " columns, got " +
                                         std::to_string(cells.size()),
                                     lineno);
            const Date d = detail::cell_date(cells[0], lineno);
            for (std::size_t r = 0; r < L.reactors.size(); ++r) {
                auto& rows = L.rows[L.reactors[r]];
                if (!rows.empty() && !(rows.back().date < d))
                    throw IngestionError("ledger dates must be strictly increasing", lineno);
                rows.push_back({d, detail::cell_value(cells[1 + 2 * r], lineno, header[1 + 2 * r]),
                                detail::cell_value(cells[2 + 2 * r], lineno, header[2 + 2 * r])});
            }
            continue;
        }

        if (section_header_pending) {
            section_header_pending = false;
            continue;  // column names of the section
        }
        if (section == "summary") {
            if (cells.size() != L.reactors.size() + 1)
                throw IngestionError("summary rows need one value per reactor", lineno);
            const std::string key = detail::trim(cells[0]);
            for (std::size_t r = 0; r < L.reactors.size(); ++r) {
                auto& s = L.summary[L.reactors[r]];
                const std::string cell = detail::trim(cells[r + 1]);
                if (cell.empty()) continue;
                const double v = estimation::detail::parse_double(cell, lineno, key);
                if (key == "initial_cb_gl") s.initial_cb = v;
                else if (key == "final_cb_gl") s.final_cb = v;
                else if (key == "initial_standing_g") s.initial_standing_g = v;
                else if (key == "final_standing_g") s.final_standing_g = v;
                else if (key == "reactor_volume_l") s.volume_l = v;
                else if (key == "area_m2") s.area_m2 = v;
                else if (key == "campaign_days") s.days = static_cast<int>(v);
                else throw IngestionError("unknown summary key '" + key + "'", lineno);
            }
        } else if (section == "windows") {
            if (cells.size() < 4 || cells.size() > 5) throw IngestionError("window rows: name,reactor,from,to,excluded", lineno);
            WindowSpec w{detail::trim(cells[0]), detail::trim(cells[1]), detail::cell_date(cells[2], lineno),
                         detail::cell_date(cells[3], lineno), {}};
            if (cells.size() == 5) {
                std::istringstream ex(detail::trim(cells[4]));
                std::string d;
                while (std::getline(ex, d, ';'))
                    if (!detail::trim(d).empty()) w.excluded.insert(detail::cell_date(d, lineno));
            }
            L.windows.push_back(std::move(w));
        } else if (section == "reported_days") {
            if (cells.size() != 3) throw IngestionError("reported_days rows: name,reactor,date", lineno);
            L.reported_days.push_back(
                {detail::trim(cells[0]), detail::trim(cells[1]), detail::cell_date(cells[2], lineno)});
        }
    }
    if (header.empty()) throw IngestionError("ledger is empty");
    if (L.rows.begin()->second.empty()) throw IngestionError("ledger has no daily rows");
    for (const auto& w : L.windows)
        if (!L.rows.contains(w.reactor)) throw IngestionError("window '" + w.name + "' names unknown reactor " + w.reactor);
    for (const auto& d : L.reported_days)
        if (!L.rows.contains(d.reactor)) throw IngestionError("reported day '" + d.name + "' names unknown reactor " + d.reactor);
    return L;
}

inline CampaignLedger load_ledger(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open ledger '" + path + "'");
    return parse_ledger(in);
}

inline std::string format_fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline void write_ledger(std::ostream& out, const CampaignLedger& L) {
    out << "date";
    for (const auto& r : L.reactors) out << ",volume_" << r << "_l,mass_" << r << "_g";
    out << '\n';
    const auto& first = L.rows.at(L.reactors.front());
    for (std::size_t i = 0; i < first.size(); ++i) {
        out << format_date(first[i].date);
        for (const auto& r : L.reactors) {
            const auto& row = L.rows.at(r)[i];
            out << ',' << format_fixed(row.harvested_volume_l) << ',' << format_fixed(row.harvested_mass_g);
        }
        out << '\n';
    }
    out << "[summary]\nkey";
    for (const auto& r : L.reactors) out << ',' << r;
    out << '\n';
    auto row = [&](const char* key, auto get) {
        out << key;
        for (const auto& r : L.reactors) {
            out << ',';
            if (auto it = L.summary.find(r); it != L.summary.end()) out << get(it->second);
        }
        out << '\n';
    };
    row("initial_cb_gl", [](const ReactorSummary& s) { return format_fixed(s.initial_cb, 8); });
    row("final_cb_gl", [](const ReactorSummary& s) { return format_fixed(s.final_cb, 8); });
    row("initial_standing_g", [](const ReactorSummary& s) { return s.initial_standing_g ? format_fixed(*s.initial_standing_g) : std::string(); });
    row("final_standing_g", [](const ReactorSummary& s) { return s.final_standing_g ? format_fixed(*s.final_standing_g) : std::string(); });
    row("reactor_volume_l", [](const ReactorSummary& s) { return format_fixed(s.volume_l); });
    row("area_m2", [](const ReactorSummary& s) { return format_fixed(s.area_m2); });
    row("campaign_days", [](const ReactorSummary& s) { return std::to_string(s.days); });
    if (!L.windows.empty()) {
        out << "[windows]\nname,reactor,from,to,excluded\n";
        for (const auto& w : L.windows) {
            out << w.name << ',' << w.reactor << ',' << format_date(w.from) << ',' << format_date(w.to) << ',';
            bool first_ex = true;
            for (const auto& d : w.excluded) {
                out << (first_ex ? "" : ";") << format_date(d);
                first_ex = false;
            }
            out << '\n';
        }
    }
    if (!L.reported_days.empty()) {
        out << "[reported_days]\nname,reactor,date\n";
        for (const auto& d : L.reported_days) out << d.name << ',' << d.reactor << ',' << format_date(d.date) << '\n';
    }
}

// ---------------------------------------------------------------------------

struct WindowReport {
    WindowSpec spec;
    WindowResult result;
};

struct ReportedDayReport {
    ReportedDay spec;
    DailyRow row;
};

struct ReplayReport {
    std::vector<std::string> reactors;
    std::map<std::string, BalanceReport> balance;
    std::vector<WindowReport> windows;
    std::vector<ReportedDayReport> reported_days;
};

inline ReplayReport replay(const CampaignLedger& L) {
    ReplayReport rep;
    rep.reactors = L.reactors;
    for (const auto& name : L.reactors) {
        const auto& rows = L.rows.at(name);
        auto it = L.summary.find(name);
        if (it == L.summary.end()) throw AccountingError("ledger lacks a summary for reactor " + name);
        const ReactorSummary& s = it->second;
        const int days = s.days > 0 ? s.days : static_cast<int>(rows.size());
        const double v = s.volume_l;
        const double init = s.initial_standing_g.value_or(s.initial_cb * v);
        const double fin = s.final_standing_g.value_or(s.final_cb * v);
        if (s.initial_standing_g && s.initial_cb > 0 && std::abs(s.initial_cb * v - init) > 0.01)
            throw AccountingError(name + ": initial standing biomass disagrees with initial_cb x volume");
        if (s.final_standing_g && s.final_cb > 0 && std::abs(s.final_cb * v - fin) > 0.01)
            throw AccountingError(name + ": final standing biomass disagrees with final_cb x volume");
        auto b = balance_from_standing(rows, init, fin, v, s.area_m2, days);
        if (s.initial_cb > 0) b.initial_cb = s.initial_cb;
        if (s.final_cb > 0) b.final_cb = s.final_cb;
        rep.balance[name] = b;
    }
    for (const auto& w : L.windows)
        rep.windows.push_back({w, windowed_productivity(L.rows.at(w.reactor), w.from, w.to, w.excluded,
                                                        L.summary.at(w.reactor).area_m2)});
    for (const auto& d : L.reported_days) {
        DailyRow found{d.date, 0.0, 0.0};
        for (const auto& r : L.rows.at(d.reactor))
            if (r.date == d.date) found = r;
        rep.reported_days.push_back({d, found});
    }
    return rep;
}

/// Summary block laid out like the printed campaign table.
inline std::string format_replay(const ReplayReport& rep) {
    std::ostringstream out;
    char buf[256];
    auto line = [&](const char* label, auto get) {
        std::snprintf(buf, sizeof buf, "%-44s", label);
        out << buf;
        for (const auto& r : rep.reactors) {
            std::snprintf(buf, sizeof buf, "%14s", get(rep.balance.at(r)).c_str());
            out << buf;
        }
        out << '\n';
    };
    std::snprintf(buf, sizeof buf, "%-44s", "");
    out << buf;
    for (const auto& r : rep.reactors) {
        std::snprintf(buf, sizeof buf, "%14s", r.c_str());
        out << buf;
    }
    out << '\n';
    line("Total harvested volume (L)", [](const BalanceReport& b) { return format_fixed(b.total_volume_l); });
    line("Total harvested biomass (g)", [](const BalanceReport& b) { return format_fixed(b.total_mass_g); });
    line("Initial Cb (g/L)", [](const BalanceReport& b) { return format_fixed(b.initial_cb); });
    line("Final Cb (g/L)", [](const BalanceReport& b) { return format_fixed(b.final_cb); });
    line("Initial standing biomass (g)", [](const BalanceReport& b) { return format_fixed(b.initial_standing_g); });
    line("Final standing biomass (g)", [](const BalanceReport& b) { return format_fixed(b.final_standing_g); });
    line("Harvested + final standing biomass (g)",
         [](const BalanceReport& b) { return format_fixed(b.total_mass_g + b.final_standing_g); });
    line("Net biomass production (g)", [](const BalanceReport& b) { return format_fixed(b.net_production_g); });
    line("Net areal productivity (g/m2/d)", [](const BalanceReport& b) { return format_fixed(b.net_areal_productivity); });
    for (const auto& w : rep.windows) {
        out << '\n' << w.spec.reactor << ' ' << w.spec.name << "  " << format_date(w.spec.from) << " to "
            << format_date(w.spec.to);
        if (!w.spec.excluded.empty()) out << " (" << w.spec.excluded.size() << " day(s) excluded)";
        out << "\n  harvested biomass (g)                     " << format_fixed(w.result.mass_g)
            << "\n  days                                      " << w.result.days
            << "\n  harvested areal productivity (g/m2/d)     " << format_fixed(w.result.productivity) << '\n';
    }
    for (const auto& d : rep.reported_days)
        out << '\n' << d.spec.reactor << ' ' << d.spec.name << "  " << format_date(d.spec.date)
            << "\n  harvested volume (L)                      " << format_fixed(d.row.harvested_volume_l)
            << "\n  harvested biomass (g)                     " << format_fixed(d.row.harvested_mass_g) << '\n';
    return out.str();
}

}  // namespace raceway::accounting
