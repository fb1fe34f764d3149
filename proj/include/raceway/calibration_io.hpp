#pragma once

// Calibration dataset CSV and model JSON.
//
//   timestamp,reference_x_gl,sigma_gl,f0,f1,...

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "raceway/errors.hpp"
#include "raceway/estimation.hpp"
#include "raceway/time.hpp"

namespace raceway::estimation {

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline double parse_double(const std::string& s, std::size_t lineno, const std::string& column) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw IngestionError("column '" + column + "': cannot parse '" + s + "' as a number", lineno);
    }
}

}  // namespace detail

inline std::vector<CalibrationSample> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open dataset '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    std::vector<CalibrationSample> out;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = detail::split_csv(line);
        if (header.empty()) {
            if (cells.size() < 4 || cells[0] != "timestamp" || cells[1] != "reference_x_gl" || cells[2] != "sigma_gl")
                throw IngestionError("expected header 'timestamp,reference_x_gl,sigma_gl,f0,...'", lineno);
            header = std::move(cells);
            continue;
        }
        if (cells.size() != header.size())
            throw IngestionError("expected " + std::to_string(header.size()) + " columns, got " +
                                     std::to_string(cells.size()),
                                 lineno);
        CalibrationSample s;
        try {
            s.t = parse_iso8601(cells[0]).t;
        } catch (const Error& e) {
            throw IngestionError(e.what(), lineno);
        }
        s.reference_x = detail::parse_double(cells[1], lineno, header[1]);
        s.sigma = detail::parse_double(cells[2], lineno, header[2]);
        for (std::size_t c = 3; c < cells.size(); ++c) s.features.push_back(detail::parse_double(cells[c], lineno, header[c]));
        out.push_back(std::move(s));
    }
    if (header.empty()) throw IngestionError("dataset '" + path + "' is empty");
    return out;
}

inline void save_dataset(const std::string& path, const std::vector<CalibrationSample>& samples, Seconds utc_offset) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write dataset '" + path + "'");
    const std::size_t p = samples.empty() ? 0 : samples.front().features.size();
    out << "timestamp,reference_x_gl,sigma_gl";
    for (std::size_t j = 0; j < p; ++j) out << ",f" << j;
    out << '\n';
    out.precision(17);
    for (const auto& s : samples) {
        out << format_iso8601(s.t, utc_offset) << ',' << s.reference_x << ',' << s.sigma;
        for (double f : s.features) out << ',' << f;
        out << '\n';
    }
}

inline nlohmann::json to_json(const CalibrationModel& m) {
    return {{"beta0", m.beta0},
            {"beta", m.beta},
            {"feature_mean", m.feature_mean},
            {"feature_scale", m.feature_scale},
            {"lambda", m.lambda},
            {"features", m.feature_names}};
}

inline CalibrationModel model_from_json(const nlohmann::json& j) {
    CalibrationModel m;
    try {
        m.beta0 = j.at("beta0").get<double>();
        m.beta = j.at("beta").get<std::vector<double>>();
        m.feature_mean = j.at("feature_mean").get<std::vector<double>>();
        m.feature_scale = j.at("feature_scale").get<std::vector<double>>();
        m.lambda = j.at("lambda").get<double>();
        if (j.contains("features")) m.feature_names = j.at("features").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(std::string("model JSON: ") + e.what());
    }
    const std::size_t p = m.beta.size();
    if (m.feature_mean.size() != p || m.feature_scale.size() != p ||
        (!m.feature_names.empty() && m.feature_names.size() != p))
        throw IngestionError("model JSON: coefficient and scaling vectors differ in length");
    if (!(m.lambda >= 0)) throw IngestionError("model JSON: lambda must be >= 0");
    for (double s : m.feature_scale)
        if (!(s > 0)) throw IngestionError("model JSON: feature_scale entries must be positive");
    return m;
}

inline void save_model(const std::string& path, const CalibrationModel& m) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write model '" + path + "'");
    out << to_json(m).dump(2) << '\n';
}

inline CalibrationModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open model '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError("model '" + path + "': " + e.what());
    }
    return model_from_json(j);
}

}  // namespace raceway::estimation
