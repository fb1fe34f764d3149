#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "raceway/errors.hpp"
#include "raceway/plant.hpp"
#include "raceway/time.hpp"

namespace raceway::plant {

/// Piecewise-linear irradiance trace. Zero before the first and after the
/// last sample.
class IrradianceSeries {
public:
    IrradianceSeries() = default;

    explicit IrradianceSeries(std::vector<EnvironmentSample> samples) : samples_(std::move(samples)) {
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            if (!(std::isfinite(samples_[i].i0_wm2) && samples_[i].i0_wm2 >= 0))
                throw ParameterError("irradiance sample " + std::to_string(i) + " is negative or non-finite");
            if (i && !(samples_[i - 1].t < samples_[i].t))
                throw ParameterError("irradiance samples must be strictly increasing in time");
        }
    }

    double at(Timestamp t) const {
        if (samples_.empty() || t < samples_.front().t || t > samples_.back().t) return 0.0;
        auto hi = std::lower_bound(samples_.begin(), samples_.end(), t,
                                   [](const EnvironmentSample& s, Timestamp q) { return s.t < q; });
        if (hi->t == t) return hi->i0_wm2;
        auto lo = hi - 1;
        const double w = static_cast<double>((t - lo->t).count()) / static_cast<double>((hi->t - lo->t).count());
        return lo->i0_wm2 + w * (hi->i0_wm2 - lo->i0_wm2);
    }

    EnvironmentSample sample(Timestamp t) const { return {t, at(t)}; }

    std::span<const EnvironmentSample> samples() const { return samples_; }
    bool empty() const { return samples_.empty(); }

private:
    std::vector<EnvironmentSample> samples_;
};

/// Reads `timestamp,irradiance_wm2` CSV. Errors carry the offending line.
inline IrradianceSeries load_irradiance(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open irradiance file '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    std::vector<EnvironmentSample> samples;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != "timestamp,irradiance_wm2")
                throw IngestionError("expected header 'timestamp,irradiance_wm2', got '" + line + "'", lineno);
            header_seen = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IngestionError("missing irradiance column", lineno);
        EnvironmentSample s;
        try {
            s.t = parse_iso8601(line.substr(0, comma)).t;
            std::size_t used = 0;
            const std::string value = line.substr(comma + 1);
            s.i0_wm2 = std::stod(value, &used);
            if (used != value.size()) throw ParameterError("trailing characters in irradiance value");
        } catch (const IngestionError&) {
            throw;
        } catch (const std::exception& e) {
            throw IngestionError(e.what(), lineno);
        }
        if (!(std::isfinite(s.i0_wm2) && s.i0_wm2 >= 0)) throw IngestionError("negative irradiance", lineno);
        if (!samples.empty() && !(samples.back().t < s.t))
            throw IngestionError("timestamps not strictly increasing", lineno);
        samples.push_back(s);
    }
    if (samples.empty()) throw IngestionError("irradiance file '" + path + "' has no samples");
    return IrradianceSeries(std::move(samples));
}

/// Clear-sky stand-in: a half-sine between sunrise and sunset each local day,
/// sampled every `step` and pinned to zero at both ends.
inline IrradianceSeries synth_irradiance(Date first_day, int day_count, double peak_wm2, TimeOfDay sunrise,
                                         TimeOfDay sunset, Seconds utc_offset, Seconds step = Seconds{60}) {
    if (!(sunrise < sunset)) throw ParameterError("synthetic irradiance: sunrise must precede sunset");
    if (!(std::isfinite(peak_wm2) && peak_wm2 >= 0)) throw ParameterError("synthetic irradiance: peak must be >= 0");
    if (day_count < 1 || step <= Seconds{0}) throw ParameterError("synthetic irradiance: bad day count or step");
    const double span = static_cast<double>(sunset.seconds - sunrise.seconds);
    std::vector<EnvironmentSample> samples;
    for (int d = 0; d < day_count; ++d) {
        const Date day{std::chrono::sys_days{first_day} + std::chrono::days{d}};
        const Timestamp rise = at_local(day, sunrise, utc_offset);
        const Timestamp set = at_local(day, sunset, utc_offset);
        for (Timestamp t = rise; t < set; t += step) {
            const double phase = static_cast<double>((t - rise).count()) / span;
            samples.push_back({t, t == rise ? 0.0 : std::max(0.0, peak_wm2 * std::sin(std::numbers::pi * phase))});
        }
        samples.push_back({set, 0.0});
    }
    return IrradianceSeries(std::move(samples));
}

}  // namespace raceway::plant
