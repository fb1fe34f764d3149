#pragma once

// Virtual flow-through optical sensor. Each cycle runs the same five stages as
// the field device: blank with clean water, sample intake, absorbance read,
// fluorescence read, flush.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "raceway/errors.hpp"
#include "raceway/time.hpp"

namespace raceway::sensor {

/// n values log-spaced over [lo, hi].
inline std::vector<double> log_spaced(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        v[i] = lo * std::pow(hi / lo, w);
    }
    return v;
}

struct SensorConfig {
    Seconds cycle_period{300};
    Seconds cycle_duration{120};
    std::vector<double> abs_gain;        // absorbance per g/L at low X
    std::vector<double> abs_saturation;  // g/L
    std::vector<double> fluo_gain;       // a.u. per g/L
    double fluo_quench = 0.25;           // 1/(g/L), inner-filter attenuation
    double noise_sigma = 0.01;           // relative
    double fouling_rate = 2e-4;          // absorbance offset deposited per cycle
    double flush_efficiency = 0.9;       // fraction of fouling removed by the flush
    double blank_tolerance = 0.05;       // residual above this marks the blank as failed

    static SensorConfig defaults(std::size_t n_abs = 8, std::size_t n_fluo = 8) {
        SensorConfig c;
        c.abs_gain = log_spaced(n_abs, 0.3, 1.2);
        c.abs_saturation = log_spaced(n_abs, 3.0, 12.0);
        c.fluo_gain = log_spaced(n_fluo, 20.0, 80.0);
        return c;
    }

    std::size_t n_abs_channels() const { return abs_gain.size(); }
    std::size_t n_fluo_channels() const { return fluo_gain.size(); }

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (cycle_period <= Seconds{0}) v.emplace_back("sensor.cycle_period must be positive");
        if (cycle_duration <= Seconds{0} || !(cycle_duration < cycle_period))
            v.emplace_back("sensor.cycle_duration must be positive and shorter than cycle_period");
        if (abs_gain.empty()) v.emplace_back("sensor needs at least one absorbance channel");
        if (abs_saturation.size() != abs_gain.size())
            v.emplace_back("sensor.abs_saturation length must match abs_gain");
        for (double g : abs_gain)
            if (!(g > 0 && std::isfinite(g))) v.emplace_back("sensor.abs_gain entries must be positive");
        for (double s : abs_saturation)
            if (!(s > 0)) v.emplace_back("sensor.abs_saturation entries must be positive (inf allowed)");
        for (double g : fluo_gain)
            if (!(g > 0 && std::isfinite(g))) v.emplace_back("sensor.fluo_gain entries must be positive");
        if (!(fluo_quench >= 0 && std::isfinite(fluo_quench))) v.emplace_back("sensor.fluo_quench must be >= 0");
        if (!(noise_sigma >= 0 && std::isfinite(noise_sigma))) v.emplace_back("sensor.noise_sigma must be >= 0");
        if (!(fouling_rate >= 0 && std::isfinite(fouling_rate))) v.emplace_back("sensor.fouling_rate must be >= 0");
        if (!(flush_efficiency >= 0 && flush_efficiency <= 1))
            v.emplace_back("sensor.flush_efficiency must lie in [0, 1]");
        return v;
    }

    void validate() const {
        if (auto v = violations(); !v.empty()) throw ValidationError(std::move(v));
    }
};

struct SpectralFrame {
    Timestamp t{};
    std::vector<double> absorbance;
    std::vector<double> fluorescence;
    bool blank_ok = true;
    double fouling_offset = 0.0;  // total deposit on the cuvette while the sample was read
};

/// Deposit left on the cuvette walls after the last flush.
struct FoulingState {
    double offset = 0.0;
};

struct CycleResult {
    SpectralFrame frame;
    FoulingState fouling;
};

/// Noise-free absorbance of one channel.
inline double absorbance_response(double x_gl, double gain, double saturation) {
    return gain * x_gl / (1.0 + x_gl / saturation);
}

/// Noise-free fluorescence of one channel.
inline double fluorescence_response(double x_gl, double gain, double quench) {
    return gain * x_gl * std::exp(-quench * x_gl);
}

/// One measurement cycle on culture at x_true. `t` is stamped on the frame.
inline CycleResult run_cycle(double x_true, const SensorConfig& cfg, FoulingState fouling, std::uint64_t seed,
                             Timestamp t = {}) {
    if (!(x_true >= 0) || !std::isfinite(x_true)) throw ParameterError("sensor: X_true must be finite and >= 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Stage 1, blank: clean water through the cuvette reads the deposit that
    // the flush can lift. Whatever sticks past the flush stays in the reading.
    const double deposit = fouling.offset + cfg.fouling_rate;
    const double residual = deposit * (1.0 - cfg.flush_efficiency);

    // Stage 2, sample intake.
    const double x = x_true;

    CycleResult out;
    out.frame.t = t;
    out.frame.fouling_offset = deposit;
    out.frame.blank_ok = residual <= cfg.blank_tolerance;

    // Stage 3, absorbance.
    out.frame.absorbance.resize(cfg.n_abs_channels());
    for (std::size_t i = 0; i < cfg.n_abs_channels(); ++i) {
        const double clean = absorbance_response(x, cfg.abs_gain[i], cfg.abs_saturation[i]);
        out.frame.absorbance[i] = clean + residual + cfg.noise_sigma * clean * gauss(rng);
    }

    // Stage 4, fluorescence.
    out.frame.fluorescence.resize(cfg.n_fluo_channels());
    for (std::size_t j = 0; j < cfg.n_fluo_channels(); ++j) {
        const double clean = fluorescence_response(x, cfg.fluo_gain[j], cfg.fluo_quench);
        out.frame.fluorescence[j] = clean * (1.0 + cfg.noise_sigma * gauss(rng));
    }

    // Stage 5, flush.
    out.fouling.offset = deposit * (1.0 - cfg.flush_efficiency);
    return out;
}

/// Cycle start times in [start, start + horizon).
inline std::vector<Timestamp> schedule_cycles(Timestamp start, Seconds horizon, const SensorConfig& cfg) {
    cfg.validate();
    std::vector<Timestamp> out;
    for (Timestamp t = start; t < start + horizon; t += cfg.cycle_period) out.push_back(t);
    return out;
}

/// When the estimate from a cycle started at `cycle_start` becomes available.
inline Timestamp frame_available_at(Timestamp cycle_start, const SensorConfig& cfg) {
    return cycle_start + cfg.cycle_duration;
}

/// Per-cycle seed derived from a campaign seed (splitmix64 finaliser).
inline std::uint64_t cycle_seed(std::uint64_t campaign_seed, std::uint64_t cycle_index) {
    std::uint64_t z = campaign_seed + 0x9E3779B97F4A7C15ull * (cycle_index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace raceway::sensor
