#pragma once

// Synthetic calibration campaigns: virtual sensor frames paired with
// triplicate dry-weight references.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "raceway/estimation.hpp"
#include "raceway/sensor.hpp"
#include "raceway/time.hpp"

namespace raceway::synthetic {

struct DryWeight {
    double mean = 0.0;
    double sigma = 0.0;  // sample std of the replicates
};

/// Mean and sample std of `replicates` draws of N(x_true, noise_sigma), floored at 0.
inline DryWeight dry_weight(double x_true, double noise_sigma, std::mt19937_64& rng, int replicates = 3) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v;
    for (int i = 0; i < replicates; ++i) v.push_back(std::max(0.0, x_true + noise_sigma * g(rng)));
    double m = 0;
    for (double x : v) m += x;
    m /= replicates;
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, replicates > 1 ? std::sqrt(ss / (replicates - 1)) : 0.0};
}

struct DatasetSpec {
    std::size_t n_samples = 60;
    double x_lo = 0.2;
    double x_hi = 1.6;
    double dry_weight_sigma = 0.02;
    Seconds spacing{6 * 3600};
    std::uint64_t seed = 1;
};

/// Biomass levels drawn uniformly in [x_lo, x_hi], one sensing cycle each.
/// Fouling carries over between cycles like a deployed sensor.
inline std::vector<estimation::CalibrationSample> calibration_dataset(const sensor::SensorConfig& cfg,
                                                                      const DatasetSpec& spec, Timestamp start) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> level(spec.x_lo, spec.x_hi);
    sensor::FoulingState fouling;
    std::vector<estimation::CalibrationSample> out;
    out.reserve(spec.n_samples);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        const double x = level(rng);
        const Timestamp t = start + spec.spacing * static_cast<int>(i);
        const auto cycle = sensor::run_cycle(x, cfg, fouling, sensor::cycle_seed(spec.seed, i), t);
        fouling = cycle.fouling;
        const auto dw = dry_weight(x, spec.dry_weight_sigma, rng);
        out.push_back({estimation::extract_features(cycle.frame), dw.mean, dw.sigma, t});
    }
    return out;
}

/// Default lambda grid: log-spaced from lambda_max down four decades.
inline std::vector<double> default_lambda_grid(std::span<const estimation::CalibrationSample> samples,
                                               std::size_t n = 20) {
    const double lm = estimation::lambda_max(samples);
    std::vector<double> grid;
    if (!(lm > 0)) return {0.0};
    for (std::size_t i = 0; i < n; ++i)
        grid.push_back(lm * std::pow(10.0, -4.0 * static_cast<double>(i) / static_cast<double>(n - 1)));
    return grid;
}

}  // namespace raceway::synthetic
