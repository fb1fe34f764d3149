#pragma once

// Discrete-time mass balance of one raceway under light-limited growth and
// constant-level overflow dilution.
//
//   dX/dt = mu(I0, X) X - (Q_d / V) X
//
// Medium inflow carries no biomass, the level controller keeps V fixed, and
// the overflow leaves at the culture concentration.

#include <cmath>
#include <limits>
#include <string>

#include "raceway/errors.hpp"
#include "raceway/time.hpp"

namespace raceway::plant {

inline constexpr double kLitresPerCubicMetre = 1000.0;
inline constexpr double kSecondsPerDayD = 86400.0;
inline constexpr Seconds kMaxStep{60};

struct ReactorParams {
    double area_m2 = 80.0;
    double depth_m = 0.15;
    double volume_l = 12000.0;

    static ReactorParams from_geometry(double area_m2, double depth_m) {
        ReactorParams rp{area_m2, depth_m, area_m2 * depth_m * kLitresPerCubicMetre};
        rp.validate();
        return rp;
    }

    void validate() const {
        if (!(std::isfinite(area_m2) && area_m2 > 0) || !(std::isfinite(depth_m) && depth_m > 0))
            throw ParameterError("reactor area and depth must be positive");
        const double expected = area_m2 * depth_m * kLitresPerCubicMetre;
        if (!(std::abs(volume_l - expected) <= 1e-9 * expected))
            throw ParameterError("reactor volume " + std::to_string(volume_l) + " L does not match area x depth (" +
                                 std::to_string(expected) + " L)");
    }
};

/// Light-limited growth with self-shading and a constant dark loss.
/// Defaults were tuned so a 14-day clear-sky campaign held near 0.8 g/L nets
/// about 20 g m^-2 d^-1 (see README, "Growth model").
struct GrowthParams {
    double mu_max = 3.2;       // 1/d
    double k_i = 100.0;        // W/m^2, half-saturation irradiance
    double extinction = 0.20;  // m^2/g
    double maintenance = 0.18; // 1/d

    static constexpr GrowthParams disabled() { return {0.0, 1.0, 1.0, 0.0}; }

    void validate() const {
        if (!std::isfinite(mu_max) || !std::isfinite(k_i) || !std::isfinite(extinction) || !std::isfinite(maintenance))
            throw ParameterError("growth parameters must be finite");
        if (mu_max < 0 || maintenance < 0) throw ParameterError("mu_max and maintenance must be non-negative");
        if (k_i <= 0 || extinction <= 0) throw ParameterError("k_i and extinction must be positive");
    }
};

struct ReactorState {
    Timestamp t{};
    double x_gl = 0.0;
    double volume_l = 0.0;
};

struct EnvironmentSample {
    Timestamp t{};
    double i0_wm2 = 0.0;
};

struct OverflowRecord {
    Timestamp t_start{};
    Timestamp t_end{};
    double volume_l = 0.0;
    double x_out_mean_gl = 0.0;
    double mass_g = 0.0;
};

/// Depth-averaged irradiance under Beer-Lambert attenuation.
inline double mean_irradiance(double i0_wm2, double x_gl, double depth_m, double extinction) {
    const double optical_depth = extinction * x_gl * kLitresPerCubicMetre * depth_m;
    if (optical_depth < 1e-9) return i0_wm2;
    return i0_wm2 * -std::expm1(-optical_depth) / optical_depth;
}

/// Specific growth rate in 1/d. Negative in the dark.
inline double growth_rate(double i0_wm2, double x_gl, double depth_m, const GrowthParams& gp) {
    if (!std::isfinite(i0_wm2) || !std::isfinite(x_gl) || !std::isfinite(depth_m))
        throw ParameterError("growth_rate: non-finite input");
    if (x_gl < 0 || i0_wm2 < 0) throw ParameterError("growth_rate: X and I0 must be non-negative");
    gp.validate();
    const double i_avg = mean_irradiance(i0_wm2, x_gl, depth_m, gp.extinction);
    return gp.mu_max * i_avg / (i_avg + gp.k_i) - gp.maintenance;
}

struct StepResult {
    ReactorState state;
    OverflowRecord overflow;
    double grown_mass_g = 0.0;  // biomass produced (negative when respiring) over the step
    bool clamped = false;       // X would have gone negative
};

/// One explicit-Euler step of length dt at dilution flow q_d_lpm (L/min).
/// The outlet concentration over the step is the start-of-step X.
inline StepResult step(const ReactorState& s, const EnvironmentSample& env, double q_d_lpm, Seconds dt,
                       const ReactorParams& rp, const GrowthParams& gp) {
    if (dt <= Seconds{0} || dt > kMaxStep) throw StepError("dt must lie in (0, 60] s, got " + std::to_string(dt.count()));
    if (!std::isfinite(q_d_lpm) || q_d_lpm < 0) throw ParameterError("dilution flow must be non-negative");
    const double h = static_cast<double>(dt.count());
    const double out_volume = q_d_lpm * h / 60.0;
    if (!(out_volume < s.volume_l)) throw StepError("dilution volume in one step exceeds reactor volume");

    const double mu_per_s = growth_rate(env.i0_wm2, s.x_gl, rp.depth_m, gp) / kSecondsPerDayD;
    const double dilution_per_s = q_d_lpm / 60.0 / s.volume_l;

    StepResult r;
    r.state = s;
    r.state.t = s.t + dt;
    double x_next = s.x_gl + h * (mu_per_s - dilution_per_s) * s.x_gl;
    r.overflow = {s.t, r.state.t, out_volume, s.x_gl, out_volume * s.x_gl};
    r.grown_mass_g = h * mu_per_s * s.x_gl * s.volume_l;
    if (x_next < 0) {
        x_next = 0;
        r.clamped = true;
        r.grown_mass_g = r.overflow.mass_g - s.x_gl * s.volume_l;
    }
    r.state.x_gl = x_next;
    return r;
}

inline double standing_mass(const ReactorState& s) { return s.x_gl * s.volume_l; }

}  // namespace raceway::plant
