#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "raceway/irradiance.hpp"
#include "raceway/plant.hpp"
#include "test_support.hpp"

using namespace raceway;
using namespace raceway::plant;

namespace {

const Seconds kOffset{7200};

Timestamp t0() { return parse_iso8601("2026-04-27T00:00:00+02:00").t; }

// Trapezoid rule over depth of I0 exp(-k z), independent of the closed form.
double depth_average_by_quadrature(double i0, double x_gl, double depth, double extinction, int n) {
    const double k = extinction * x_gl * 1000.0;
    const double h = depth / n;
    double acc = 0.5 * (i0 + i0 * std::exp(-k * depth));
    for (int i = 1; i < n; ++i) acc += i0 * std::exp(-k * h * i);
    return acc * h / depth;
}

}  // namespace

TEST(ReactorParams, DefaultsMatchRacewayGeometry) {
    ReactorParams rp;
    EXPECT_NO_THROW(rp.validate());
    EXPECT_DOUBLE_EQ(rp.area_m2, 80.0);
    EXPECT_DOUBLE_EQ(rp.depth_m, 0.15);
    EXPECT_NEAR(rp.volume_l, 12000.0, 1e-9 * 12000.0);
    EXPECT_NEAR(ReactorParams::from_geometry(80, 0.10).volume_l, 8000.0, 1e-6);
    EXPECT_THROW((ReactorParams{80, 0.15, 11000}.validate()), ParameterError);
    EXPECT_THROW(ReactorParams::from_geometry(-1, 0.15), ParameterError);
}

TEST(GrowthRate, ZeroLightGivesDarkLoss) {
    GrowthParams gp;
    gp.maintenance = 0.05;
    for (double x : {0.0, 0.3, 1.0, 2.5}) EXPECT_DOUBLE_EQ(growth_rate(0.0, x, 0.15, gp), -0.05);
}

TEST(GrowthRate, HalfSaturationWithoutShading) {
    GrowthParams gp{1.0, 120.0, 0.2, 0.0};
    EXPECT_NEAR(growth_rate(120.0, 0.0, 0.15, gp), 0.5, 1e-12);
}

TEST(GrowthRate, ClosedFormMatchesDepthQuadrature) {
    GrowthParams gp{1.0, 100.0, 0.2, 0.0};
    const double i_avg = depth_average_by_quadrature(500.0, 1.0, 0.15, 0.2, 200000);
    const double expected = gp.mu_max * i_avg / (i_avg + gp.k_i);
    const double got = growth_rate(500.0, 1.0, 0.15, gp);
    EXPECT_NEAR(got, expected, 1e-6 * std::abs(expected));
    EXPECT_NEAR(mean_irradiance(500.0, 1.0, 0.15, 0.2), i_avg, 1e-6 * i_avg);
}

TEST(GrowthRate, RejectsBadInput) {
    GrowthParams gp;
    EXPECT_THROW(growth_rate(NAN, 1.0, 0.15, gp), ParameterError);
    EXPECT_THROW(growth_rate(100, -0.1, 0.15, gp), ParameterError);
    gp.k_i = std::numeric_limits<double>::infinity();
    EXPECT_THROW(growth_rate(100, 1.0, 0.15, gp), ParameterError);
}

TEST(GrowthRate, SelfShadingLowersSpecificRate) {
    GrowthParams gp;
    EXPECT_GT(growth_rate(800, 0.8, 0.15, gp), growth_rate(800, 1.0, 0.15, gp));
}

TEST(Step, NoDynamicsLeavesStateUnchanged) {
    ReactorParams rp;
    ReactorState s{t0(), 0.9, rp.volume_l};
    const auto r = step(s, {t0(), 700}, 0.0, Seconds{1}, rp, GrowthParams::disabled());
    EXPECT_EQ(r.state.x_gl, 0.9);
    EXPECT_EQ(r.overflow.volume_l, 0.0);
    EXPECT_EQ(r.overflow.mass_g, 0.0);
    EXPECT_EQ(r.state.t, t0() + Seconds{1});
}

TEST(Step, RejectsOutOfRangeArguments) {
    ReactorParams rp;
    ReactorState s{t0(), 0.9, rp.volume_l};
    EXPECT_THROW(step(s, {}, 1.0, Seconds{0}, rp, {}), StepError);
    EXPECT_THROW(step(s, {}, 1.0, Seconds{61}, rp, {}), StepError);
    EXPECT_THROW(step(s, {}, -1.0, Seconds{1}, rp, {}), ParameterError);
    EXPECT_THROW(step(s, {}, 12000.0, Seconds{60}, rp, {}), StepError);
}

TEST(Step, OverflowUsesStartOfStepConcentration) {
    ReactorParams rp;
    ReactorState s{t0(), 1.2, rp.volume_l};
    const auto r = step(s, {t0(), 600}, 15.0, Seconds{10}, rp, GrowthParams{});
    EXPECT_DOUBLE_EQ(r.overflow.volume_l, 2.5);
    EXPECT_DOUBLE_EQ(r.overflow.x_out_mean_gl, 1.2);
    EXPECT_NEAR(r.overflow.mass_g, r.overflow.volume_l * r.overflow.x_out_mean_gl, 1e-12);
}

TEST(Step, WashoutMatchesAnalyticSolution) {
    ReactorParams rp;
    const double q = 15.0, x0 = 1.0;
    ReactorState s{t0(), x0, rp.volume_l};
    const int horizon = 4 * 3600;
    for (int i = 0; i < horizon; ++i) s = step(s, {s.t, 0}, q, Seconds{1}, rp, GrowthParams::disabled()).state;
    const double expected = x0 * std::exp(-q / 60.0 * horizon / rp.volume_l);
    EXPECT_NEAR(s.x_gl, expected, 1e-4 * expected);
}

TEST(Step, WashoutFollowsVariableSchedule) {
    ReactorParams rp;
    ReactorState s{t0(), 0.8, rp.volume_l};
    double delivered = 0;
    for (int i = 0; i < 20000; ++i) {
        const double q = (i / 600) % 2 ? 12.0 : 3.0;
        delivered += q / 60.0;
        s = step(s, {s.t, 0}, q, Seconds{1}, rp, GrowthParams::disabled()).state;
    }
    const double expected = 0.8 * std::exp(-delivered / rp.volume_l);
    EXPECT_NEAR(s.x_gl, expected, 1e-4 * expected);
}

// Property: with growth off, standing + harvested mass is conserved for any
// dilution schedule, X never increases and V never moves.
TEST(StepProperty, ConservationMonotoneDilutionAndLevel) {
    ReactorParams rp;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> qdist(0.0, 30.0), xdist(0.05, 2.0);
    std::uniform_int_distribution<int> dtdist(1, 60);
    for (int trial = 0; trial < 50; ++trial) {
        ReactorState s{t0(), xdist(rng), rp.volume_l};
        const double initial = standing_mass(s);
        double harvested = 0.0;
        for (int i = 0; i < 2000; ++i) {
            const double q = (rng() % 4 == 0) ? 0.0 : qdist(rng);
            const double before = s.x_gl;
            const auto r = step(s, {s.t, 0}, q, Seconds{dtdist(rng)}, rp, GrowthParams::disabled());
            harvested += r.overflow.mass_g;
            ASSERT_LE(r.state.x_gl, before);
            if (q > 0) {
                ASSERT_LT(r.state.x_gl, before);
            }
            ASSERT_EQ(r.state.volume_l, rp.volume_l);
            s = r.state;
        }
        EXPECT_NEAR(standing_mass(s) + harvested, initial, 1e-6 * initial);
    }
}

TEST(StepProperty, NonNegativeUnderHeavyDarkLoss) {
    ReactorParams rp;
    GrowthParams gp{1.0, 100, 0.2, 5000.0};  // drives Euler below zero in one step
    ReactorState s{t0(), 0.5, rp.volume_l};
    const auto r = step(s, {t0(), 0}, 0.0, Seconds{60}, rp, gp);
    EXPECT_TRUE(r.clamped);
    EXPECT_EQ(r.state.x_gl, 0.0);
    EXPECT_NEAR(standing_mass(r.state) - standing_mass(s), r.grown_mass_g - r.overflow.mass_g, 1e-9);
    auto s2 = r.state;
    for (int i = 0; i < 100; ++i) s2 = step(s2, {s2.t, 0}, 5.0, Seconds{60}, rp, gp).state;
    EXPECT_GE(s2.x_gl, 0.0);
}

TEST(StepProperty, GrownMassClosesTheBalance) {
    ReactorParams rp;
    GrowthParams gp;
    const auto irr = synth_irradiance(parse_date("2026-04-27"), 2, 950, parse_time_of_day("07:15"),
                                      parse_time_of_day("21:15"), kOffset);
    ReactorState s{t0(), 0.9, rp.volume_l};
    const double initial = standing_mass(s);
    double grown = 0, harvested = 0;
    for (int i = 0; i < 2 * 86400; ++i) {
        const double q = (i / 1800) % 3 == 0 ? 15.0 : 0.0;
        const auto r = step(s, irr.sample(s.t), q, Seconds{1}, rp, gp);
        grown += r.grown_mass_g;
        harvested += r.overflow.mass_g;
        s = r.state;
    }
    EXPECT_NEAR(standing_mass(s) + harvested - initial, grown, 0.01);
}

// Explicit Euler is first order: the change from halving dt shrinks by ~2x.
TEST(StepProperty, FirstOrderConvergenceOverOneDay) {
    ReactorParams rp;
    GrowthParams gp;
    const auto irr = synth_irradiance(parse_date("2026-04-27"), 1, 950, parse_time_of_day("07:15"),
                                      parse_time_of_day("21:15"), kOffset);
    auto run = [&](int dt) {
        ReactorState s{t0(), 0.9, rp.volume_l};
        for (int i = 0; i < 86400 / dt; ++i) {
            const auto tod = local_time_of_day(s.t, kOffset).seconds;
            const double q = (tod >= 11 * 3600 && tod < 13 * 3600) ? 15.0 : 0.0;
            s = step(s, irr.sample(s.t), q, Seconds{dt}, rp, gp).state;
        }
        return s.x_gl;
    };
    const double x60 = run(60), x30 = run(30), x15 = run(15);
    const double d1 = std::abs(x60 - x30), d2 = std::abs(x30 - x15);
    EXPECT_GT(d2, 0.0);
    EXPECT_GT(d1 / d2, 1.6);
    EXPECT_LT(d1 / d2, 2.4);
    // C * dt with C fitted from the coarse pair, and the absolute change is small.
    const double c = d1 / 60.0;
    EXPECT_LE(d2, c * 30.0 * 1.2);
    EXPECT_LT(d1, 1e-3);
}

// ---------------------------------------------------------------------------

TEST(Irradiance, LinearInterpolationAndZeroOutside) {
    raceway::testing::TempDir dir;
    const auto path = dir.write("irr.csv",
                                "timestamp,irradiance_wm2\n"
                                "2026-04-27T06:00:00+02:00,0\n"
                                "2026-04-27T12:00:00+02:00,900\n");
    const auto series = load_irradiance(path);
    EXPECT_DOUBLE_EQ(series.at(parse_iso8601("2026-04-27T09:00:00+02:00").t), 450.0);
    EXPECT_DOUBLE_EQ(series.at(parse_iso8601("2026-04-27T12:00:00+02:00").t), 900.0);
    EXPECT_EQ(series.at(parse_iso8601("2026-04-27T05:00:00+02:00").t), 0.0);
    EXPECT_EQ(series.at(parse_iso8601("2026-04-27T12:00:01+02:00").t), 0.0);
}

TEST(Irradiance, IngestionErrors) {
    raceway::testing::TempDir dir;
    EXPECT_THROW(load_irradiance(dir.write("empty.csv", "")), IngestionError);
    EXPECT_THROW(load_irradiance(dir.write("hdr.csv", "timestamp,irradiance_wm2\n")), IngestionError);
    EXPECT_THROW(load_irradiance((dir.path() / "missing.csv").string()), IngestionError);
    try {
        load_irradiance(dir.write("order.csv",
                                  "timestamp,irradiance_wm2\n"
                                  "2026-04-27T06:00:00Z,0\n"
                                  "2026-04-27T07:00:00Z,10\n"
                                  "2026-04-27T06:30:00Z,20\n"));
        FAIL() << "expected an ingestion error";
    } catch (const IngestionError& e) {
        EXPECT_EQ(e.line(), 4u);
    }
    try {
        load_irradiance(dir.write("neg.csv", "timestamp,irradiance_wm2\n2026-04-27T06:00:00Z,-3\n"));
        FAIL() << "expected an ingestion error";
    } catch (const IngestionError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(SynthIrradiance, ApexSunriseAndIntegral) {
    const auto rise = parse_time_of_day("07:15"), set = parse_time_of_day("21:15");
    const auto day = parse_date("2026-05-01");
    const auto s = synth_irradiance(day, 3, 950.0, rise, set, kOffset);
    EXPECT_NEAR(s.at(at_local(day, parse_time_of_day("14:15"), kOffset)), 950.0, 1e-9);
    EXPECT_EQ(s.at(at_local(day, rise, kOffset)), 0.0);
    EXPECT_EQ(s.at(at_local(day, parse_time_of_day("23:00"), kOffset)), 0.0);

    // Trapezoid integral of the sampled trace over one day.
    const Timestamp a = at_local(day, {0}, kOffset), b = a + Seconds{86400};
    double integral = 0;
    for (Timestamp t = a; t < b; t += Seconds{1}) integral += 0.5 * (s.at(t) + s.at(t + Seconds{1}));
    const double expected = 950.0 * (set.seconds - rise.seconds) * 2.0 / std::numbers::pi;
    EXPECT_NEAR(integral, expected, 1e-4 * expected);
}

TEST(SynthIrradiance, RejectsBadWindow) {
    EXPECT_THROW(synth_irradiance(parse_date("2026-05-01"), 1, 900, parse_time_of_day("20:00"),
                                  parse_time_of_day("07:00"), kOffset),
                 ParameterError);
    EXPECT_THROW(synth_irradiance(parse_date("2026-05-01"), 1, -1, parse_time_of_day("07:00"),
                                  parse_time_of_day("20:00"), kOffset),
                 ParameterError);
}
