#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "raceway/supervisor.hpp"
#include "test_support.hpp"

using namespace raceway;
using supervisor::Campaign;
using supervisor::Command;
using supervisor::TickRecord;

namespace {

Scenario one_day(double x0 = 1.1, double x_max = 1.0) {
    auto j = nlohmann::json::parse(R"({
      "name": "unit",
      "start": "2026-04-27T00:00:00+02:00",
      "duration_days": 1,
      "seed": 11,
      "estimator": {"calibration_samples": 40},
      "reactors": [{"name": "rw5", "mode": "turbidostat"},
                   {"name": "rw6", "mode": "chemostat", "initial_x_gl": 1.2}]
    })");
    j["reactors"][0]["initial_x_gl"] = x0;
    j["reactors"][0]["turbidostat"] = {{"x_max_gl", x_max}};
    return parse_scenario(j);
}

// Calibrating is the slow part; share one model across tests.
const estimation::CalibrationModel& model() {
    static const auto m = supervisor::calibrate_estimator(one_day());
    return m;
}

std::vector<std::string> collect_ticks(const Scenario& s) {
    Campaign c(s, model());
    std::vector<std::string> lines;
    c.on_record([&](const TickRecord& r) { lines.push_back(supervisor::to_json(r, s.utc_offset).dump()); });
    c.run();
    return lines;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Supervisor, RecordsEveryLogIntervalPlusFinal) {
    const auto s = one_day();
    Campaign c(s, model());
    std::map<std::string, std::vector<TickRecord>> recs;
    c.on_record([&](const TickRecord& r) { recs[r.reactor].push_back(r); });
    c.run();
    ASSERT_EQ(recs.size(), 2u);
    for (const auto& [name, v] : recs) {
        SCOPED_TRACE(name);
        ASSERT_EQ(v.size(), 86400u / 10 + 1);
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v[i].t, s.start + Seconds{10 * static_cast<long>(i)});
        EXPECT_EQ(v.back().t, s.end());
        for (std::size_t i = 1; i < v.size(); ++i) EXPECT_GE(v[i].cum_volume, v[i - 1].cum_volume);
    }
    EXPECT_TRUE(c.finished());
}

TEST(Supervisor, FirstEstimateArrivesAfterOneCycle) {
    const auto s = one_day();
    Campaign c(s, model());
    std::vector<TickRecord> v;
    c.on_record([&](const TickRecord& r) {
        if (r.reactor == "rw5") v.push_back(r);
    });
    for (int i = 0; i < 600; ++i) c.step();
    const auto avail = s.start + s.sensor.cycle_duration;
    for (const auto& r : v) EXPECT_EQ(r.x_hat.has_value(), r.t >= avail) << format_iso8601(r.t, s.utc_offset);
}

TEST(Supervisor, SameSeedSameLog) {
    const auto s = one_day();
    EXPECT_EQ(collect_ticks(s), collect_ticks(s));
    auto other = s;
    other.seed = 12;
    EXPECT_NE(collect_ticks(s), collect_ticks(other));
}

TEST(Supervisor, NoGrowthBelowThresholdMeansNoHarvest) {
    auto s = one_day(0.8, 1.0);
    s.reactors.resize(1);
    s.reactors[0].growth.mu_max = 0;
    s.reactors[0].growth.maintenance = 0;
    Campaign c(s, model());
    std::vector<TickRecord> v;
    c.on_record([&](const TickRecord& r) { v.push_back(r); });
    c.run();
    for (const auto& r : v) {
        EXPECT_EQ(r.u, 0);
        EXPECT_DOUBLE_EQ(r.x_true, 0.8);
    }
    const auto rep = c.report();
    EXPECT_EQ(rep.reactors[0].harvest_events, 0u);
    EXPECT_DOUBLE_EQ(rep.reactors[0].balance.total_volume_l, 0.0);
}

TEST(Supervisor, TurbidostatHarvestsDownToBand) {
    auto s = one_day(1.3, 1.0);
    Campaign c(s, model());
    c.run();
    const auto rep = c.report();
    const auto& rw5 = rep.reactors[0];
    EXPECT_GT(rw5.harvest_events, 0u);
    EXPECT_GT(rw5.balance.total_volume_l, 0.0);
    // Pump only runs inside the daylight window.
    for (const auto& d : rw5.rows) EXPECT_GE(d.harvested_volume_l, 0.0);
    EXPECT_LT(rw5.balance.final_cb, 1.3);
}

TEST(Supervisor, GrownMassMatchesOutletAndStanding) {
    const auto s = one_day();
    Campaign c(s, model());
    c.run();
    for (const auto& r : c.report().reactors) {
        SCOPED_TRACE(r.name);
        ASSERT_TRUE(r.grown_mass_g);
        EXPECT_NEAR(r.true_balance.net_production_g, *r.grown_mass_g, 1e-6 * std::abs(*r.grown_mass_g) + 1e-6);
    }
}

TEST(Supervisor, ChemostatDeliversDailyFraction) {
    const auto s = one_day();
    Campaign c(s, model());
    c.run();
    const auto rep = c.report();
    const auto& rw6 = rep.reactors[1];
    ASSERT_EQ(rw6.rows.size(), 1u);
    EXPECT_NEAR(rw6.rows[0].harvested_volume_l, s.reactors[1].chemostat.daily_fraction * s.reactors[1].reactor.volume_l,
                1e-6);
}

TEST(Supervisor, CommandsValidateAndApply) {
    const auto s = one_day(0.9, 1.0);
    Campaign c(s, model());
    std::vector<nlohmann::json> events;
    c.on_event([&](const nlohmann::json& e) { events.push_back(e); });
    for (int i = 0; i < 3600 * 5; ++i) c.step();

    EXPECT_THROW(c.apply({Command::Kind::setpoint, "rw5", -1.0, {}}), ValidationError);
    EXPECT_THROW(c.apply({Command::Kind::setpoint, "nope", 0.8, {}}), ValidationError);
    EXPECT_THROW(c.apply({Command::Kind::manual_harvest, "rw5", 0.0, {}}), ValidationError);
    EXPECT_TRUE(c.command_violations({Command::Kind::setpoint, "", 0.7, {}}).empty());

    // An empty reactor name means the first reactor.
    c.apply({Command::Kind::setpoint, "", 0.7, {}});
    for (int i = 0; i < 10; ++i) c.step();
    EXPECT_DOUBLE_EQ(c.latest()[0].x_max_active, 0.7);
    EXPECT_NEAR(c.latest()[0].x_min_active, 0.65, 1e-12);

    // Before the chemostat start time, so only the manual volume leaves.
    const double before = c.latest()[1].cum_volume;
    c.apply({Command::Kind::manual_harvest, "rw6", 300.0, {}});
    for (int i = 0; i < 1800; ++i) c.step();
    EXPECT_NEAR(c.latest()[1].cum_volume - before, 300.0, 1e-6);

    c.apply({Command::Kind::mode, "rw5", 0.0, OperatingMode::chemostat});
    for (int i = 0; i < 10; ++i) c.step();
    EXPECT_EQ(c.latest()[0].mode, OperatingMode::chemostat);

    auto kinds = [&](const std::string& k) {
        return std::count_if(events.begin(), events.end(), [&](const auto& e) { return e.at("kind") == k; });
    };
    EXPECT_EQ(kinds("setpoint_requested"), 1);
    EXPECT_EQ(kinds("setpoint_applied"), 1);
    EXPECT_EQ(kinds("manual_harvest_requested"), 1);
    EXPECT_EQ(kinds("mode"), 1);
}

TEST(Supervisor, ScheduledSetpointIsAppliedAndReported) {
    auto s = one_day(1.0, 1.0);
    s.reactors.resize(1);
    s.reactors[0].setpoint_events.push_back({s.start + Seconds{12 * 3600}, 0.8});
    Campaign c(s, model());
    c.run();
    const auto rep = c.report();
    ASSERT_EQ(rep.reactors[0].setpoint_bursts.size(), 1u);
    const auto& b = rep.reactors[0].setpoint_bursts[0];
    EXPECT_DOUBLE_EQ(b.new_x_max, 0.8);
    ASSERT_TRUE(b.burst);
    EXPECT_GE(b.burst->t_start, b.setpoint_t);
    EXPECT_GT(b.burst->volume_l, 0.0);
}

TEST(Supervisor, LogsReloadToTheSameReport) {
    raceway::testing::TempDir dir;
    const auto s = one_day();
    const auto live = supervisor::run_scenario(s, dir.path(), model());
    for (const char* f : {"campaign.json", "ticks_rw5.jsonl", "ticks_rw6.jsonl", "events.jsonl", "report.json", "ledger.csv"})
        EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;

    const auto ticks = supervisor::load_ticks(dir.path() / "ticks_rw5.jsonl");
    EXPECT_EQ(ticks.size(), 86400u / 10 + 1);
    for (const auto& line : supervisor::read_jsonl(dir.path() / "ticks_rw5.jsonl")) {
        const std::string t = line.at("t");
        EXPECT_EQ(t.substr(t.size() - 6), "+02:00");
    }

    const auto reloaded = supervisor::report_from_logs(dir.path());
    EXPECT_EQ(supervisor::to_json(reloaded).at("reactors"), supervisor::to_json(live).at("reactors"));

    const auto ledger = accounting::load_ledger((dir.path() / "ledger.csv").string());
    const auto rep = accounting::replay(ledger);
    EXPECT_NEAR(rep.balance.at("rw5").total_mass_g, live.reactors[0].balance.total_mass_g, 0.01);
}

TEST(Supervisor, TruncatedFinalLineIsDropped) {
    raceway::testing::TempDir dir;
    supervisor::run_scenario(one_day(), dir.path(), model());
    const auto path = dir.path() / "ticks_rw5.jsonl";
    const auto full = supervisor::load_ticks(path);
    auto text = slurp(path);
    text.resize(text.size() - 20);
    std::ofstream(path, std::ios::trunc) << text;
    EXPECT_EQ(supervisor::load_ticks(path).size(), full.size() - 1);

    std::ofstream(path, std::ios::trunc) << "{\"t\":\n" << text;
    EXPECT_THROW(supervisor::load_ticks(path), IngestionError);
}

TEST(Supervisor, TickRecordJsonRoundTrip) {
    TickRecord r;
    r.t = parse_iso8601("2026-05-05T12:00:00+02:00").t;
    r.reactor = "rw5";
    r.x_true = 0.91;
    r.x_hat = std::nullopt;
    r.u = 1;
    r.q_d = 15;
    r.i0 = 900;
    r.cum_volume = 10;
    r.cum_mass = 9;
    r.mode = OperatingMode::turbidostat;
    r.x_max_active = 0.8;
    r.x_min_active = 0.75;
    const auto j = supervisor::to_json(r, Seconds{7200});
    EXPECT_EQ(j.at("t"), "2026-05-05T12:00:00+02:00");
    EXPECT_TRUE(j.at("x_hat_gl").is_null());
    const auto back = supervisor::tick_from_json(j);
    EXPECT_EQ(supervisor::to_json(back, Seconds{7200}), j);
}

TEST(Supervisor, ModelWithWrongFeatureCountIsRejected) {
    raceway::testing::TempDir dir;
    auto s = one_day();
    auto m = model();
    m.beta.pop_back();
    m.feature_mean.pop_back();
    m.feature_scale.pop_back();
    m.feature_names.pop_back();
    estimation::save_model((dir.path() / "m.json").string(), m);
    s.estimator.model_file = (dir.path() / "m.json").string();
    EXPECT_THROW(supervisor::load_or_calibrate(s), ValidationError);
}

// Over the shipped 14-day campaign: once the first dilution event has
// finished, true X stays within 0.05 g/L of the band, apart from setpoint
// days where the old concentration is still being washed out.
TEST(Supervisor, DefaultCampaignHoldsTheBand) {
    const auto s = load_scenario(std::string(RACEWAY_SCENARIO_DIR) + "/default.json");
    Campaign c(s, supervisor::load_or_calibrate(s));
    std::vector<TickRecord> ticks;
    c.on_record([&](const TickRecord& r) {
        if (r.reactor == "rw5") ticks.push_back(r);
    });
    c.run();

    std::set<Date> change_days;
    for (const auto& e : s.reactors[0].setpoint_events) change_days.insert(local_date(e.t, s.utc_offset));
    std::size_t first_off = 0;
    for (std::size_t i = 1; i < ticks.size() && !first_off; ++i)
        if (ticks[i - 1].u == 1 && ticks[i].u == 0) first_off = i;
    ASSERT_GT(first_off, 0u);

    std::map<Date, double> daily_max;
    for (std::size_t i = first_off; i < ticks.size(); ++i) {
        const auto& r = ticks[i];
        const Date d = local_date(r.t, s.utc_offset);
        if (change_days.contains(d) || r.t >= s.end()) continue;
        auto& m = daily_max.try_emplace(d, 0.0).first->second;
        m = std::max(m, r.x_true);
        EXPECT_LE(m, r.x_max_active + 0.05) << format_iso8601(r.t, s.utc_offset);
        if (r.u == 1) EXPECT_GE(r.x_true, r.x_min_active - 0.05) << format_iso8601(r.t, s.utc_offset);
    }
    EXPECT_GE(daily_max.size(), 10u);
}
