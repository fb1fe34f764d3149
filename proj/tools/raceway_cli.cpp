// raceway: command-line entry points for the raceway digital twin.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "raceway/calibration_io.hpp"
#include "raceway/ledger_io.hpp"
#include "raceway/service.hpp"
#include "raceway/supervisor.hpp"
#include "raceway/synthetic.hpp"

namespace {

using namespace raceway;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

int cmd_run(const std::string& path, const std::string& out, std::optional<std::uint64_t> seed) {
    auto s = load_scenario(path);
    if (seed) s.seed = *seed;
    const std::filesystem::path dir = out.empty() ? std::filesystem::path("runs") / s.name : std::filesystem::path(out);
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = supervisor::run_scenario(s, dir);
    std::cout << supervisor::format_report(rep);
    std::printf("\nlogs in %s (%.1f s)\n", dir.string().c_str(),
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return 0;
}

int cmd_serve(const std::string& path, const std::string& bind, std::optional<double> accel, const std::string& out,
              const std::string& static_dir, bool exit_when_done) {
    auto s = load_scenario(path);
    service::ServiceOptions opt;
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw ValidationError(std::vector<std::string>{"--bind must be host:port"});
    opt.host = bind.substr(0, colon);
    try {
        opt.port = std::stoi(bind.substr(colon + 1));
    } catch (const std::exception&) {
        throw ValidationError(std::vector<std::string>{"--bind port must be a number"});
    }
    opt.time_acceleration = accel;
    if (!out.empty()) opt.log_dir = out;
    if (!static_dir.empty()) opt.static_dir = static_dir;

    service::Service svc(s, supervisor::load_or_calibrate(s), opt);
    svc.start();
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::atomic<bool> done{false};
    std::thread waiter([&] {
        svc.wait_finished();
        done = true;
    });
    while (!g_interrupted && !(exit_when_done && done))
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    svc.stop();
    waiter.join();
    return 0;
}

int cmd_replay(const std::string& path) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rep = accounting::replay(accounting::load_ledger(path));
    std::cout << accounting::format_replay(rep);
    spdlog::debug("replay took {:.3f} s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return 0;
}

int cmd_fit(const std::string& path, std::vector<double> lambdas, const std::string& out) {
    const auto data = estimation::load_dataset(path);
    if (lambdas.empty()) lambdas = synthetic::default_lambda_grid(data);
    const auto cv = estimation::cross_validate(data, lambdas);
    estimation::CalibrationModel model;
    try {
        model = estimation::fit_lasso(data, cv.lambda_star);
    } catch (const estimation::ConvergenceError& e) {
        spdlog::warn("fit did not converge at lambda={}; writing last iterate", cv.lambda_star);
        model = e.last_iterate().model;
    }
    if (model.n_features() == 24) model.feature_names = estimation::feature_names(8, 8);

    std::vector<double> pred, ref;
    for (const auto& s : data) {
        pred.push_back(estimation::predict(model, s.features));
        ref.push_back(s.reference_x);
    }
    const auto m = estimation::metrics(pred, ref);

    std::printf("%14s %12s\n", "lambda", "cv_rmse");
    for (const auto& row : cv.table)
        std::printf("%14.6g %12.6f%s\n", row.lambda, row.mean_rmse,
                    row.lambda == cv.lambda_star ? "  *" : "");
    std::printf("\nselected lambda  %.6g\nnonzero          %zu of %zu\nin-sample MAE    %.6f g/L\nin-sample RMSE   %.6f g/L\n",
                cv.lambda_star, model.nonzero_count(), model.n_features(), m.mae, m.rmse);
    estimation::save_model(out, model);
    std::printf("model written to %s\n", out.c_str());
    return 0;
}

int cmd_report(const std::string& dir) {
    std::cout << supervisor::format_report(supervisor::report_from_logs(dir));
    return 0;
}

int cmd_synth(const std::string& out, std::size_t n, std::uint64_t seed, double x_lo, double x_hi) {
    synthetic::DatasetSpec spec;
    spec.n_samples = n;
    spec.seed = seed;
    spec.x_lo = x_lo;
    spec.x_hi = x_hi;
    const auto start = parse_iso8601("2026-04-01T00:00:00+02:00");
    const auto data = synthetic::calibration_dataset(sensor::SensorConfig::defaults(), spec, start.t);
    estimation::save_dataset(out, data, start.utc_offset);
    std::printf("%zu samples written to %s\n", data.size(), out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Raceway reactor digital twin: simulation, estimation, control and accounting"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    std::string scenario, out, bind, static_dir, csv, dataset, logdir;
    std::optional<std::uint64_t> seed;
    std::optional<double> accel;
    std::vector<double> lambdas;
    bool exit_when_done = false;

    auto* run = app.add_subcommand("run", "Run a scenario to completion and write logs");
    run->add_option("scenario", scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Log directory (default runs/<scenario name>)");
    run->add_option("--seed", seed, "Override the scenario seed");

    auto* serve = app.add_subcommand("serve", "Run a scenario live behind the HTTP API");
    serve->add_option("scenario", scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    serve->add_option("--bind", bind, "host:port")->required();
    serve->add_option("--accel", accel, "Simulated seconds per wall-clock second");
    serve->add_option("--out", out, "Also write logs to this directory");
    serve->add_option("--static", static_dir, "Directory served at /");
    serve->add_flag("--exit-when-done", exit_when_done, "Stop once the campaign ends");

    auto* replay = app.add_subcommand("replay-ledger", "Recompute balances from a daily ledger CSV");
    replay->add_option("csv", csv, "Ledger CSV")->required();

    auto* fit = app.add_subcommand("fit", "Fit the biomass estimator on a calibration dataset");
    fit->add_option("dataset", dataset, "Dataset CSV")->required();
    fit->add_option("--lambdas", lambdas, "Regularization grid (default: 20 values below lambda_max)");
    std::string model_out = "model.json";
    fit->add_option("--out", model_out, "Model JSON output")->capture_default_str();

    auto* report = app.add_subcommand("report", "Summarize a log directory written by run");
    report->add_option("logdir", logdir, "Log directory")->required()->check(CLI::ExistingDirectory);

    auto* synth = app.add_subcommand("synth-dataset", "Write a synthetic calibration dataset");
    std::string synth_out = "dataset.csv";
    std::size_t n = 60;
    std::uint64_t synth_seed = 1;
    double x_lo = 0.2, x_hi = 1.6;
    synth->add_option("--out", synth_out)->capture_default_str();
    synth->add_option("-n,--samples", n)->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();
    synth->add_option("--x-lo", x_lo)->capture_default_str();
    synth->add_option("--x-hi", x_hi)->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%l] %v");

    try {
        if (*run) return cmd_run(scenario, out, seed);
        if (*serve) return cmd_serve(scenario, bind, accel, out, static_dir, exit_when_done);
        if (*replay) return cmd_replay(csv);
        if (*fit) return cmd_fit(dataset, lambdas, model_out);
        if (*report) return cmd_report(logdir);
        if (*synth) return cmd_synth(synth_out, n, synth_seed, x_lo, x_hi);
    } catch (const ValidationError& e) {
        std::cerr << "invalid input:\n";
        for (const auto& v : e.violations()) std::cerr << "  - " << v << '\n';
        return 2;
    } catch (const IngestionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
