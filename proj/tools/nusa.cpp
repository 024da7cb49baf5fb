#include <csignal>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "nusa/als/socket_server.hpp"
#include "nusa/error.hpp"
#include "nusa/testbed/deployment.hpp"
#include "nusa/testbed/privacy_scan.hpp"
#include "nusa/testbed/scenario.hpp"
#include "nusa/testbed/sweep_daemon.hpp"

namespace fs = std::filesystem;
using namespace nusa;

namespace {

constexpr int kExitMismatch = 1;
constexpr int kExitUsage = 2;

sigset_t termination_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    return set;
}

// Waits up to `ms` for SIGINT/SIGTERM; true when one arrived.
bool wait_for_signal(long ms) {
    const auto set = termination_signals();
    timespec ts{ms / 1000, (ms % 1000) * 1'000'000};
    return sigtimedwait(&set, nullptr, &ts) > 0;
}

std::unique_ptr<testbed::SweepDaemon> make_sweeper(testbed::Deployment& deployment, std::int64_t interval_s) {
    std::vector<testbed::SweepDaemon::Task> tasks{
        {"sweep_expired", [&deployment] {
             return "removed=" + std::to_string(deployment.als().sweep_expired());
         }}};
    auto daemon = std::make_unique<testbed::SweepDaemon>(std::chrono::seconds(interval_s), std::move(tasks),
                                                         deployment.clock());
    daemon->set_log_sink([](const std::string& line) { std::cout << line << std::endl; });
    return daemon;
}

int cmd_run(const fs::path& scenario_file, std::optional<std::uint64_t> seed, const fs::path& report_file,
            const fs::path& truth_out, const fs::path& state_dir, bool parallel) {
    testbed::Scenario scenario;
    try {
        scenario = testbed::Scenario::load(scenario_file);
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        return kExitUsage;
    }

    testbed::RunOptions options;
    options.seed = seed;
    options.parallel_actors = parallel;
    bool scratch = false;
    if (state_dir.empty()) {
        std::string tmpl = (fs::temp_directory_path() / "nusa-run-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) {
            std::cerr << "cannot create a scratch state directory\n";
            return kExitUsage;
        }
        options.state_dir = tmpl;
        scratch = true;
    } else {
        options.state_dir = state_dir;
    }

    testbed::RunResult result;
    try {
        result = testbed::run_scenario(scenario, options);
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        if (scratch) fs::remove_all(options.state_dir);
        return kExitUsage;
    }
    const auto& report = result.report;

    if (!report_file.empty()) {
        std::ofstream out(report_file, std::ios::trunc);
        out << report.to_json().dump(2) << '\n';
    }
    if (!truth_out.empty()) testbed::save_truth(truth_out, result.truth);
    if (scratch) fs::remove_all(options.state_dir);

    std::size_t passed = 0;
    for (const auto& s : report.steps) {
        if (s.passed) {
            ++passed;
        } else {
            std::cout << "step " << s.index << " (line " << s.line << ") " << s.actor << " " << s.op << ": expected "
                      << s.expect << ", got " << s.outcome << ": " << s.detail << '\n';
        }
    }
    for (const auto& v : report.violations) {
        std::cout << "violation " << v.file << ":" << v.line << " " << v.reason << '\n';
    }
    std::cout << report.scenario << ": " << passed << "/" << report.steps.size() << " steps passed, "
              << report.violations.size() << " violations (expected " << report.expected_violations << ")\n";
    return report.passed() ? 0 : kExitMismatch;
}

int cmd_scan(const fs::path& state_dir, const fs::path& truth_file) {
    const auto truth = testbed::load_truth(truth_file);
    const auto violations = testbed::privacy_scan(state_dir, truth);
    for (const auto& v : violations) std::cout << nlohmann::json(v).dump() << '\n';
    std::cerr << violations.size() << " violations\n";
    return violations.empty() ? 0 : kExitMismatch;
}

int cmd_serve(const fs::path& config_file) {
    auto config = testbed::DeploymentConfig::load(config_file);
    if (config.socket.empty()) fail(ErrorCode::ValidationError, "config has no socket path");
    testbed::Deployment deployment(config);
    als::SocketServer server(deployment.dispatcher(), config.socket);
    server.start();
    std::unique_ptr<testbed::SweepDaemon> sweeper;
    if (config.sweep_interval_s > 0) {
        sweeper = make_sweeper(deployment, config.sweep_interval_s);
        sweeper->start();
    }
    std::cout << "listening on " << config.socket.string() << std::endl;
    while (!wait_for_signal(1000)) {
    }
    if (sweeper) sweeper->stop();
    server.stop();
    return 0;
}

int cmd_sweep(const fs::path& config_file, std::int64_t interval_s, std::size_t ticks) {
    testbed::Deployment deployment(testbed::DeploymentConfig::load(config_file));
    auto sweeper = make_sweeper(deployment, interval_s);
    sweeper->start();
    while (!wait_for_signal(100)) {
        if (ticks > 0 && sweeper->ticks() >= ticks) break;
    }
    sweeper->stop();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    // Signals are taken synchronously with sigtimedwait; block them before any thread starts.
    const auto signals = termination_signals();
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    CLI::App app{"Pseudonymized health-record test bed"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Replay a scenario against a fresh deployment");
    std::string scenario_file, report_file, truth_out, run_state;
    std::optional<std::uint64_t> seed;
    bool parallel = false;
    run->add_option("scenario", scenario_file, "Scenario file (JSON lines)")->required();
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--report", report_file, "Write the JSON report here");
    run->add_option("--truth-out", truth_out, "Write the identity/PID ground truth here");
    run->add_option("--state-dir", run_state, "Keep the deployment state here (must be empty)");
    run->add_flag("--parallel-actors", parallel, "Overlap steps marked concurrent with the step before them");

    auto* scan = app.add_subcommand("scan", "Scan a deployment state directory for identity/PID linkage");
    std::string scan_dir, truth_file;
    scan->add_option("state-dir", scan_dir)->required();
    scan->add_option("--truth", truth_file, "Ground truth written by run --truth-out")->required();

    auto* serve = app.add_subcommand("serve", "Serve the ALS on a Unix socket");
    std::string serve_config;
    serve->add_option("--config", serve_config)->required();

    auto* sweep = app.add_subcommand("sweep", "Run the background sweep on a schedule");
    std::string sweep_config;
    std::int64_t interval = 0;
    std::size_t ticks = 0;
    sweep->add_option("--interval", interval, "Seconds between sweeps")->required();
    sweep->add_option("--config", sweep_config)->required();
    sweep->add_option("--ticks", ticks, "Stop after this many sweeps (0 = until signalled)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*run) return cmd_run(scenario_file, seed, report_file, truth_out, run_state, parallel);
        if (*scan) return cmd_scan(scan_dir, truth_file);
        if (*serve) return cmd_serve(serve_config);
        if (*sweep) return cmd_sweep(sweep_config, interval, ticks);
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
