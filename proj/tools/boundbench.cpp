// boundbench command-line driver.
//
// Exit codes: 0 success, 1 a monitored invariant (or certification) failed,
// 2 bad usage or configuration, 3 runtime error.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "boundbench/activations.hpp"
#include "boundbench/harness.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

void print_verdicts(const boundbench::RunLog& log) {
    for (const auto& v : log.verdicts) {
        if (v.evaluated == 0) {
            std::cout << "  " << v.name << ": not applicable\n";
            continue;
        }
        std::cout << "  " << v.name << ": " << (v.failures == 0 ? "pass" : "FAIL")
                  << " worst_slack=" << boundbench::format_double(v.worst_slack);
        if (v.first_violation) {
            std::cout << " first_violation=" << *v.first_violation;
        }
        std::cout << '\n';
    }
}

int run_command(const std::string& config_path, const std::optional<std::string>& out,
                const std::optional<std::uint64_t>& seed, std::optional<boundbench::RunMode> force_mode) {
    boundbench::RunConfig cfg;
    try {
        cfg = boundbench::load_config(config_path);
    } catch (const boundbench::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    if (force_mode) {
        cfg.mode = *force_mode;
    }
    if (out) {
        cfg.output.dir = *out;
    }
    if (seed) {
        boundbench::apply_seed_override(cfg, *seed);
    }
    try {
        const boundbench::RunLog log = boundbench::run(cfg);
        std::cout << "mode " << boundbench::to_string(cfg.mode) << ", " << log.records.size() << " steps, "
                  << boundbench::format_double(log.wall_seconds) << " s\n";
        print_verdicts(log);
        for (const auto& w : log.warnings) {
            std::cerr << "warning: " << w << '\n';
        }
        std::cout << "output: " << cfg.output.dir << '\n';
        std::cout << (log.passed ? "PASSED" : "FAILED") << '\n';
        return log.passed ? 0 : kExitFailure;
    } catch (const boundbench::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int certify_command(const std::string& kind, double h) {
    try {
        const boundbench::Activation act(boundbench::parse_activation_kind(kind), h);
        const boundbench::SmoothnessReport r = boundbench::certify_h_smooth(act);
        const nlohmann::json j = {{"kind", std::string(boundbench::to_string(act.kind()))},
                                  {"h", h},
                                  {"value_at_zero", r.value_at_zero},
                                  {"max_abs_deriv", r.max_abs_deriv},
                                  {"max_lipschitz_quotient", r.max_lipschitz_quotient},
                                  {"lipschitz_limit", 1.0 / h},
                                  {"max_taylor_gap", r.max_taylor_gap},
                                  {"taylor_gap_limit", h / 2.0},
                                  {"tol", r.tol},
                                  {"samples_used", r.samples_used},
                                  {"pass", r.pass}};
        std::cout << j.dump(2) << '\n';
        return r.pass ? 0 : kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Theory-instrumented gradient descent on smoothed-ReLU networks"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed_override;
    auto* run = app.add_subcommand("run", "Run an experiment config");
    run->add_option("--config", config_path, "Experiment JSON")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory (overrides output.dir)");
    run->add_option("--seed-override", seed_override, "Use this value for every seed");

    std::string kind;
    double h = 0.0;
    auto* cert = app.add_subcommand("certify-activation", "Check the smoothness properties of an activation");
    cert->set_help_flag("--help", "Print this help message and exit");
    cert->add_option("--kind", kind, "huberized or swish")->required()->check(CLI::IsMember({"huberized", "swish"}));
    cert->add_option("--h", h, "Smoothing width")->required();

    std::string diag_config;
    std::optional<std::string> diag_out;
    auto* diag = app.add_subcommand("diagnostics", "Initialization concentration report for a config");
    diag->add_option("--config", diag_config, "Experiment JSON")->required()->check(CLI::ExistingFile);
    diag->add_option("--out", diag_out, "Output directory (overrides output.dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    if (*run) {
        return run_command(config_path, out_dir, seed_override, std::nullopt);
    }
    if (*cert) {
        return certify_command(kind, h);
    }
    return run_command(diag_config, diag_out, std::nullopt, boundbench::RunMode::Diagnostics);
}
