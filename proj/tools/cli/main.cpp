// safeshield command-line tool.
//
// Exit status: 0 success, 1 runtime failure, 2 usage or configuration error,
// 3 a safety abort, a rejected certificate or a failed acceptance check.

#include <chrono>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "safeshield/errors.hpp"
#include "safeshield/harness.hpp"

namespace {

using namespace safeshield;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitUnsafe = 3;

/// `--config FILE` plus one `--<key>` option per configuration key.
struct KeyOptions {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "key = value file; command-line keys override it");
        for (const auto& doc : harness::config_keys())
            options[doc.key] = app->add_option("--" + doc.key, values[doc.key], doc.help)->group("Configuration keys");
    }

    harness::ExperimentConfig resolve(const harness::KeyValues& extra = {}) const {
        harness::KeyValues kv;
        if (!config_file.empty()) kv = harness::read_config_file(config_file);
        for (const auto& [key, value] : extra) kv[key] = value;
        for (const auto& [key, opt] : options)
            if (opt->count() > 0) kv[key] = values.at(key);
        return harness::resolve_config(kv);
    }
};

int cmd_run(const KeyOptions& keys) {
    const auto config = keys.resolve();
    const auto result = harness::run_experiment(config, &std::cerr);
    std::cout << "results in " << result.directory << "\n";
    for (const auto& r : result.runs) {
        std::cout << "  " << r.csv << ": " << r.episodes.size() << " episodes, " << r.violations << " violations";
        if (r.aborted) std::cout << ", ABORTED: " << r.error;
        std::cout << "\n";
    }
    return result.safety_abort() ? kExitUnsafe : 0;
}

int cmd_eval(const KeyOptions& keys) {
    const auto config = keys.resolve();
    const auto rows = harness::run_deployment(config, &std::cerr);
    std::cout << std::left << std::setw(18) << "shield" << std::setw(18) << "tuple" << std::setw(7) << "seeds"
              << "return (mean +- std)   intervention   violations\n";
    for (const auto& r : rows) {
        const auto& s = r.summary;
        std::cout << std::setw(18) << r.shield << std::setw(18) << r.tuple << std::setw(7) << r.seeds
                  << harness::format_number(s.return_mean) << " +- " << harness::format_number(s.return_std) << "   "
                  << harness::format_number(s.intervention_mean) << "   " << harness::format_number(s.violation_mean)
                  << "\n";
    }
    std::cout << "written to " << harness::output_dir(config) << "/deployment.csv\n";
    return 0;
}

int cmd_safeset(const KeyOptions& keys, const std::string& env_name, const std::string& out,
                const std::string& verify) {
    harness::KeyValues extra;
    if (!verify.empty()) {
        const safety::SafeSet set = safety::load_safe_set(verify);
        std::string name = env_name;
        if (name.empty()) {
            const auto dim = set.polytope.dim();
            if (dim == env::EnvSpec::pendulum().state_dim()) name = "pendulum";
            else if (dim == env::EnvSpec::quadrotor().state_dim()) name = "quadrotor";
            else throw ConfigError("cannot infer the environment of a " + std::to_string(dim) + "-dimensional set");
        }
        extra["env.name"] = name;
        extra["safety.compute"] = "false";
        extra["safety.set_path"] = verify;
        const auto config = keys.resolve(extra);
        try {
            const auto st = harness::build_safety(config);
            std::cout << verify << ": certified for " << name << " (" << st.ctx->polytope().rows()
                      << " halfspaces)\n";
            return 0;
        } catch (const CertificateError& e) {
            std::cout << verify << ": REJECTED: " << e.what() << "\n";
            return kExitUnsafe;
        }
    }
    if (!env_name.empty()) extra["env.name"] = env_name;
    extra["safety.compute"] = "true";
    if (!out.empty()) extra["safety.set_path"] = out;
    const auto config = keys.resolve(extra);
    const auto start = std::chrono::steady_clock::now();
    const auto st = harness::build_safety(config);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << env::to_string(config.spec.kind) << " safe set: " << st.ctx->polytope().rows() << " halfspaces in "
              << std::fixed << std::setprecision(2) << secs << " s";
    if (!config.set_path.empty()) std::cout << ", written to " << config.set_path;
    std::cout << "\n";
    return 0;
}

int cmd_oracle(bool all, const std::vector<int>& ids) {
    const std::set<int> only(ids.begin(), ids.end());
    int failed = 0, skipped = 0;
    for (const auto& c : oracles::criteria()) {
        if (only.empty() ? (c.slow && !all) : !only.count(c.id)) {
            ++skipped;
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        oracles::Outcome o;
        try {
            o = c.run(&std::cerr);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << std::setw(2) << c.id << "] " << c.name << " -- "
                  << o.detail << " (" << std::fixed << std::setprecision(1) << secs << " s)" << std::defaultfloat
                  << std::endl;
    }
    if (skipped > 0) std::cout << skipped << " criteria skipped (use --all or list ids)\n";
    return failed == 0 ? 0 : kExitUnsafe;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Provably safe reinforcement learning with action shields"};
    app.require_subcommand(1);

    KeyOptions run_keys, eval_keys, set_keys;
    auto* run = app.add_subcommand("run", "train every (shield, tuple, seed) of the grid and write CSVs");
    run_keys.attach(run);
    auto* eval = app.add_subcommand("eval", "train, then deploy greedily and write deployment.csv");
    eval_keys.attach(eval);

    std::string env_name, out, verify;
    auto* safeset = app.add_subcommand("safeset", "compute a safe set, or verify one from a file");
    safeset->add_option("--env", env_name, "pendulum or quadrotor (inferred from the file for --verify)");
    safeset->add_option("--out", out, "write the computed set here");
    safeset->add_option("--verify", verify, "check a stored set against the failsafe certificate");
    set_keys.attach(safeset);

    bool all = false;
    std::vector<int> ids;
    auto* oracle = app.add_subcommand("oracle", "run acceptance checks against independent oracles");
    oracle->add_flag("--all", all, "include the checks that train agents");
    oracle->add_option("ids", ids, "criteria to run (default: the fast ones)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*run) return cmd_run(run_keys);
        if (*eval) return cmd_eval(eval_keys);
        if (*safeset) return cmd_safeset(set_keys, env_name, out, verify);
        if (*oracle) return cmd_oracle(all, ids);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const CertificateError& e) {
        std::cerr << "certificate error: " << e.what() << "\n";
        return kExitUnsafe;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
