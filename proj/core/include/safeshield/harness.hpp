#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "safeshield/env.hpp"
#include "safeshield/safety.hpp"
#include "safeshield/shields.hpp"
#include "safeshield/train.hpp"

namespace safeshield::harness {

using geom::Box;
using geom::Matrix;
using geom::Vector;

/// Flat `key = value` settings. Later assignments replace earlier ones.
using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines; `#` starts a comment. Throws ParseError with
/// the source name and line number on malformed lines.
KeyValues parse_config_text(const std::string& text, const std::string& source = "<string>");

/// Throws ConfigError when the file cannot be read.
KeyValues read_config_file(const std::string& path);

struct KeyDoc {
    std::string key;
    std::string help;
};

/// Every recognised key with a one-line description.
const std::vector<KeyDoc>& config_keys();

struct ExperimentConfig {
    // environment
    env::EnvSpec spec = env::EnvSpec::pendulum();
    env::ResetOptions reset;
    std::uint64_t env_seed = 0;

    // safety
    Box spec_box;
    std::string set_path;
    bool compute_set = true;
    std::optional<Matrix> gain;  // empty: discrete LQR on the verification model

    // experiment grid
    std::vector<shields::ShieldType> shields{shields::ShieldType::mask};
    std::vector<shields::TupleMode> tuples{shields::TupleMode::naive};
    rl::TrainConfig train;  // shield type and tuple are filled per run
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "results";
    int eval_episodes = 30;
};

/// Hyperparameter defaults for an environment and learner.
ExperimentConfig default_config(env::EnvKind env, rl::AgentKind agent);

/// Defaults for `env.name` and `agent.name`, then every other key applied on
/// top. Unknown keys and malformed values throw ConfigError.
ExperimentConfig resolve_config(const KeyValues& values);

/// Every key with its resolved value, defaults included, in key order.
KeyValues describe(const ExperimentConfig& config);

/// Output directory after the SAFESHIELD_OUT environment override.
std::string output_dir(const ExperimentConfig& config);

/// Valid (shield, tuple) pairs of the configured grid, in configuration order.
std::vector<std::pair<shields::ShieldType, shields::TupleMode>> experiment_grid(const ExperimentConfig& config);

/// Certified safety machinery for one configuration.
struct SafetyStack {
    Box spec_box;
    env::LinearModel model;
    safety::FailsafeController failsafe;
    std::unique_ptr<safety::SafetyContext> ctx;
    rl::Problem problem;
};

/// Loads or computes the safe set, checks it against the specification box
/// and the failsafe certificate. Throws CertificateError when the check fails.
SafetyStack build_safety(const ExperimentConfig& config);

struct InterventionSummary {
    double rate = 0.0;  // in [0, 1]; larger means more restriction
    double raw_ratio = std::numeric_limits<double>::quiet_NaN();  // masking only
};

/// Replacement and projection: share of intervened steps. Masking: one minus
/// the mean safe-box volume relative to `equilibrium_volume`, clipped to
/// [0, 1]; box volumes are vol(action_box) * scale^m. Throws
/// PreconditionError for an empty list and ConfigError for a masking run
/// whose equilibrium volume is not positive.
InterventionSummary intervention_rate(const std::vector<shields::ShieldDecision>& decisions,
                                      shields::ShieldType type, const Box& action_box,
                                      double equilibrium_volume);

struct RunRecord {
    shields::ShieldType shield = shields::ShieldType::none;
    shields::TupleMode tuple = shields::TupleMode::naive;
    std::uint64_t seed = 0;
    std::string csv;
    std::vector<rl::EpisodeLog> episodes;
    long violations = 0;
    bool aborted = false;
    std::string error;
};

struct ExperimentResult {
    std::string directory;
    std::vector<RunRecord> runs;
    std::string aggregate_csv;
    std::string manifest;

    bool safety_abort() const;
};

/// Per-run CSV header.
extern const char* const kRunCsvHeader;

/// Runs the whole grid, writing one CSV per run, `aggregate.csv` and
/// `manifest.json`. A run that aborts on a safety assertion keeps the rows
/// written so far; the remaining runs still execute.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* progress = nullptr);

/// `runs` share one (shield, tuple) cell; rows are per episode index with the
/// mean and population standard deviation across runs. Values are summed in
/// sorted order, so the result does not depend on the order of the runs.
struct AggregateRow {
    int episode = 0;
    long step = 0;
    int runs = 0;
    double return_mean = 0.0, return_std = 0.0;
    double intervention_mean = 0.0, intervention_std = 0.0;
    double mask_ratio_mean = 0.0, mask_ratio_std = 0.0;
    double violations_mean = 0.0, violations_std = 0.0;
};

std::vector<AggregateRow> aggregate(const std::vector<const std::vector<rl::EpisodeLog>*>& runs);

/// Greedy, noise-free deployment episodes with the run's shield active.
rl::EvalSummary evaluate_deployment(const rl::TrainConfig& train, const rl::Problem& problem,
                                    const rl::Agent& agent, int episodes = 30, std::uint64_t seed = 777);

struct DeploymentRow {
    std::string shield;
    std::string tuple;
    int seeds = 0;
    rl::EvalSummary summary;
};

/// Pools per-seed summaries with equal episode counts into one summary.
rl::EvalSummary pool(const std::vector<rl::EvalSummary>& parts);

/// Trains every grid member on every seed, deploys it, and writes
/// `deployment.csv`. A failsafe-only row is appended for reference.
std::vector<DeploymentRow> run_deployment(const ExperimentConfig& config, std::ostream* progress = nullptr);

/// Decimal text that parses back to the same double.
std::string format_number(double v);

}  // namespace safeshield::harness
