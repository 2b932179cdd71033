#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <variant>
#include <vector>

#include "safeshield/agents.hpp"
#include "safeshield/env.hpp"
#include "safeshield/safety.hpp"
#include "safeshield/shields.hpp"

namespace safeshield::rl {

enum class AgentKind { dqn, td3 };

std::string to_string(AgentKind k);
AgentKind agent_kind_from_string(const std::string& s);

/// Everything about the task that does not depend on the learner.
struct Problem {
    env::EnvSpec spec;
    geom::Box spec_box;  // safe-state specification; leaving it is a violation
    env::LinearModel sim_model;
    const safety::SafetyContext* ctx = nullptr;
    env::ResetOptions reset;
};

struct ShieldSettings {
    shields::ShieldType type = shields::ShieldType::none;
    shields::TupleMode tuple = shields::TupleMode::naive;
    double penalty = -0.1;
    double proj_dist_coef = 0.0;
};

struct TrainConfig {
    AgentKind agent = AgentKind::td3;
    DqnConfig dqn;
    Td3Config td3;
    int grid_points = 15;  // per action dimension, discrete agents only
    ShieldSettings shield;
    long steps = 0;
    std::uint64_t seed = 0;
    std::uint64_t env_seed = 0;  // salt for the environment stream; 0 keeps the plain derivation
    long eval_every = 0;  // 0 disables periodic evaluation
    int eval_episodes = 10;
    std::uint64_t eval_seed = 12345;

    bool discrete() const { return agent == AgentKind::dqn; }
    /// Throws ConfigError for inconsistent settings.
    void validate() const;
};

struct EpisodeLog {
    int episode = 0;
    long end_step = 0;  // global step count when the episode ended
    int steps = 0;
    double return_mean = 0.0;  // mean per-step reward
    double intervention_rate = 0.0;
    double mask_volume_ratio = std::numeric_limits<double>::quiet_NaN();  // masking only
    int violations = 0;
    int fallbacks = 0;
};

struct EvalPoint {
    long step = 0;
    double mean_return = 0.0;
};

struct RunLog {
    std::vector<EpisodeLog> episodes;
    std::vector<EvalPoint> evaluations;
    long steps = 0;
    long violations = 0;
};

using Agent = std::variant<DqnAgent, Td3Agent>;

/// Independent generator seeds derived from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Evenly spaced grid over the action box, `points` per dimension (row-major,
/// last dimension fastest).
std::vector<Vector> action_grid(const geom::Box& action_box, int points);

Agent make_agent(const TrainConfig& config, const Problem& problem);

using EpisodeCallback = std::function<void(const EpisodeLog&)>;

/// Trains for config.steps environment steps. With a shield active, any
/// execution of an action rejected by the safety function or any state outside
/// the specification throws SafetyViolation. `on_episode` sees every finished
/// episode as it completes, so callers keep partial logs when a run aborts.
RunLog train(const TrainConfig& config, const Problem& problem, Agent& agent,
             const EpisodeCallback& on_episode = {});

struct EvalSummary {
    int episodes = 0;
    double return_mean = 0.0, return_std = 0.0;
    double intervention_mean = 0.0, intervention_std = 0.0;
    double violation_mean = 0.0, violation_std = 0.0;  // per-episode share of violating steps
};

/// Greedy, noise-free episodes with the configured shield active.
EvalSummary evaluate(const TrainConfig& config, const Problem& problem, const Agent& agent, int episodes,
                     std::uint64_t seed);

/// Episodes driven by the failsafe controller alone.
EvalSummary evaluate_failsafe(const Problem& problem, int episodes, std::uint64_t seed);

}  // namespace safeshield::rl
