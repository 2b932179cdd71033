#include "safeshield/train.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "safeshield/errors.hpp"

namespace safeshield::rl {

using shields::ShieldType;

std::string to_string(AgentKind k) { return k == AgentKind::dqn ? "dqn" : "td3"; }

AgentKind agent_kind_from_string(const std::string& s) {
    if (s == "dqn") return AgentKind::dqn;
    if (s == "td3") return AgentKind::td3;
    throw ConfigError("unknown agent.name '" + s + "' (expected dqn or td3)");
}

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("agent.steps must be non-negative");
    if (discrete()) {
        dqn.validate();
        if (grid_points < 2) throw ConfigError("agent.grid must be at least 2");
    } else {
        td3.validate();
    }
    if (eval_every < 0 || eval_episodes < 0) throw ConfigError("evaluation cadence must be non-negative");
    shields::validate_combination(shield.type, shield.tuple, discrete());
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::vector<Vector> action_grid(const geom::Box& box, int points) {
    if (points < 2) throw ConfigError("action grid needs at least two points per dimension");
    const auto m = box.dim();
    std::vector<Vector> grid;
    std::vector<int> idx(static_cast<std::size_t>(m), 0);
    while (true) {
        Vector a(m);
        for (Eigen::Index d = 0; d < m; ++d)
            a(d) = box.lower()(d) + (box.upper()(d) - box.lower()(d)) * idx[static_cast<std::size_t>(d)] / (points - 1);
        grid.push_back(a);
        Eigen::Index d = m - 1;
        while (d >= 0 && ++idx[static_cast<std::size_t>(d)] == points) idx[static_cast<std::size_t>(d--)] = 0;
        if (d < 0) break;
    }
    return grid;
}

Agent make_agent(const TrainConfig& config, const Problem& problem) {
    config.validate();
    Rng init(derive_seed(config.seed, 0));
    const int obs = static_cast<int>(problem.spec.observation_dim());
    if (config.discrete()) {
        const auto n = static_cast<int>(action_grid(problem.spec.action_box, config.grid_points).size());
        return Agent(std::in_place_type<DqnAgent>, obs, n, config.dqn, init);
    }
    return Agent(std::in_place_type<Td3Agent>, obs, static_cast<int>(problem.spec.action_dim()), config.td3, init);
}

namespace {

enum class Mode { warmup, explore, greedy };

struct StepOutcome {
    double reward = 0.0;
    bool intervened = false;
    double volume_ratio = std::numeric_limits<double>::quiet_NaN();
    bool violation = false;
    bool fallback = false;
    bool truncated = false;
};

std::string describe(const Vector& v) {
    std::ostringstream os;
    os << "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v(i);
    os << "]";
    return os.str();
}

/// One environment instance plus its shield, driven step by step.
class Session {
public:
    Session(const TrainConfig& config, const Problem& problem, std::uint64_t env_seed, std::uint64_t shield_seed,
            std::uint64_t policy_seed)
        : cfg_(config),
          prob_(problem),
          env_(problem.spec, problem.sim_model, env_seed),
          shield_(config.shield.type, problem.ctx),
          shield_rng_(shield_seed),
          policy_rng_(policy_seed),
          center_(problem.spec.action_box.center()),
          halfwidth_(problem.spec.action_box.halfwidths()) {
        if (!problem.ctx) throw ConfigError("a safety context is required (it defines the start states)");
        if (config.discrete()) grid_ = action_grid(problem.spec.action_box, config.grid_points);
        if (config.shield.type == ShieldType::mask) {
            const Vector& s_eq = problem.spec.equilibrium;
            if (config.discrete()) {
                const auto m = shields::mask_discrete(*problem.ctx, s_eq, grid_);
                eq_volume_ = m.synthetic ? 0.0 : static_cast<double>(m.indices.size());
            } else {
                eq_volume_ = shields::safe_action_box(*problem.ctx, s_eq).scale;
            }
            if (!(eq_volume_ > 0.0))
                throw ConfigError("the safe action set at the equilibrium has zero volume; masking is undefined");
        }
    }

    void begin_episode() {
        env_.reset(prob_.ctx->polytope(), prob_.reset);
        cached_mask_.reset();
    }

    StepOutcome step(Agent& agent, Mode mode, long global_step, ReplayBuffer* buffer) {
        if (auto* dqn = std::get_if<DqnAgent>(&agent)) return step_discrete(*dqn, mode, global_step, buffer);
        return step_continuous(std::get<Td3Agent>(agent), mode, buffer);
    }

private:
    StepOutcome finish(const Vector& s, const shields::ShieldDecision& d, StepOutcome out,
                       env::Environment::Transition& tr) {
        tr = env_.step(d.executed);
        out.reward = tr.reward;
        out.intervened = d.intervened;
        out.fallback = d.fallback != shields::Fallback::none;
        out.truncated = tr.truncated;
        out.violation = !prob_.spec_box.contains(tr.next.s);
        if (out.violation && cfg_.shield.type != ShieldType::none)
            throw SafetyViolation("shielded run left the safe-state specification: state " + describe(s) +
                                  " action " + describe(d.executed) + " next " + describe(tr.next.s));
        return out;
    }

    void check_certified(const Vector& s, const Vector& executed) const {
        if (cfg_.shield.type != ShieldType::none && !prob_.ctx->phi(s, executed))
            throw SafetyViolation("shield executed an action the safety function rejects: state " + describe(s) +
                                  " action " + describe(executed));
    }

    std::vector<int> mask_indices(const shields::DiscreteMask& m) const {
        return m.synthetic ? std::vector<int>{shields::nearest_index(grid_, m.synthetic_action)} : m.indices;
    }

    StepOutcome step_discrete(DqnAgent& agent, Mode mode, long global_step, ReplayBuffer* buffer) {
        const Vector s = env_.state().s;
        const Vector obs = env_.observe();
        const bool masking = cfg_.shield.type == ShieldType::mask;
        StepOutcome out;
        shields::ShieldDecision d;
        std::vector<int> state_mask;
        shields::DiscreteMask dm;
        if (masking) {
            dm = cached_mask_ ? *cached_mask_ : shields::mask_discrete(*prob_.ctx, s, grid_);
            state_mask = mask_indices(dm);
            out.volume_ratio = dm.synthetic ? 0.0 : static_cast<double>(dm.indices.size()) / eq_volume_;
        }
        if (masking && dm.synthetic) {
            d.proposed = grid_[static_cast<std::size_t>(state_mask.front())];
            d.executed = dm.synthetic_action;
            d.intervened = true;
            d.fallback = shields::Fallback::mask_synthetic;
        } else {
            const double eps = mode == Mode::warmup   ? 1.0
                               : mode == Mode::explore ? epsilon_at(agent.config(), global_step)
                                                       : 0.0;
            const int proposed = agent.act(obs, eps, masking ? &dm.indices : nullptr, policy_rng_);
            switch (cfg_.shield.type) {
                case ShieldType::replace_sample:
                case ShieldType::replace_failsafe: {
                    const auto strategy = cfg_.shield.type == ShieldType::replace_sample
                                              ? shields::ReplacementStrategy::sample
                                              : shields::ReplacementStrategy::failsafe;
                    d = shields::shield_replace_discrete(*prob_.ctx, s, proposed, grid_, strategy, shield_rng_, nullptr);
                    break;
                }
                default:
                    d.proposed = grid_[static_cast<std::size_t>(proposed)];
                    d.executed = d.proposed;
            }
        }
        check_certified(s, d.executed);
        env::Environment::Transition tr;
        out = finish(s, d, out, tr);
        const Vector next_obs = env_.observe();

        std::vector<int> next_mask;
        if (masking && !tr.truncated) {
            cached_mask_ = shields::mask_discrete(*prob_.ctx, tr.next.s, grid_);
            next_mask = mask_indices(*cached_mask_);
        } else if (masking) {
            next_mask = mask_indices(shields::mask_discrete(*prob_.ctx, tr.next.s, grid_));
        }
        if (buffer) {
            for (auto& t : shields::make_learning_tuples(cfg_.shield.tuple, obs, d.proposed, d, next_obs, tr.reward,
                                                         cfg_.shield.penalty, cfg_.shield.proj_dist_coef)) {
                Experience e;
                e.action_index = shields::nearest_index(grid_, t.action);
                e.action = grid_[static_cast<std::size_t>(e.action_index)];
                if (masking && std::find(state_mask.begin(), state_mask.end(), e.action_index) == state_mask.end())
                    throw ContractViolation("stored discrete action lies outside the mask of its state");
                e.obs = std::move(t.s);
                e.reward = t.reward;
                e.next_obs = std::move(t.s_next);
                e.mask = state_mask;
                e.next_mask = next_mask;
                e.mode = t.mode;
                buffer->push(std::move(e));
            }
        }
        return out;
    }

    StepOutcome step_continuous(const Td3Agent& agent, Mode mode, ReplayBuffer* buffer) {
        const Vector s = env_.state().s;
        const Vector obs = env_.observe();
        Vector u(center_.size());
        if (mode == Mode::warmup) {
            std::uniform_real_distribution<double> unit(-1.0, 1.0);
            for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = unit(policy_rng_);
        } else if (mode == Mode::explore) {
            u = agent.explore(obs, policy_rng_);
        } else {
            u = agent.act(obs);
        }
        const Vector a = center_ + halfwidth_.cwiseProduct(u);
        const shields::ShieldDecision d = shield_.apply(s, a, shield_rng_);
        StepOutcome out;
        if (d.mask_scale)
            out.volume_ratio = std::pow(*d.mask_scale / eq_volume_, static_cast<double>(center_.size()));
        check_certified(s, d.executed);
        env::Environment::Transition tr;
        out = finish(s, d, out, tr);
        if (buffer) {
            const Vector next_obs = env_.observe();
            for (auto& t : shields::make_learning_tuples(cfg_.shield.tuple, obs, a, d, next_obs, tr.reward,
                                                         cfg_.shield.penalty, cfg_.shield.proj_dist_coef)) {
                Experience e;
                e.obs = std::move(t.s);
                e.action = (t.action - center_).cwiseQuotient(halfwidth_).cwiseMax(-1.0).cwiseMin(1.0);
                e.reward = t.reward;
                e.next_obs = std::move(t.s_next);
                e.mode = t.mode;
                buffer->push(std::move(e));
            }
        }
        return out;
    }

    const TrainConfig& cfg_;
    const Problem& prob_;
    env::Environment env_;
    shields::Shield shield_;
    Rng shield_rng_;
    Rng policy_rng_;
    Vector center_;
    Vector halfwidth_;
    std::vector<Vector> grid_;
    double eq_volume_ = 0.0;
    std::optional<shields::DiscreteMask> cached_mask_;
};

struct EpisodeAccumulator {
    int steps = 0;
    double reward = 0.0;
    int interventions = 0;
    double ratio_sum = 0.0;
    bool has_ratio = false;
    int violations = 0;
    int fallbacks = 0;

    void add(const StepOutcome& s) {
        ++steps;
        reward += s.reward;
        interventions += s.intervened ? 1 : 0;
        if (!std::isnan(s.volume_ratio)) {
            has_ratio = true;
            ratio_sum += s.volume_ratio;
        }
        violations += s.violation ? 1 : 0;
        fallbacks += s.fallback ? 1 : 0;
    }

    EpisodeLog log(int episode, long end_step) const {
        EpisodeLog e;
        e.episode = episode;
        e.end_step = end_step;
        e.steps = steps;
        e.return_mean = steps ? reward / steps : 0.0;
        e.violations = violations;
        e.fallbacks = fallbacks;
        if (has_ratio) {
            e.mask_volume_ratio = ratio_sum / steps;
            e.intervention_rate = std::clamp(1.0 - e.mask_volume_ratio, 0.0, 1.0);
        } else {
            e.intervention_rate = steps ? static_cast<double>(interventions) / steps : 0.0;
        }
        return e;
    }
};

void mean_std(const std::vector<double>& xs, double* mean, double* sd) {
    *mean = 0.0;
    *sd = 0.0;
    if (xs.empty()) return;
    for (double x : xs) *mean += x;
    *mean /= static_cast<double>(xs.size());
    for (double x : xs) *sd += (x - *mean) * (x - *mean);
    *sd = std::sqrt(*sd / static_cast<double>(xs.size()));
}

EvalSummary summarize(const std::vector<EpisodeLog>& eps) {
    EvalSummary out;
    out.episodes = static_cast<int>(eps.size());
    std::vector<double> r, i, v;
    for (const auto& e : eps) {
        r.push_back(e.return_mean);
        i.push_back(e.intervention_rate);
        v.push_back(e.steps ? static_cast<double>(e.violations) / e.steps : 0.0);
    }
    mean_std(r, &out.return_mean, &out.return_std);
    mean_std(i, &out.intervention_mean, &out.intervention_std);
    mean_std(v, &out.violation_mean, &out.violation_std);
    return out;
}

long learning_starts(const TrainConfig& c) { return c.discrete() ? c.dqn.learning_starts : c.td3.learning_starts; }

}  // namespace

EvalSummary evaluate(const TrainConfig& config, const Problem& problem, const Agent& agent, int episodes,
                     std::uint64_t seed) {
    if (episodes <= 0) return {};
    Session session(config, problem, derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3));
    // Greedy steps never mutate the agent; the const_cast only satisfies the shared step signature.
    Agent& a = const_cast<Agent&>(agent);
    std::vector<EpisodeLog> logs;
    for (int ep = 0; ep < episodes; ++ep) {
        session.begin_episode();
        EpisodeAccumulator acc;
        while (true) {
            const StepOutcome s = session.step(a, Mode::greedy, 0, nullptr);
            acc.add(s);
            if (s.truncated) break;
        }
        logs.push_back(acc.log(ep, 0));
    }
    return summarize(logs);
}

EvalSummary evaluate_failsafe(const Problem& problem, int episodes, std::uint64_t seed) {
    if (episodes <= 0) return {};
    if (!problem.ctx) throw ConfigError("a safety context is required");
    env::Environment env(problem.spec, problem.sim_model, derive_seed(seed, 1));
    std::vector<EpisodeLog> logs;
    for (int ep = 0; ep < episodes; ++ep) {
        env.reset(problem.ctx->polytope(), problem.reset);
        EpisodeAccumulator acc;
        while (true) {
            const auto tr = env.step(problem.ctx->failsafe_action(env.state().s));
            StepOutcome s;
            s.reward = tr.reward;
            s.violation = !problem.spec_box.contains(tr.next.s);
            acc.add(s);
            if (tr.truncated) break;
        }
        logs.push_back(acc.log(ep, 0));
    }
    return summarize(logs);
}

RunLog train(const TrainConfig& config, const Problem& problem, Agent& agent, const EpisodeCallback& on_episode) {
    config.validate();
    if (config.discrete() != std::holds_alternative<DqnAgent>(agent))
        throw ConfigError("agent type does not match agent.name");
    RunLog log;
    if (config.steps == 0) return log;

    Session session(config, problem, derive_seed(config.seed, 1 + (config.env_seed << 8)),
                    derive_seed(config.seed, 2), derive_seed(config.seed, 3));
    Rng update_rng(derive_seed(config.seed, 4));
    ReplayBuffer buffer(config.discrete() ? config.dqn.buffer : config.td3.buffer);
    const long starts = learning_starts(config);
    const long freq = config.discrete() ? config.dqn.train_freq : config.td3.train_freq;
    const int grad_steps = config.discrete() ? config.dqn.gradient_steps : config.td3.gradient_steps;
    const auto batch = static_cast<std::size_t>(config.discrete() ? config.dqn.batch : config.td3.batch);
    const bool use_masks = config.shield.type == ShieldType::mask;

    long t = 0;
    int episode = 0;
    while (t < config.steps) {
        session.begin_episode();
        EpisodeAccumulator acc;
        while (true) {
            const Mode mode = t < starts ? Mode::warmup : Mode::explore;
            const StepOutcome s = session.step(agent, mode, t, &buffer);
            ++t;
            acc.add(s);
            if (t >= starts && t % freq == 0 && !buffer.empty()) {
                for (int g = 0; g < grad_steps; ++g) {
                    const auto sample = buffer.sample(batch, update_rng);
                    if (auto* dqn = std::get_if<DqnAgent>(&agent)) dqn->update(sample, use_masks);
                    else std::get<Td3Agent>(agent).update(sample, update_rng);
                }
            }
            if (auto* dqn = std::get_if<DqnAgent>(&agent); dqn && t % config.dqn.target_update == 0)
                dqn->sync_target();
            if (config.eval_every > 0 && t % config.eval_every == 0)
                log.evaluations.push_back(
                    {t, evaluate(config, problem, agent, config.eval_episodes, config.eval_seed).return_mean});
            if (s.truncated || t == config.steps) break;
        }
        const EpisodeLog e = acc.log(episode++, t);
        log.violations += e.violations;
        log.episodes.push_back(e);
        if (on_episode) on_episode(e);
    }
    log.steps = t;
    return log;
}

}  // namespace safeshield::rl
