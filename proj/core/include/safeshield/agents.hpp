#pragma once

#include <cstdint>
#include <vector>

#include "safeshield/mlp.hpp"
#include "safeshield/shields.hpp"

namespace safeshield::rl {

/// One replay entry. Continuous agents store normalized actions in `action`;
/// discrete agents store the grid index in `action_index` (and the grid action in `action`).
struct Experience {
    Vector obs;
    Vector action;
    int action_index = -1;
    double reward = 0.0;
    Vector next_obs;
    bool done = false;
    std::vector<int> mask;       // safe indices at obs (masking runs only)
    std::vector<int> next_mask;  // safe indices at next_obs (masking runs only)
    shields::TupleMode mode = shields::TupleMode::naive;
};

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(Experience e);
    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return data_.empty(); }
    const Experience& operator[](std::size_t i) const { return data_.at(i); }

    std::vector<const Experience*> sample(std::size_t n, Rng& rng) const;

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Experience> data_;
};

// ---------------------------------------------------------------------------
// Deep Q-learning

struct DqnConfig {
    std::vector<int> hidden{32, 32};
    Activation activation = Activation::tanh;
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 2e-3;
    double gamma = 0.95;
    std::size_t buffer = 50000;
    long learning_starts = 500;
    long train_freq = 8;
    int gradient_steps = 4;
    int batch = 512;
    double max_grad_norm = 10.0;
    long target_update = 1000;  // environment steps between hard target copies
    double eps_initial = 1.0;
    double eps_final = 0.1;
    long eps_steps = 6000;

    void validate() const;
};

/// Linear schedule from eps_initial to eps_final over eps_steps environment steps.
double epsilon_at(const DqnConfig& config, long step);

/// r + gamma * max over `mask` (all actions if null) of q_next; r alone when done.
/// Throws ContractViolation for an empty mask on a non-terminal transition.
double dqn_td_target(double reward, const Vector& q_next, const std::vector<int>* mask, double gamma, bool done);

/// Epsilon-greedy over the mask (or all actions); ties go to the lowest index.
int dqn_act(const Vector& q, double epsilon, const std::vector<int>* mask, Rng& rng);

class DqnAgent {
public:
    DqnAgent(int obs_dim, int n_actions, DqnConfig config, Rng& init_rng);

    const DqnConfig& config() const { return config_; }
    int n_actions() const { return q_.output_dim(); }

    Vector q_values(const Vector& obs) const { return q_.forward(obs); }
    int act(const Vector& obs, double epsilon, const std::vector<int>* mask, Rng& rng) const;

    /// One gradient step on the mean squared TD error; returns the loss.
    /// `use_masks` makes the target maximize over each entry's next_mask.
    double update(const std::vector<const Experience*>& batch, bool use_masks);

    /// Hard copy of the online network into the target network.
    void sync_target() { target_ = q_; }

    const Mlp& online() const { return q_; }
    const Mlp& target() const { return target_; }
    Mlp& online() { return q_; }
    long gradient_steps() const { return updates_; }

private:
    DqnConfig config_;
    Mlp q_;
    Mlp target_;
    Optimizer opt_;
    long updates_ = 0;
};

// ---------------------------------------------------------------------------
// Twin-critic deterministic actor-critic

struct Td3Config {
    std::vector<int> hidden{32, 32};
    Activation activation = Activation::relu;
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 3.5e-3;
    double gamma = 0.98;
    std::size_t buffer = 10000;
    long learning_starts = 10000;
    long train_freq = 256;
    int gradient_steps = 256;
    int batch = 512;
    double tau = 5e-3;
    int policy_delay = 2;
    double target_noise = 0.2;
    double noise_clip = 0.5;
    double exploration_sigma = 0.1;

    void validate() const;
};

struct Td3Losses {
    double critic1 = 0.0;
    double critic2 = 0.0;
    bool actor_updated = false;
    double actor = 0.0;
};

/// Actions live in normalized coordinates [-1, 1]^m; the actor output is squashed by tanh.
class Td3Agent {
public:
    Td3Agent(int obs_dim, int act_dim, Td3Config config, Rng& init_rng);

    const Td3Config& config() const { return config_; }
    int act_dim() const { return actor_.output_dim(); }

    Vector act(const Vector& obs) const;
    /// act() plus clipped Gaussian exploration noise.
    Vector explore(const Vector& obs, Rng& rng) const;

    Td3Losses update(const std::vector<const Experience*>& batch, Rng& rng);

    const Mlp& actor() const { return actor_; }
    const Mlp& critic1() const { return critic1_; }
    const Mlp& critic2() const { return critic2_; }
    const Mlp& actor_target() const { return actor_target_; }
    const Mlp& critic1_target() const { return critic1_target_; }
    const Mlp& critic2_target() const { return critic2_target_; }
    Mlp& critic1() { return critic1_; }
    Mlp& critic2() { return critic2_; }
    Mlp& actor() { return actor_; }

    /// Q1(obs, action) for a normalized action.
    double q1(const Vector& obs, const Vector& action) const;

private:
    Td3Config config_;
    Mlp actor_, actor_target_;
    Mlp critic1_, critic2_, critic1_target_, critic2_target_;
    Optimizer actor_opt_, critic1_opt_, critic2_opt_;
    long updates_ = 0;
};

}  // namespace safeshield::rl
