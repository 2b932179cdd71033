#include "safeshield/agents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "safeshield/errors.hpp"

namespace safeshield::rl {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay buffer capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

void ReplayBuffer::push(Experience e) {
    if (data_.size() < capacity_) {
        data_.push_back(std::move(e));
    } else {
        data_[next_] = std::move(e);
    }
    next_ = (next_ + 1) % capacity_;
}

std::vector<const Experience*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    if (data_.empty()) throw PreconditionError("cannot sample from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    std::vector<const Experience*> out(n);
    for (auto& p : out) p = &data_[pick(rng)];
    return out;
}

namespace {

std::vector<int> with_io(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return sizes;
}

void check_common(double lr, double gamma, int batch, long train_freq, int gradient_steps) {
    if (!(lr > 0.0)) throw ConfigError("agent.lr must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("agent.gamma must lie in (0, 1)");
    if (batch < 1) throw ConfigError("agent.batch must be at least 1");
    if (train_freq < 1) throw ConfigError("agent.train_freq must be at least 1");
    if (gradient_steps < 0) throw ConfigError("agent.gradient_steps must be non-negative");
}

Matrix stack_columns(const std::vector<const Experience*>& batch, const Vector Experience::*field) {
    const auto rows = (batch.front()->*field).size();
    Matrix out(rows, static_cast<Eigen::Index>(batch.size()));
    for (std::size_t j = 0; j < batch.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = batch[j]->*field;
    return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
    Matrix out(top.rows() + bottom.rows(), top.cols());
    out << top, bottom;
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void DqnConfig::validate() const {
    check_common(lr, gamma, batch, train_freq, gradient_steps);
    if (buffer == 0) throw ConfigError("agent.buffer must be positive");
    if (target_update < 1) throw ConfigError("agent.target_update must be at least 1");
    if (eps_initial < 0.0 || eps_initial > 1.0 || eps_final < 0.0 || eps_final > 1.0)
        throw ConfigError("exploration probabilities must lie in [0, 1]");
    if (eps_steps < 0) throw ConfigError("agent.eps_steps must be non-negative");
}

double epsilon_at(const DqnConfig& c, long step) {
    if (c.eps_steps <= 0 || step >= c.eps_steps) return c.eps_final;
    const double f = static_cast<double>(step) / static_cast<double>(c.eps_steps);
    return c.eps_initial + f * (c.eps_final - c.eps_initial);
}

double dqn_td_target(double reward, const Vector& q_next, const std::vector<int>* mask, double gamma, bool done) {
    if (done) return reward;
    double best = -std::numeric_limits<double>::infinity();
    if (mask) {
        if (mask->empty()) throw ContractViolation("dqn_td_target: empty safe-action set for a non-terminal state");
        for (int i : *mask) {
            if (i < 0 || i >= q_next.size()) throw ContractViolation("dqn_td_target: mask index out of range");
            best = std::max(best, q_next(i));
        }
    } else {
        best = q_next.maxCoeff();
    }
    return reward + gamma * best;
}

int dqn_act(const Vector& q, double epsilon, const std::vector<int>* mask, Rng& rng) {
    if (mask && mask->empty()) throw ContractViolation("dqn_act: empty mask");
    const auto n = mask ? mask->size() : static_cast<std::size_t>(q.size());
    const auto candidate = [&](std::size_t k) { return mask ? (*mask)[k] : static_cast<int>(k); };
    if (epsilon > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon)
        return candidate(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    int best = candidate(0);
    for (std::size_t k = 1; k < n; ++k) {
        const int i = candidate(k);
        if (q(i) > q(best) || (q(i) == q(best) && i < best)) best = i;
    }
    return best;
}

DqnAgent::DqnAgent(int obs_dim, int n_actions, DqnConfig config, Rng& init_rng)
    : config_(std::move(config)),
      q_(with_io(obs_dim, config_.hidden, n_actions), config_.activation, init_rng),
      target_(q_),
      opt_(q_, {config_.optimizer, config_.lr}) {
    config_.validate();
}

int DqnAgent::act(const Vector& obs, double epsilon, const std::vector<int>* mask, Rng& rng) const {
    // Skip the forward pass when the draw explores anyway.
    return dqn_act(epsilon >= 1.0 ? Vector::Zero(n_actions()) : q_values(obs), epsilon, mask, rng);
}

double DqnAgent::update(const std::vector<const Experience*>& batch, bool use_masks) {
    if (batch.empty()) return 0.0;
    const auto B = static_cast<Eigen::Index>(batch.size());
    const Matrix obs = stack_columns(batch, &Experience::obs);
    const Matrix next = stack_columns(batch, &Experience::next_obs);
    const Matrix q_next = target_.forward(next);
    Mlp::Tape tape;
    const Matrix q = q_.forward(obs, tape);
    Matrix upstream = Matrix::Zero(q.rows(), B);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
        const Experience& e = *batch[static_cast<std::size_t>(j)];
        if (e.action_index < 0 || e.action_index >= q.rows())
            throw ContractViolation("DqnAgent::update: stored action index out of range");
        const double y = dqn_td_target(e.reward, q_next.col(j), use_masks ? &e.next_mask : nullptr, config_.gamma,
                                       e.done);
        const double err = q(e.action_index, j) - y;
        loss += err * err;
        upstream(e.action_index, j) = 2.0 * err / static_cast<double>(B);
    }
    MlpGrad grad = q_.backward(tape, upstream);
    clip_grad_norm(grad, config_.max_grad_norm);
    opt_.step(q_, grad);
    ++updates_;
    return loss / static_cast<double>(B);
}

// ---------------------------------------------------------------------------

void Td3Config::validate() const {
    check_common(lr, gamma, batch, train_freq, gradient_steps);
    if (buffer == 0) throw ConfigError("agent.buffer must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("agent.tau must lie in (0, 1]");
    if (policy_delay < 1) throw ConfigError("agent.policy_delay must be at least 1");
    if (target_noise < 0.0 || noise_clip < 0.0 || exploration_sigma < 0.0)
        throw ConfigError("noise scales must be non-negative");
}

Td3Agent::Td3Agent(int obs_dim, int act_dim, Td3Config config, Rng& init_rng)
    : config_(std::move(config)),
      actor_(with_io(obs_dim, config_.hidden, act_dim), config_.activation, init_rng),
      actor_target_(actor_),
      critic1_(with_io(obs_dim + act_dim, config_.hidden, 1), config_.activation, init_rng),
      critic2_(with_io(obs_dim + act_dim, config_.hidden, 1), config_.activation, init_rng),
      critic1_target_(critic1_),
      critic2_target_(critic2_),
      actor_opt_(actor_, {config_.optimizer, config_.lr}),
      critic1_opt_(critic1_, {config_.optimizer, config_.lr}),
      critic2_opt_(critic2_, {config_.optimizer, config_.lr}) {
    config_.validate();
}

Vector Td3Agent::act(const Vector& obs) const {
    return actor_.forward(obs).array().tanh().matrix();
}

Vector Td3Agent::explore(const Vector& obs, Rng& rng) const {
    Vector a = act(obs);
    std::normal_distribution<double> noise(0.0, config_.exploration_sigma);
    if (config_.exploration_sigma > 0.0)
        for (Eigen::Index i = 0; i < a.size(); ++i) a(i) += noise(rng);
    return a.cwiseMax(-1.0).cwiseMin(1.0);
}

double Td3Agent::q1(const Vector& obs, const Vector& action) const {
    Vector x(obs.size() + action.size());
    x << obs, action;
    return critic1_.forward(x)(0);
}

Td3Losses Td3Agent::update(const std::vector<const Experience*>& batch, Rng& rng) {
    Td3Losses out;
    if (batch.empty()) return out;
    const auto B = static_cast<Eigen::Index>(batch.size());
    const double invB = 1.0 / static_cast<double>(B);
    const Matrix obs = stack_columns(batch, &Experience::obs);
    const Matrix act = stack_columns(batch, &Experience::action);
    const Matrix next = stack_columns(batch, &Experience::next_obs);

    // Target with clipped smoothing noise on the target policy.
    Matrix next_act = actor_target_.forward(next).array().tanh().matrix();
    if (config_.target_noise > 0.0) {
        std::normal_distribution<double> noise(0.0, config_.target_noise);
        for (Eigen::Index i = 0; i < next_act.size(); ++i)
            next_act.data()[i] += std::clamp(noise(rng), -config_.noise_clip, config_.noise_clip);
    }
    next_act = next_act.cwiseMax(-1.0).cwiseMin(1.0);
    const Matrix next_in = vstack(next, next_act);
    const Matrix q_next = critic1_target_.forward(next_in).cwiseMin(critic2_target_.forward(next_in));
    Eigen::RowVectorXd y(B);
    for (Eigen::Index j = 0; j < B; ++j) {
        const Experience& e = *batch[static_cast<std::size_t>(j)];
        y(j) = e.reward + (e.done ? 0.0 : config_.gamma * q_next(0, j));
    }

    const Matrix in = vstack(obs, act);
    const auto critic_step = [&](Mlp& critic, Optimizer& opt) {
        Mlp::Tape tape;
        const Eigen::RowVectorXd err = critic.forward(in, tape).row(0) - y;
        const Matrix upstream = 2.0 * invB * err;
        opt.step(critic, critic.backward(tape, upstream));
        return err.squaredNorm() * invB;
    };
    out.critic1 = critic_step(critic1_, critic1_opt_);
    out.critic2 = critic_step(critic2_, critic2_opt_);
    ++updates_;

    if (updates_ % config_.policy_delay == 0) {
        Mlp::Tape actor_tape;
        const Matrix u = actor_.forward(obs, actor_tape).array().tanh().matrix();
        Mlp::Tape critic_tape;
        const Matrix q = critic1_.forward(vstack(obs, u), critic_tape);
        out.actor = -q.mean();
        Matrix input_grad;
        critic1_.backward(critic_tape, Matrix::Constant(1, B, -invB), &input_grad);
        const Matrix du = input_grad.bottomRows(u.rows());
        const Matrix dz = du.cwiseProduct((1.0 - u.array().square()).matrix());
        actor_opt_.step(actor_, actor_.backward(actor_tape, dz));
        out.actor_updated = true;
        actor_target_.polyak_update(actor_, config_.tau);
        critic1_target_.polyak_update(critic1_, config_.tau);
        critic2_target_.polyak_update(critic2_, config_.tau);
    }
    return out;
}

}  // namespace safeshield::rl
