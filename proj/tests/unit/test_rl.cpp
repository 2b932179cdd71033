#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "safeshield/agents.hpp"
#include "safeshield/errors.hpp"
#include "safeshield/mlp.hpp"
#include "safeshield/train.hpp"

using namespace safeshield;
using namespace safeshield::rl;

namespace {

// Loss L = sum(R .* f(X)) for a fixed random R, so dL/dtheta = backward(R).
double weighted_output(const Mlp& net, const Matrix& X, const Matrix& R) {
    return net.forward(X).cwiseProduct(R).sum();
}

double max_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
}

/// Central finite differences on every parameter and input entry.
double gradient_check(Mlp net, const Matrix& X, const Matrix& R) {
    Mlp::Tape tape;
    net.forward(X, tape);
    Matrix dX;
    const MlpGrad g = net.backward(tape, R, &dX);
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t l = 0; l < net.layers(); ++l) {
        for (Eigen::Index i = 0; i < net.W[l].size(); ++i) {
            double& w = net.W[l].data()[i];
            const double keep = w;
            w = keep + h;
            const double up = weighted_output(net, X, R);
            w = keep - h;
            const double down = weighted_output(net, X, R);
            w = keep;
            worst = std::max(worst, max_relative_error(g.dW[l].data()[i], (up - down) / (2 * h)));
        }
        for (Eigen::Index i = 0; i < net.b[l].size(); ++i) {
            double& v = net.b[l](i);
            const double keep = v;
            v = keep + h;
            const double up = weighted_output(net, X, R);
            v = keep - h;
            const double down = weighted_output(net, X, R);
            v = keep;
            worst = std::max(worst, max_relative_error(g.db[l](i), (up - down) / (2 * h)));
        }
    }
    Matrix Xp = X;
    for (Eigen::Index i = 0; i < X.size(); ++i) {
        const double keep = Xp.data()[i];
        Xp.data()[i] = keep + h;
        const double up = weighted_output(net, Xp, R);
        Xp.data()[i] = keep - h;
        const double down = weighted_output(net, Xp, R);
        Xp.data()[i] = keep;
        worst = std::max(worst, max_relative_error(dX.data()[i], (up - down) / (2 * h)));
    }
    return worst;
}

Experience terminal(const Vector& obs, int index, double reward) {
    Experience e;
    e.obs = obs;
    e.action_index = index;
    e.reward = reward;
    e.next_obs = obs;
    e.done = true;
    return e;
}

}  // namespace

TEST_SUITE("rl") {

TEST_CASE("zero-weight network outputs its final bias") {
    Rng rng(1);
    Mlp net({3, 4, 2}, Activation::relu, rng);
    for (auto& w : net.W) w.setZero();
    CHECK(net.forward(Vector(Vector::Ones(3))).isApprox(net.b.back()));
}

TEST_CASE("single linear layer gradient is an outer product") {
    Rng rng(2);
    Mlp net({3, 2}, Activation::relu, rng);
    const Vector x = (Vector(3) << 0.5, -1.0, 2.0).finished();
    Mlp::Tape tape;
    const Matrix y = net.forward(Matrix(x), tape);
    // d(|y|^2 / 2)/dy = y.
    const MlpGrad g = net.backward(tape, y);
    CHECK(g.dW[0].isApprox(y * x.transpose()));
    CHECK(g.db[0].isApprox(y.col(0)));
}

TEST_CASE("analytic gradients match finite differences") {
    Rng rng(3);
    for (auto act : {Activation::relu, Activation::tanh}) {
        for (const auto& sizes : std::vector<std::vector<int>>{{3, 32, 32, 15}, {6, 64, 64, 25}, {8, 64, 64, 1}}) {
            Mlp net(sizes, act, rng);
            const Matrix X = fixtures::random_matrix(sizes.front(), 3, rng);
            const Matrix R = fixtures::random_matrix(sizes.back(), 3, rng);
            CHECK(gradient_check(net, X, R) < 1e-4);
        }
    }
}

TEST_CASE("gradient clipping and optimizers") {
    Rng rng(4);
    Mlp net({2, 8, 1}, Activation::tanh, rng);
    MlpGrad g = net.zeros_like();
    g.dW[0].setConstant(1.0);
    const double before = std::sqrt(g.squared_norm());
    CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(before));
    CHECK(std::sqrt(g.squared_norm()) <= 1.0 + 1e-9);

    const Matrix X = fixtures::random_matrix(2, 16, rng);
    const Matrix target = X.colwise().sum();
    for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
        Mlp n = net;
        Optimizer opt(n, {kind, 0.01});
        const auto loss = [&] { return (n.forward(X) - target).squaredNorm() / 16; };
        const double start = loss();
        for (int i = 0; i < 200; ++i) {
            Mlp::Tape tape;
            const Matrix err = n.forward(X, tape) - target;
            opt.step(n, n.backward(tape, 2.0 * err / 16));
        }
        CHECK(loss() < 0.5 * start);
    }
    CHECK_THROWS_AS(Optimizer(net, {OptimizerKind::sgd, 0.0}), ConfigError);
}

TEST_CASE("polyak averaging") {
    Rng rng(5);
    Mlp a({2, 4, 1}, Activation::relu, rng), b({2, 4, 1}, Activation::relu, rng);
    Mlp c = a;
    c.polyak_update(b, 1.0);
    for (std::size_t l = 0; l < c.layers(); ++l) {
        CHECK(c.W[l] == b.W[l]);
        CHECK(c.b[l] == b.b[l]);
    }
    Mlp d = a;
    d.polyak_update(b, 0.25);
    CHECK(d.W[0].isApprox(0.25 * b.W[0] + 0.75 * a.W[0]));
}

TEST_CASE("TD targets") {
    const Vector q = (Vector(4) << 1.0, 5.0, 3.0, -2.0).finished();
    CHECK(dqn_td_target(0.5, q, nullptr, 0.9, true) == 0.5);
    const std::vector<int> all{0, 1, 2, 3};
    CHECK(dqn_td_target(0.5, q, &all, 0.9, false) == dqn_td_target(0.5, q, nullptr, 0.9, false));
    const std::vector<int> none;
    CHECK_THROWS_AS(dqn_td_target(0.5, q, &none, 0.9, false), ContractViolation);
    CHECK(dqn_td_target(0.5, q, &none, 0.9, true) == 0.5);

    Rng rng(6);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int trial = 0; trial < 500; ++trial) {
        Vector qs(15);
        for (int i = 0; i < 15; ++i) qs(i) = u(rng);
        std::vector<int> mask;
        for (int i = 0; i < 15; ++i)
            if (u(rng) > 0.0) mask.push_back(i);
        if (mask.empty()) mask.push_back(7);
        double best = -1e300;
        for (int i : mask) best = std::max(best, qs(i));
        CHECK(dqn_td_target(1.0, qs, &mask, 0.95, false) == doctest::Approx(1.0 + 0.95 * best));
    }
}

TEST_CASE("epsilon-greedy action selection") {
    Rng rng(7);
    const Vector q = (Vector(5) << 0.0, 4.0, 9.0, 4.0, 1.0).finished();
    const std::vector<int> mask{0, 1, 3, 4};
    CHECK(dqn_act(q, 0.0, &mask, rng) == 1);  // tie between 1 and 3
    CHECK(dqn_act(q, 0.0, nullptr, rng) == 2);
    std::vector<int> counts(5, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(dqn_act(q, 1.0, &mask, rng))];
    CHECK(counts[2] == 0);
    // Binomial(n, 1/4): counts within 5 standard deviations.
    const double sd = std::sqrt(n * 0.25 * 0.75);
    for (int i : mask) CHECK(std::abs(counts[static_cast<std::size_t>(i)] - n / 4.0) < 5 * sd);

    DqnConfig c;
    c.eps_initial = 1.0;
    c.eps_final = 0.1;
    c.eps_steps = 6000;
    CHECK(epsilon_at(c, 0) == 1.0);
    CHECK(epsilon_at(c, 3000) == doctest::Approx(0.55));
    CHECK(epsilon_at(c, 100000) == 0.1);
}

TEST_CASE("DQN updates") {
    Rng rng(8);
    DqnConfig c;
    c.hidden = {16, 16};
    c.lr = 0.05;
    DqnAgent agent(3, 4, c, rng);
    std::vector<Experience> data;
    for (int i = 0; i < 32; ++i) {
        const Vector obs = fixtures::random_matrix_entry_vector(3, rng);
        const int a = i % 4;
        data.push_back(terminal(obs, a, agent.q_values(obs)(a)));
    }
    std::vector<const Experience*> batch;
    for (const auto& e : data) batch.push_back(&e);
    const Mlp before = agent.online();
    CHECK(agent.update(batch, false) == doctest::Approx(0.0));
    for (std::size_t l = 0; l < before.layers(); ++l) CHECK(agent.online().W[l] == before.W[l]);

    // Regression towards fixed random targets.
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& e : data) e.reward = u(rng);
    const Mlp target_before = agent.target();
    const double first = agent.update(batch, false);
    double last = first;
    for (int i = 0; i < 100; ++i) last = agent.update(batch, false);
    CHECK(last < 0.5 * first);
    for (std::size_t l = 0; l < target_before.layers(); ++l) CHECK(agent.target().W[l] == target_before.W[l]);
    agent.sync_target();
    for (std::size_t l = 0; l < target_before.layers(); ++l) CHECK(agent.target().W[l] == agent.online().W[l]);
}

TEST_CASE("TD3 twin critics and bandit convergence") {
    Rng rng(9);
    Td3Config c;
    c.hidden = {32, 32};
    c.target_noise = 0.0;
    c.optimizer = OptimizerKind::adam;
    c.lr = 1e-3;
    Td3Agent agent(1, 1, c, rng);
    agent.critic2() = agent.critic1();
    std::vector<Experience> data;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 256; ++i) {
        Experience e;
        e.obs = Vector::Ones(1);
        e.action = Vector::Constant(1, u(rng));
        e.reward = -(e.action(0) - 0.3) * (e.action(0) - 0.3);
        e.next_obs = e.obs;
        e.done = true;
        data.push_back(e);
    }
    std::vector<const Experience*> all;
    for (const auto& e : data) all.push_back(&e);
    const Td3Losses first = agent.update(all, rng);
    CHECK(first.critic1 == first.critic2);

    // One-step bandit: the optimal normalized action is 0.3.
    ReplayBuffer buffer(1000);
    for (const auto& e : data) buffer.push(e);
    for (int i = 0; i < 10000; ++i) agent.update(buffer.sample(64, rng), rng);
    CHECK(std::abs(agent.act(Vector(Vector::Ones(1)))(0) - 0.3) < 0.05);
}

TEST_CASE("replay buffer") {
    ReplayBuffer buf(10);
    for (int i = 0; i < 25; ++i) {
        Experience e = terminal(Vector::Constant(1, i), 0, i);
        e.mode = shields::TupleMode::adaption_penalty;
        buf.push(e);
    }
    CHECK(buf.size() == 10);
    double lowest = 1e9;
    for (std::size_t i = 0; i < buf.size(); ++i) lowest = std::min(lowest, buf[i].reward);
    CHECK(lowest == 15.0);
    Rng rng(10);
    std::vector<int> counts(25, 0);
    const int n = 20000;
    for (const auto* e : buf.sample(n, rng)) {
        ++counts[static_cast<std::size_t>(e->reward)];
        CHECK(e->mode == shields::TupleMode::adaption_penalty);
    }
    const double sd = std::sqrt(n * 0.1 * 0.9);
    for (int i = 15; i < 25; ++i) CHECK(std::abs(counts[static_cast<std::size_t>(i)] - n / 10.0) < 5 * sd);
    CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
    CHECK_THROWS_AS(ReplayBuffer(3).sample(1, rng), PreconditionError);
}

TEST_CASE("action grids") {
    const auto pend = action_grid(env::EnvSpec::pendulum().action_box, 15);
    CHECK(pend.size() == 15);
    CHECK(pend.front()(0) == -30.0);
    CHECK(pend.back()(0) == 30.0);
    const auto quad = action_grid(env::EnvSpec::quadrotor().action_box, 5);
    CHECK(quad.size() == 25);
    CHECK(quad[1](1) > quad[0](1));
    CHECK(quad[5](0) > quad[0](0));
}

TEST_CASE("training loop") {
    const auto& st = fixtures::pendulum();
    Problem p{st.spec, st.spec_box, st.model, st.ctx.get(), {}};
    TrainConfig c;
    c.agent = AgentKind::dqn;
    c.dqn.batch = 32;
    c.dqn.learning_starts = 100;
    c.shield.type = shields::ShieldType::mask;
    c.seed = 3;

    c.steps = 0;
    Agent a0 = make_agent(c, p);
    CHECK(train(c, p, a0).episodes.empty());

    c.steps = 1500;
    Agent a1 = make_agent(c, p), a2 = make_agent(c, p);
    const RunLog l1 = train(c, p, a1), l2 = train(c, p, a2);
    CHECK(l1.violations == 0);
    REQUIRE(l1.episodes.size() == l2.episodes.size());
    CHECK(l1.episodes.size() == 8);
    for (std::size_t i = 0; i < l1.episodes.size(); ++i) {
        CHECK(l1.episodes[i].return_mean == l2.episodes[i].return_mean);
        CHECK(l1.episodes[i].intervention_rate == l2.episodes[i].intervention_rate);
        CHECK(l1.episodes[i].violations == 0);
    }
    CHECK(l1.episodes.back().end_step == 1500);

    TrainConfig bad = c;
    bad.shield.tuple = shields::TupleMode::both;
    CHECK_THROWS_AS(make_agent(bad, p), ConfigError);
}

TEST_CASE("unshielded runs record violations, shielded continuous runs do not") {
    const auto& st = fixtures::quadrotor();
    Problem p{st.spec, st.spec_box, st.model, st.ctx.get(), {}};
    TrainConfig c;
    c.agent = AgentKind::td3;
    c.td3.hidden = {16, 16};
    c.td3.batch = 16;
    c.td3.learning_starts = 200;
    c.td3.train_freq = 10;
    c.td3.gradient_steps = 1;
    c.steps = 1000;
    c.seed = 1;
    Agent free_agent = make_agent(c, p);
    CHECK(train(c, p, free_agent).violations > 0);
    for (auto type : {shields::ShieldType::replace_sample, shields::ShieldType::replace_failsafe,
                      shields::ShieldType::project, shields::ShieldType::mask}) {
        c.shield.type = type;
        Agent agent = make_agent(c, p);
        const RunLog log = train(c, p, agent);
        CHECK(log.violations == 0);
        if (type == shields::ShieldType::mask) CHECK_FALSE(std::isnan(log.episodes.front().mask_volume_ratio));
    }
}

}  // TEST_SUITE
