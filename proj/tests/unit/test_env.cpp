#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "safeshield/env.hpp"
#include "safeshield/errors.hpp"

using namespace safeshield;
using namespace safeshield::env;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

}  // namespace

TEST_SUITE("env") {

TEST_CASE("pendulum Euler step") {
    const EnvSpec spec = EnvSpec::pendulum();
    CHECK(pendulum_step({vec({0, 0})}, 0.0, spec).next.s.isZero());
    const Vector s1 = pendulum_step({vec({0, 1})}, 0.0, spec).next.s;
    CHECK(s1(0) == doctest::Approx(0.05));
    CHECK(s1(1) == doctest::Approx(1.0));
    // g sin(pi/6) + 2 = 6.905, times dt.
    const Vector s2 = pendulum_step({vec({std::numbers::pi / 6.0, 0})}, 2.0, spec).next.s;
    CHECK(s2(1) == doctest::Approx(0.34525));
    CHECK(s2(0) == doctest::Approx(std::numbers::pi / 6.0));
    const StepOutcome clamped = pendulum_step({vec({0, 0})}, 31.0, spec);
    CHECK(clamped.clamped);
    CHECK(clamped.next.s(1) == doctest::Approx(0.05 * 30.0));
}

TEST_CASE("pendulum observation and reward") {
    const Observation o = pendulum_observe_reward({vec({0, 0})}, 0.0);
    CHECK(o.obs.isApprox(vec({1, 0, 0})));
    CHECK(o.reward == 0.0);
    CHECK(pendulum_observe_reward({vec({std::numbers::pi, 0})}, 0.0).reward ==
          doctest::Approx(-std::numbers::pi * std::numbers::pi));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int i = 0; i < 1000; ++i) {
        const double th = u(rng), om = u(rng), a = 3.0 * u(rng);
        double w = std::remainder(th, 2.0 * std::numbers::pi);
        const double expected = -(w * w + 0.1 * om * om + 0.001 * a * a);
        const Observation r = pendulum_observe_reward({vec({th, om})}, a);
        CHECK(r.reward == doctest::Approx(expected).epsilon(1e-12));
        CHECK(r.reward <= 0.0);
    }
    CHECK(wrap_angle(3.0 * std::numbers::pi) == doctest::Approx(std::numbers::pi).epsilon(1e-12));
}

TEST_CASE("pendulum linear model matches finite differences and bounds the remainder") {
    const EnvSpec spec = EnvSpec::pendulum();
    const LinearModel m = pendulum_linear_model(spec, 0.8);
    const double h = 1e-6;
    for (int j = 0; j < 2; ++j) {
        Vector e = Vector::Zero(2);
        e(j) = h;
        const Vector fd = (pendulum_step({e}, 0.0, spec).next.s - pendulum_step({Vector(-e)}, 0.0, spec).next.s) / (2 * h);
        CHECK((fd - m.A_d.col(j)).norm() < 1e-6);
    }
    const Vector fdb = (pendulum_step({Vector::Zero(2)}, h, spec).next.s -
                        pendulum_step({Vector::Zero(2)}, -h, spec).next.s) / (2 * h);
    CHECK((fdb - m.B_d.col(0)).norm() < 1e-6);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> th(-0.8, 0.8), om(-4.0, 4.0), a(-30.0, 30.0);
    for (int i = 0; i < 2000; ++i) {
        const Vector s = vec({th(rng), om(rng)});
        const double u = a(rng);
        const Vector exact = pendulum_step({s}, u, spec).next.s;
        const Vector lin = m.step(s, Vector::Constant(1, u), Vector::Zero(1));
        CHECK(((exact - lin).cwiseAbs().array() <= m.remainder.array() + 1e-12).all());
    }
}

TEST_CASE("quadrotor derivative") {
    const EnvSpec spec = EnvSpec::quadrotor();
    const auto& p = std::get<QuadrotorParams>(spec.params);
    CHECK(quadrotor_derivative(spec.equilibrium, spec.equilibrium_action, Vector::Zero(2), p).norm() < 1e-15);
    CHECK(quadrotor_derivative(spec.equilibrium, spec.equilibrium_action, vec({0.1, -0.1}), p)
              .isApprox(vec({0, 0, 0.1, -0.1, 0, 0})));
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const Vector s = vec({u(rng), u(rng), u(rng), u(rng), 0.3 * u(rng), u(rng)});
        const Vector a = vec({9.81 + 1.5 * u(rng), 0.26 * u(rng)});
        const Vector w = vec({0.1 * u(rng), 0.1 * u(rng)});
        const Vector expected = vec({s(2), s(3), a(0) * std::sin(s(4)) + w(0), -9.81 + a(0) * std::cos(s(4)) + w(1),
                                     s(5), -70.0 * s(4) - 17.0 * s(5) + 55.0 * a(1)});
        CHECK((quadrotor_derivative(s, a, w, p) - expected).norm() < 1e-12);
    }
}

TEST_CASE("quadrotor discretization matches the nonlinear one-step map") {
    const EnvSpec spec = EnvSpec::quadrotor();
    const LinearModel m = linearize_discretize(spec);
    CHECK((m.step(spec.equilibrium, spec.equilibrium_action, Vector::Zero(2)) - spec.equilibrium).norm() < 1e-12);
    const double h = 1e-5;
    const auto one_step = [&](const Vector& s, const Vector& a) {
        return quadrotor_step_nonlinear(s, a, Vector::Zero(2), spec, 400);
    };
    Matrix fdA(6, 6), fdB(6, 2);
    for (int j = 0; j < 6; ++j) {
        Vector e = Vector::Zero(6);
        e(j) = h;
        fdA.col(j) = (one_step(spec.equilibrium + e, spec.equilibrium_action) -
                      one_step(spec.equilibrium - e, spec.equilibrium_action)) / (2 * h);
    }
    for (int j = 0; j < 2; ++j) {
        Vector e = Vector::Zero(2);
        e(j) = h;
        fdB.col(j) = (one_step(spec.equilibrium, spec.equilibrium_action + e) -
                      one_step(spec.equilibrium, spec.equilibrium_action - e)) / (2 * h);
    }
    CHECK((fdA - m.A_d).norm() / m.A_d.norm() < 1e-6);
    CHECK((fdB - m.B_d).norm() / m.B_d.norm() < 1e-6);

    // Disturbance image: sampled one-step dispersion at s* stays in the
    // zonotope E_d W and reaches close to its support.
    std::mt19937_64 rng(9);
    Vector reach = Vector::Zero(6);
    for (int i = 0; i < 2000; ++i) {
        const Vector w = sample_disturbance(spec, rng);
        const Vector d = one_step(spec.equilibrium, spec.equilibrium_action) - spec.equilibrium;
        const Vector dw = quadrotor_step_nonlinear(spec.equilibrium, spec.equilibrium_action, w, spec, 400) -
                          spec.equilibrium - d;
        reach = reach.cwiseMax(dw.cwiseAbs());
    }
    const Vector support = (m.E_d * spec.disturbance_box.halfwidths().asDiagonal()).cwiseAbs().rowwise().sum();
    CHECK(((reach.array() <= support.array() * (1 + 1e-6) + 1e-12)).all());
    CHECK(reach(2) > 0.9 * support(2));
    CHECK(reach(3) > 0.9 * support(3));
}

TEST_CASE("equilibrium is a fixed point of both environments") {
    const EnvSpec pend = EnvSpec::pendulum();
    CHECK(pendulum_step({pend.equilibrium}, 0.0, pend).next.s.norm() < 1e-12);
    const EnvSpec quad = EnvSpec::quadrotor();
    CHECK((quadrotor_step_nonlinear(quad.equilibrium, quad.equilibrium_action, Vector::Zero(2), quad) -
           quad.equilibrium).norm() < 1e-12);
}

TEST_CASE("quadrotor reward") {
    const EnvSpec spec = EnvSpec::quadrotor();
    const Vector amin = spec.action_box.lower();
    CHECK(quadrotor_reward(spec.equilibrium, amin, spec) == doctest::Approx(1.0));
    std::mt19937_64 rng(6);
    for (int i = 0; i < 500; ++i) {
        const Vector s = spec.equilibrium + fixtures::random_matrix_entry_vector(6, rng, 0.5);
        const Vector a = fixtures::uniform_in(spec.action_box, rng);
        const Vector an = (a - amin).cwiseQuotient(spec.action_box.upper() - amin);
        const double expected = std::exp(-(s - spec.equilibrium).norm() - 0.005 * an.cwiseAbs().sum());
        const double r = quadrotor_reward(s, a, spec);
        CHECK(r == doctest::Approx(expected).epsilon(1e-12));
        CHECK(r > 0.0);
        CHECK(r <= 1.0);
    }
}

TEST_CASE("disturbance sampling") {
    const EnvSpec pend = EnvSpec::pendulum();
    std::mt19937_64 rng(1);
    CHECK(sample_disturbance(pend, rng).isZero());
    const EnvSpec quad = EnvSpec::quadrotor();
    const int n = 100000;
    Vector sum = Vector::Zero(2), sq = Vector::Zero(2);
    for (int i = 0; i < n; ++i) {
        const Vector w = sample_disturbance(quad, rng);
        REQUIRE(quad.disturbance_box.contains(w));
        sum += w;
        sq += w.cwiseProduct(w);
    }
    const double var = 0.2 * 0.2 / 12.0;
    const Vector mean = sum / n;
    const Vector second = sq / n;
    // Standard errors of the mean and of the second moment of U(-0.1, 0.1).
    const double se_mean = std::sqrt(var / n);
    const double fourth = std::pow(0.1, 4) / 5.0;
    const double se_var = std::sqrt((fourth - var * var) / n);
    for (int j = 0; j < 2; ++j) {
        CHECK(std::abs(mean(j)) < 3 * se_mean);
        CHECK(std::abs(second(j) - var) < 3 * se_var);
    }
    std::mt19937_64 a(42), b(42);
    for (int i = 0; i < 10; ++i) CHECK(sample_disturbance(quad, a) == sample_disturbance(quad, b));
}

TEST_CASE("reset samples inside the safe set") {
    const auto& st = fixtures::quadrotor();
    std::mt19937_64 rng(8);
    for (int i = 0; i < 1000; ++i) CHECK(geom::point_in_polytope(reset(st.spec, st.set.polytope, rng).s, st.set.polytope, 0.0));
    ResetOptions det;
    det.deterministic = true;
    CHECK(reset(st.spec, st.set.polytope, rng, det).s == st.spec.equilibrium);
    std::mt19937_64 a(3), b(3);
    CHECK(reset(st.spec, st.set.polytope, a).s == reset(st.spec, st.set.polytope, b).s);
    ResetOptions tiny;
    tiny.budget = 0;
    CHECK_THROWS_AS(reset(st.spec, st.set.polytope, rng, tiny), ConfigError);
}

TEST_CASE("environment stepping") {
    const auto& st = fixtures::pendulum();
    Environment env(st.spec, st.model, 1);
    env.reset_to({vec({0.1, 0.0})});
    const double r = env.reward(Vector::Zero(1));
    CHECK(r == doctest::Approx(-0.01));
    const auto tr = env.step(Vector::Zero(1));
    CHECK(tr.next.s.isApprox(pendulum_step({vec({0.1, 0.0})}, 0.0, st.spec).next.s));
    CHECK(tr.reward == doctest::Approx(r));
    CHECK_FALSE(tr.truncated);
    for (int i = 1; i < st.spec.horizon - 1; ++i) env.step(Vector::Zero(1));
    CHECK(env.step(Vector::Zero(1)).truncated);
    CHECK(env.observe().size() == 3);
}

TEST_CASE("spec validation") {
    EnvSpec spec = EnvSpec::quadrotor();
    spec.validate();
    spec.dt = 0.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = EnvSpec::quadrotor();
    spec.disturbance_box = geom::Box(vec({0.1, 0.1}), vec({0.2, 0.2}));
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    CHECK_THROWS_AS(env_kind_from_string("cartpole"), ConfigError);
}

}  // TEST_SUITE
