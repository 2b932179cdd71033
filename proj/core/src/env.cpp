#include "safeshield/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <unsupported/Eigen/MatrixFunctions>

#include "safeshield/errors.hpp"

namespace safeshield::env {

std::string to_string(EnvKind kind) {
    return kind == EnvKind::pendulum ? "pendulum" : "quadrotor";
}

EnvKind env_kind_from_string(const std::string& name) {
    if (name == "pendulum") return EnvKind::pendulum;
    if (name == "quadrotor" || name == "quadrotor2d") return EnvKind::quadrotor;
    throw ConfigError("unknown environment '" + name + "' (expected pendulum or quadrotor)");
}

EnvSpec EnvSpec::pendulum() {
    EnvSpec spec;
    spec.kind = EnvKind::pendulum;
    spec.dt = 0.05;
    spec.horizon = 200;
    spec.action_box = Box(Vector::Constant(1, -30.0), Vector::Constant(1, 30.0));
    spec.disturbance_box = Box(Vector::Zero(1), Vector::Zero(1));
    spec.params = PendulumParams{};
    spec.equilibrium = Vector::Zero(2);
    spec.equilibrium_action = Vector::Zero(1);
    return spec;
}

EnvSpec EnvSpec::quadrotor() {
    EnvSpec spec;
    const QuadrotorParams p{};
    spec.kind = EnvKind::quadrotor;
    spec.dt = 0.05;
    spec.horizon = 200;
    const double hover = p.g / p.k;
    const double tilt = std::numbers::pi / 12.0;
    spec.action_box = Box((Vector(2) << -1.5 + hover, -tilt).finished(),
                          (Vector(2) << 1.5 + hover, tilt).finished());
    spec.disturbance_box = Box(Vector::Constant(2, -0.1), Vector::Constant(2, 0.1));
    spec.params = p;
    spec.equilibrium = (Vector(6) << 0.0, 1.0, 0.0, 0.0, 0.0, 0.0).finished();
    spec.equilibrium_action = (Vector(2) << hover, 0.0).finished();
    return spec;
}

Eigen::Index EnvSpec::observation_dim() const {
    return kind == EnvKind::pendulum ? 3 : 6;
}

void EnvSpec::validate() const {
    if (!(dt > 0.0)) throw ConfigError("env.dt must be positive");
    if (horizon < 1) throw ConfigError("env.horizon must be at least 1");
    const Eigen::Index expected_state = kind == EnvKind::pendulum ? 2 : 6;
    const Eigen::Index expected_action = kind == EnvKind::pendulum ? 1 : 2;
    const Eigen::Index expected_dist = kind == EnvKind::pendulum ? 1 : 2;
    if (equilibrium.size() != expected_state || equilibrium_action.size() != expected_action ||
        action_box.dim() != expected_action || disturbance_box.dim() != expected_dist)
        throw ConfigError("environment dimensions do not match " + to_string(kind));
    if (!disturbance_box.contains(Vector::Zero(expected_dist)))
        throw ConfigError("env.disturbance box must contain 0");
    if (!action_box.contains(equilibrium_action))
        throw ConfigError("equilibrium action lies outside the action box");
}

Vector LinearModel::step(const Vector& s, const Vector& a, const Vector& w) const {
    return A_d * s + B_d * a + E_d * w + c_off;
}

void LinearModel::validate() const {
    const auto n = A_d.rows();
    if (A_d.cols() != n || B_d.rows() != n || E_d.rows() != n || c_off.size() != n ||
        remainder.size() != n)
        throw InputError("LinearModel: inconsistent dimensions");
    if ((remainder.array() < 0.0).any()) throw InputError("LinearModel: negative remainder");
}

// ---------------------------------------------------------------------------

double wrap_angle(double theta) {
    // Maps into (-pi, pi].
    const double two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(std::numbers::pi - theta, two_pi);
    if (r < 0.0) r += two_pi;
    return std::numbers::pi - r;
}

StepOutcome pendulum_step(const EnvState& s, double a, const EnvSpec& spec, double w) {
    const auto& p = std::get<PendulumParams>(spec.params);
    const double lo = spec.action_box.lower()(0);
    const double hi = spec.action_box.upper()(0);
    StepOutcome out;
    if (a < lo || a > hi) {
        out.clamped = true;
        a = std::clamp(a, lo, hi);
    }
    const double theta = s.s(0);
    const double omega = s.s(1);
    const double accel = (p.g / p.l) * std::sin(theta) + a / (p.m * p.l * p.l) + w;
    out.next.s = Vector(2);
    out.next.s << theta + spec.dt * omega, omega + spec.dt * accel;
    return out;
}

Observation pendulum_observe_reward(const EnvState& s, double a) {
    const double theta = wrap_angle(s.s(0));
    const double omega = s.s(1);
    Observation o;
    o.obs = Vector(3);
    o.obs << std::cos(s.s(0)), std::sin(s.s(0)), omega;
    o.reward = -(theta * theta + 0.1 * omega * omega + 0.001 * a * a);
    return o;
}

LinearModel pendulum_linear_model(const EnvSpec& spec, double theta_bound) {
    const auto& p = std::get<PendulumParams>(spec.params);
    const double dt = spec.dt;
    LinearModel m;
    m.A_d = Matrix(2, 2);
    m.A_d << 1.0, dt, dt * p.g / p.l, 1.0;
    m.B_d = Matrix(2, 1);
    m.B_d << 0.0, dt / (p.m * p.l * p.l);
    m.E_d = Matrix(2, 1);
    m.E_d << 0.0, dt;
    m.c_off = Vector::Zero(2);
    m.remainder = Vector::Zero(2);
    // |sin t - t| is increasing in |t|.
    const double tb = std::abs(theta_bound);
    m.remainder(1) = dt * (p.g / p.l) * (tb - std::sin(tb));
    return m;
}

// ---------------------------------------------------------------------------

Vector quadrotor_derivative(const Vector& s, const Vector& a, const Vector& w,
                            const QuadrotorParams& p) {
    if (s.size() != 6 || a.size() != 2 || w.size() != 2)
        throw InputError("quadrotor_derivative: expected 6 states, 2 actions, 2 disturbances");
    const double theta = s(4);
    Vector ds(6);
    ds << s(2), s(3), a(0) * p.k * std::sin(theta) + w(0),
        -p.g + a(0) * p.k * std::cos(theta) + w(1), s(5),
        -p.d0 * theta - p.d1 * s(5) + p.n0 * a(1);
    return ds;
}

Vector quadrotor_step_nonlinear(const Vector& s, const Vector& a, const Vector& w,
                                const EnvSpec& spec, int substeps) {
    const auto& p = std::get<QuadrotorParams>(spec.params);
    const double h = spec.dt / substeps;
    Vector x = s;
    for (int i = 0; i < substeps; ++i) {
        const Vector k1 = quadrotor_derivative(x, a, w, p);
        const Vector k2 = quadrotor_derivative(x + 0.5 * h * k1, a, w, p);
        const Vector k3 = quadrotor_derivative(x + 0.5 * h * k2, a, w, p);
        const Vector k4 = quadrotor_derivative(x + h * k3, a, w, p);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return x;
}

LinearModel linearize_discretize(const EnvSpec& spec) {
    if (spec.kind != EnvKind::quadrotor)
        throw InputError("linearize_discretize: only defined for the quadrotor");
    const auto& p = std::get<QuadrotorParams>(spec.params);
    const Vector& a_star = spec.equilibrium_action;
    const double theta = spec.equilibrium(4);

    Matrix A = Matrix::Zero(6, 6);
    A(0, 2) = 1.0;
    A(1, 3) = 1.0;
    A(2, 4) = a_star(0) * p.k * std::cos(theta);
    A(3, 4) = -a_star(0) * p.k * std::sin(theta);
    A(4, 5) = 1.0;
    A(5, 4) = -p.d0;
    A(5, 5) = -p.d1;
    Matrix B = Matrix::Zero(6, 2);
    B(2, 0) = p.k * std::sin(theta);
    B(3, 0) = p.k * std::cos(theta);
    B(5, 1) = p.n0;
    Matrix E = Matrix::Zero(6, 2);
    E(2, 0) = 1.0;
    E(3, 1) = 1.0;

    // Zero-order hold on [a; w] via the exponential of the augmented matrix.
    Matrix M = Matrix::Zero(10, 10);
    M.topLeftCorner(6, 6) = A;
    M.block(0, 6, 6, 2) = B;
    M.block(0, 8, 6, 2) = E;
    const Matrix Phi = (M * spec.dt).exp();

    LinearModel m;
    m.A_d = Phi.topLeftCorner(6, 6);
    m.B_d = Phi.block(0, 6, 6, 2);
    m.E_d = Phi.block(0, 8, 6, 2);
    m.c_off = spec.equilibrium - m.A_d * spec.equilibrium - m.B_d * a_star;
    m.remainder = Vector::Zero(6);
    return m;
}

double quadrotor_reward(const Vector& s, const Vector& a, const EnvSpec& spec) {
    const Vector normalized = (a - spec.action_box.lower()).cwiseQuotient(
        spec.action_box.upper() - spec.action_box.lower());
    return std::exp(-(s - spec.equilibrium).norm() - 0.005 * normalized.lpNorm<1>());
}

// ---------------------------------------------------------------------------

LinearModel verification_model(const EnvSpec& spec, double theta_bound) {
    return spec.kind == EnvKind::pendulum ? pendulum_linear_model(spec, theta_bound)
                                          : linearize_discretize(spec);
}

Vector sample_disturbance(const EnvSpec& spec, Rng& rng) {
    const Box& W = spec.disturbance_box;
    Vector w(W.dim());
    for (Eigen::Index i = 0; i < W.dim(); ++i) {
        const double lo = W.lower()(i);
        const double hi = W.upper()(i);
        w(i) = lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
    }
    return w;
}

EnvState reset(const EnvSpec& spec, const geom::HPolytope& safe_set, Rng& rng,
               const ResetOptions& options) {
    if (options.deterministic) return EnvState{spec.equilibrium};
    const Box bbox = geom::bounding_box(safe_set);
    const Vector& center = spec.equilibrium;
    const Vector lo = center + options.scale * (bbox.lower() - center);
    const Vector hi = center + options.scale * (bbox.upper() - center);
    Vector s(center.size());
    for (int attempt = 0; attempt < options.budget; ++attempt) {
        for (Eigen::Index i = 0; i < s.size(); ++i)
            s(i) = lo(i) == hi(i) ? lo(i) : std::uniform_real_distribution<double>(lo(i), hi(i))(rng);
        if (geom::point_in_polytope(s, safe_set, 0.0)) return EnvState{s};
    }
    throw ConfigError("reset: rejection budget exhausted; no initial state found in the safe set");
}

// ---------------------------------------------------------------------------

Environment::Environment(EnvSpec spec, LinearModel sim_model, std::uint64_t seed)
    : spec_(std::move(spec)), sim_model_(std::move(sim_model)), rng_(seed) {
    spec_.validate();
    state_ = EnvState{spec_.equilibrium};
}

void Environment::reset_to(const EnvState& s) {
    state_ = s;
    steps_ = 0;
}

EnvState Environment::reset(const geom::HPolytope& safe_set, const ResetOptions& options) {
    reset_to(env::reset(spec_, safe_set, rng_, options));
    return state_;
}

Vector Environment::observe() const {
    if (spec_.kind == EnvKind::pendulum) return pendulum_observe_reward(state_, 0.0).obs;
    return state_.s - spec_.equilibrium;
}

double Environment::reward(const Vector& a) const {
    if (spec_.kind == EnvKind::pendulum) return pendulum_observe_reward(state_, a(0)).reward;
    return quadrotor_reward(state_.s, a, spec_);
}

Environment::Transition Environment::step(const Vector& a) {
    if (a.size() != spec_.action_dim()) throw InputError("Environment::step: action dimension mismatch");
    Transition t;
    t.disturbance = sample_disturbance(spec_, rng_);
    if (!spec_.disturbance_box.contains(t.disturbance))
        throw SafetyViolation("disturbance realization left the disturbance box");
    const Vector applied = spec_.action_box.clamp(a);
    t.clamped = !spec_.action_box.contains(a);
    t.reward = reward(applied);
    if (spec_.kind == EnvKind::pendulum) {
        t.next = pendulum_step(state_, applied(0), spec_, t.disturbance(0)).next;
    } else {
        t.next.s = sim_model_.step(state_.s, applied, t.disturbance);
    }
    state_ = t.next;
    ++steps_;
    t.truncated = steps_ >= spec_.horizon;
    return t;
}

}  // namespace safeshield::env
