#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>

#include "safeshield/geom.hpp"

namespace safeshield::env {

using geom::Box;
using geom::Matrix;
using geom::Vector;

using Rng = std::mt19937_64;

enum class EnvKind { pendulum, quadrotor };

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& name);

/// Physical constants of the inverted pendulum.
struct PendulumParams {
    double g = 9.81;  // m/s^2
    double m = 1.0;   // kg
    double l = 1.0;   // m
};

/// Physical constants of the planar quadrotor.
struct QuadrotorParams {
    double g = 9.81;  // m/s^2
    double k = 1.0;   // 1/kg
    double d0 = 70.0;
    double d1 = 17.0;
    double n0 = 55.0;
};

struct EnvSpec {
    EnvKind kind = EnvKind::pendulum;
    double dt = 0.05;
    int horizon = 200;
    Box action_box;
    Box disturbance_box;
    std::variant<PendulumParams, QuadrotorParams> params;
    Vector equilibrium;         // s*
    Vector equilibrium_action;  // a*

    static EnvSpec pendulum();
    static EnvSpec quadrotor();

    Eigen::Index state_dim() const { return equilibrium.size(); }
    Eigen::Index action_dim() const { return action_box.dim(); }
    Eigen::Index disturbance_dim() const { return disturbance_box.dim(); }
    Eigen::Index observation_dim() const;

    /// Throws ConfigError when an invariant does not hold.
    void validate() const;
};

struct EnvState {
    Vector s;
};

/// Discrete affine model s' = A_d s + B_d a + E_d w + c_off + e, where e lies
/// in the box [-remainder, remainder] and covers the linearization error of
/// a nonlinear plant (zero for models that are the plant).
struct LinearModel {
    Matrix A_d;
    Matrix B_d;
    Matrix E_d;
    Vector c_off;
    Vector remainder;

    Vector step(const Vector& s, const Vector& a, const Vector& w) const;
    void validate() const;
};

// ---------------------------------------------------------------------------
// Pendulum

double wrap_angle(double theta);

struct StepOutcome {
    EnvState next;
    bool clamped = false;  // action was outside the action box
};

/// Explicit Euler step of theta'' = (g/l) sin(theta) + a/(m l^2) + w.
StepOutcome pendulum_step(const EnvState& s, double a, const EnvSpec& spec, double w = 0.0);

struct Observation {
    Vector obs;
    double reward = 0.0;
};

/// Observation [cos, sin, theta_dot] and the quadratic swing-up reward.
Observation pendulum_observe_reward(const EnvState& s, double a);

/// Euler-discretized Jacobian at the upright equilibrium. The remainder covers
/// |sin(theta) - theta| for |theta| <= theta_bound.
LinearModel pendulum_linear_model(const EnvSpec& spec, double theta_bound);

// ---------------------------------------------------------------------------
// Quadrotor

Vector quadrotor_derivative(const Vector& s, const Vector& a, const Vector& w,
                            const QuadrotorParams& p);

/// Nonlinear one-step map with zero-order-hold inputs (classic RK4 substeps).
Vector quadrotor_step_nonlinear(const Vector& s, const Vector& a, const Vector& w,
                                const EnvSpec& spec, int substeps = 50);

/// Jacobians at (s*, a*, 0), discretized exactly under zero-order hold.
LinearModel linearize_discretize(const EnvSpec& spec);

double quadrotor_reward(const Vector& s, const Vector& a, const EnvSpec& spec);

// ---------------------------------------------------------------------------
// Shared

/// Linear model used for verification (and for simulation of the quadrotor).
/// `theta_bound` only matters for the pendulum.
LinearModel verification_model(const EnvSpec& spec, double theta_bound);

Vector sample_disturbance(const EnvSpec& spec, Rng& rng);

struct ResetOptions {
    bool deterministic = false;
    double scale = 0.9;
    int budget = 10000;
};

/// Rejection sample inside `safe_set` from the box s* + scale * (bbox(safe_set) - s*).
EnvState reset(const EnvSpec& spec, const geom::HPolytope& safe_set, Rng& rng,
               const ResetOptions& options = {});

/// A single environment instance: owns its generator and current state.
class Environment {
public:
    Environment(EnvSpec spec, LinearModel sim_model, std::uint64_t seed);

    const EnvSpec& spec() const { return spec_; }
    const EnvState& state() const { return state_; }
    int steps() const { return steps_; }

    void reset_to(const EnvState& s);
    EnvState reset(const geom::HPolytope& safe_set, const ResetOptions& options);

    Vector observe() const;
    double reward(const Vector& a) const;

    struct Transition {
        EnvState next;
        double reward = 0.0;
        Vector disturbance;
        bool clamped = false;
        bool truncated = false;  // horizon reached
    };

    Transition step(const Vector& a);

    Rng& rng() { return rng_; }

private:
    EnvSpec spec_;
    LinearModel sim_model_;
    Rng rng_;
    EnvState state_;
    int steps_ = 0;
};

}  // namespace safeshield::env
