#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "safeshield/env.hpp"
#include "safeshield/geom.hpp"

namespace safeshield::safety {

using geom::Box;
using geom::HPolytope;
using geom::Matrix;
using geom::Vector;

enum class SetSource { loaded, computed };

/// Robust control invariant set of provably safe states.
struct SafeSet {
    HPolytope polytope;
    SetSource source = SetSource::computed;
};

/// Saturated linear feedback a = clamp(K (s - s*) + a*, saturation).
struct FailsafeController {
    Matrix gain;
    Vector state_ref;
    Vector action_ref;
    Box saturation;

    Vector operator()(const Vector& s) const;
};

/// Default safe-state specification box for an environment.
Box default_spec_box(const env::EnvSpec& spec);

/// Verification model matching a specification box (the pendulum remainder is
/// sized from the box's angle bound).
env::LinearModel model_for(const env::EnvSpec& spec, const Box& spec_box);

/// Discrete-time LQR gain K (a - a* = K (s - s*)).
Matrix dlqr(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
            int max_iterations = 100000, double tol = 1e-12);

/// Default failsafe for an environment: LQR on the verification model.
FailsafeController default_failsafe(const env::EnvSpec& spec, const env::LinearModel& model);

struct InvariantSetOptions {
    int max_iterations = 2000;
    double fixed_point_tol = 1e-9;
    /// Extra tightening per propagation step, so the certificate holds with
    /// the containment slack.
    double step_margin = 1e-7;
};

/// Maximal robust positively invariant set of the closed loop under the
/// unsaturated failsafe, inside spec_box and the failsafe's input limits.
SafeSet compute_invariant_set(const env::LinearModel& model, const FailsafeController& controller,
                              const HPolytope& spec_box, const Box& disturbance,
                              const InvariantSetOptions& options = {});

SafeSet load_safe_set(const std::string& path);
void save_safe_set(const std::string& path, const SafeSet& set, const std::string& comment = {});

/// Everything needed to evaluate the safety function at run time. Holds the
/// halfspace data premultiplied with the model so phi is one mat-vec.
class SafetyContext {
public:
    SafetyContext(env::LinearModel model, SafeSet safe_set, Box disturbance, Box action_box,
                  FailsafeController failsafe);

    const env::LinearModel& model() const { return model_; }
    const SafeSet& safe_set() const { return set_; }
    const HPolytope& polytope() const { return set_.polytope; }
    const Box& disturbance() const { return disturbance_; }
    const Box& action_box() const { return action_box_; }
    const FailsafeController& failsafe() const { return failsafe_; }

    /// One-step reachable zonotope for all disturbances (and model remainder).
    geom::Zonotope reachable_set(const Vector& s, const Vector& a) const;

    /// Safety function: the reachable set lies in the safe set and a lies in
    /// the action box.
    bool phi(const Vector& s, const Vector& a) const;

    /// Minimum containment margin of the reachable set (>= 0 iff phi, ignoring the action box).
    double margin(const Vector& s, const Vector& a) const;

    /// {a : phi(s, a)} as halfspaces over actions, intersected with the action box.
    /// `extra_tightening` shrinks every safe-set offset further.
    HPolytope safe_action_polytope(const Vector& s, double extra_tightening = 0.0) const;

    /// Failsafe action; throws CertificateError when phi rejects it.
    Vector failsafe_action(const Vector& s) const;

    bool in_safe_set(const Vector& s, double tol = 0.0) const;

private:
    env::LinearModel model_;
    SafeSet set_;
    Box disturbance_;
    Box action_box_;
    FailsafeController failsafe_;

    Matrix generators_;    // [E diag(r_W), diag(remainder)]
    Vector w_center_term_;  // E * center(W)
    Matrix CA_;
    Matrix CB_;
    Vector offset_;        // q - slack - C c_off - C E center(W) - |C G| 1
};

/// Safe-set certificate check with the failsafe controller. Exact (LP based)
/// when the failsafe never saturates on the set; otherwise checks vertices (in
/// two dimensions) and hit-and-run samples, including chord endpoints on facets.
struct VerifyOptions {
    int samples = 4000;
    std::uint64_t seed = 7;
};

bool verify_failsafe(const SafeSet& set, const FailsafeController& controller,
                     const env::LinearModel& model, const Box& disturbance,
                     const VerifyOptions& options = {});

/// Structural checks of a set against its specification box: contains s*,
/// bounded, subset of spec_box. Throws CertificateError with the reason.
void check_safe_set(const SafeSet& set, const Vector& equilibrium, const HPolytope& spec_box);

/// Hit-and-run sampler over a bounded polytope (deterministic given seed).
class PolytopeSampler {
public:
    PolytopeSampler(const HPolytope& p, Vector start, std::uint64_t seed);

    /// Next interior point; `boundary` receives a chord endpoint on a facet.
    Vector next(Vector* boundary = nullptr);

private:
    const HPolytope& p_;
    Vector x_;
    env::Rng rng_;
};

}  // namespace safeshield::safety
