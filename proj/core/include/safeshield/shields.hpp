#pragma once

#include <optional>
#include <string>
#include <vector>

#include "safeshield/env.hpp"
#include "safeshield/safety.hpp"

namespace safeshield::shields {

using geom::Box;
using geom::HPolytope;
using geom::Vector;

enum class ShieldType { none, replace_sample, replace_failsafe, project, mask };
enum class TupleMode { naive, adaption_penalty, safe_action, both };
enum class ReplacementStrategy { sample, failsafe };

/// Why the executed action came from the failsafe controller instead of the
/// shield's own mechanism.
enum class Fallback {
    none,
    sample_budget,         // rejection sampling ran out of draws, or no safe grid action
    projection_infeasible, // no feasible projection or numerically rejected result
    mask_empty_box,        // centered safe-action box has zero scale
    mask_synthetic,        // no grid action was safe; failsafe appended to the mask
};

std::string to_string(ShieldType t);
std::string to_string(TupleMode m);
std::string to_string(Fallback f);
ShieldType shield_type_from_string(const std::string& s);
TupleMode tuple_mode_from_string(const std::string& s);

struct ShieldDecision {
    Vector proposed;
    Vector executed;
    bool intervened = false;
    std::optional<double> mask_scale;           // masking only
    std::optional<double> projection_distance;  // projection only (Euclidean)
    Fallback fallback = Fallback::none;
};

struct LearningTuple {
    Vector s;
    Vector action;
    Vector s_next;
    double reward = 0.0;
    TupleMode mode = TupleMode::naive;
};

// ---------------------------------------------------------------------------
// Action replacement

inline constexpr int kSampleBudget = 100;

/// Uniform draw from the provably safe actions by rejection from the action
/// box. Throws BudgetExhausted after `budget` rejected draws.
Vector sample_safe_action(const safety::SafetyContext& ctx, const Vector& s, env::Rng& rng,
                          int budget = kSampleBudget);

ShieldDecision shield_replace(const safety::SafetyContext& ctx, const Vector& s, const Vector& a,
                              ReplacementStrategy strategy, env::Rng& rng);

/// Replacement for agents acting on a finite action grid. The sample strategy
/// draws uniformly among the safe grid actions. `executed_index` receives the
/// grid index of the executed action, or -1 when the failsafe action is off-grid.
ShieldDecision shield_replace_discrete(const safety::SafetyContext& ctx, const Vector& s, int proposed,
                                       const std::vector<Vector>& actions, ReplacementStrategy strategy,
                                       env::Rng& rng, int* executed_index);

/// Index of the grid action closest (Euclidean) to `a`; ties go to the lower index.
int nearest_index(const std::vector<Vector>& actions, const Vector& a);

// ---------------------------------------------------------------------------
// Action projection

/// Internal tightening used when constructing projected actions so that they
/// pass the safety function despite rounding.
inline constexpr double kConstructionMargin = 1e-10;

/// Relative shrink applied to the masking box scale for the same purpose.
inline constexpr double kMaskScaleShrink = 1e-12;

struct Projection {
    bool feasible = false;
    Vector point;
    double distance = 0.0;
};

/// Euclidean projection of `a` onto a one- or two-dimensional polytope, by
/// enumerating the active sets of its non-redundant constraints (bounded by `box`).
Projection project_onto(const HPolytope& p, const Box& box, const Vector& a);

ShieldDecision shield_project(const safety::SafetyContext& ctx, const Vector& s, const Vector& a);

// ---------------------------------------------------------------------------
// Action masking

struct DiscreteMask {
    std::vector<int> indices;  // safe grid indices; or {grid size} when synthetic
    bool synthetic = false;
    Vector synthetic_action;   // failsafe action when synthetic
};

/// Indices of grid actions that pass the safety function. When none does,
/// the failsafe action is appended as an extra entry with index actions.size().
DiscreteMask mask_discrete(const safety::SafetyContext& ctx, const Vector& s,
                           const std::vector<Vector>& actions);

/// Largest box sharing the action box center and aspect ratio inside the safe actions.
geom::CenteredBox safe_action_box(const safety::SafetyContext& ctx, const Vector& s);

/// Elementwise affine map of `a` from box `from` onto box `to`.
Vector mask_transform(const Vector& a, const Box& from, const Box& to);

ShieldDecision mask_continuous(const safety::SafetyContext& ctx, const Vector& s, const Vector& a);

// ---------------------------------------------------------------------------
// Dispatch and learning tuples

/// Stateless shield bound to a safety context.
class Shield {
public:
    Shield(ShieldType type, const safety::SafetyContext* ctx);

    ShieldType type() const { return type_; }
    const safety::SafetyContext* context() const { return ctx_; }

    /// Continuous-action shielding; identity for `none`. Grid agents use
    /// mask_discrete and shield_replace_discrete instead.
    ShieldDecision apply(const Vector& s, const Vector& a, env::Rng& rng) const;

private:
    ShieldType type_;
    const safety::SafetyContext* ctx_;
};

/// Throws ConfigError for combinations outside the supported grid.
void validate_combination(ShieldType shield, TupleMode mode, bool discrete_agent);
bool is_valid_combination(ShieldType shield, TupleMode mode, bool discrete_agent);

std::vector<LearningTuple> make_learning_tuples(TupleMode mode, const Vector& s, const Vector& a,
                                                const ShieldDecision& decision, const Vector& s_next,
                                                double reward, double penalty, double proj_dist_coef);

// ---------------------------------------------------------------------------
// Finite MDPs under action replacement

class FiniteMdp {
public:
    FiniteMdp(int states, int actions);

    int states() const { return states_; }
    int actions() const { return actions_; }

    double& T(int s, int a, int s_next) { return transition_[index3(s, a, s_next)]; }
    double T(int s, int a, int s_next) const { return transition_[index3(s, a, s_next)]; }
    double& r(int s, int a) { return reward_[index2(s, a)]; }
    double r(int s, int a) const { return reward_[index2(s, a)]; }
    /// Replacement policy pi_r(a | s).
    double& replacement(int s, int a) { return replacement_[index2(s, a)]; }
    double replacement(int s, int a) const { return replacement_[index2(s, a)]; }
    /// phi(s, a) as a table.
    bool safe(int s, int a) const { return safe_[index2(s, a)] != 0; }
    void set_safe(int s, int a, bool v) { safe_[index2(s, a)] = v ? 1 : 0; }

    /// Throws InputError if T or pi_r rows are not distributions, or pi_r puts
    /// mass on an unsafe action.
    void validate(double tol = 1e-12) const;

private:
    std::size_t index2(int s, int a) const;
    std::size_t index3(int s, int a, int s_next) const;

    int states_;
    int actions_;
    std::vector<double> transition_;
    std::vector<double> reward_;
    std::vector<double> replacement_;
    std::vector<char> safe_;
};

/// Closed-form transition and reward of the MDP the agent effectively learns
/// on when unsafe actions are replaced by draws from pi_r. Returned as a
/// FiniteMdp sharing the safety table and replacement policy.
FiniteMdp shielded_mdp_model(const FiniteMdp& m);

}  // namespace safeshield::shields
