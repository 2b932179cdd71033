#include "safeshield/shields.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "safeshield/errors.hpp"

namespace safeshield::shields {

std::string to_string(ShieldType t) {
    switch (t) {
        case ShieldType::none: return "none";
        case ShieldType::replace_sample: return "replace_sample";
        case ShieldType::replace_failsafe: return "replace_failsafe";
        case ShieldType::project: return "project";
        case ShieldType::mask: return "mask";
    }
    return "?";
}

std::string to_string(TupleMode m) {
    switch (m) {
        case TupleMode::naive: return "naive";
        case TupleMode::adaption_penalty: return "adaption_penalty";
        case TupleMode::safe_action: return "safe_action";
        case TupleMode::both: return "both";
    }
    return "?";
}

std::string to_string(Fallback f) {
    switch (f) {
        case Fallback::none: return "none";
        case Fallback::sample_budget: return "sample_budget";
        case Fallback::projection_infeasible: return "projection_infeasible";
        case Fallback::mask_empty_box: return "mask_empty_box";
        case Fallback::mask_synthetic: return "mask_synthetic";
    }
    return "?";
}

ShieldType shield_type_from_string(const std::string& s) {
    for (auto t : {ShieldType::none, ShieldType::replace_sample, ShieldType::replace_failsafe,
                   ShieldType::project, ShieldType::mask})
        if (to_string(t) == s) return t;
    throw ConfigError("unknown shield.type '" + s +
                      "' (expected none, replace_sample, replace_failsafe, project, mask)");
}

TupleMode tuple_mode_from_string(const std::string& s) {
    for (auto m : {TupleMode::naive, TupleMode::adaption_penalty, TupleMode::safe_action, TupleMode::both})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown shield.tuple '" + s +
                      "' (expected naive, adaption_penalty, safe_action, both)");
}

// ---------------------------------------------------------------------------

Vector sample_safe_action(const safety::SafetyContext& ctx, const Vector& s, env::Rng& rng, int budget) {
    const Box& A = ctx.action_box();
    Vector a(A.dim());
    for (int draw = 0; draw < budget; ++draw) {
        for (Eigen::Index i = 0; i < a.size(); ++i)
            a(i) = std::uniform_real_distribution<double>(A.lower()(i), A.upper()(i))(rng);
        if (ctx.phi(s, a)) return a;
    }
    throw BudgetExhausted("sample_safe_action: no safe action within " + std::to_string(budget) + " draws");
}

ShieldDecision shield_replace(const safety::SafetyContext& ctx, const Vector& s, const Vector& a,
                              ReplacementStrategy strategy, env::Rng& rng) {
    ShieldDecision d;
    d.proposed = a;
    if (ctx.phi(s, a)) {
        d.executed = a;
        return d;
    }
    d.intervened = true;
    if (strategy == ReplacementStrategy::sample) {
        try {
            d.executed = sample_safe_action(ctx, s, rng);
            return d;
        } catch (const BudgetExhausted&) {
            d.fallback = Fallback::sample_budget;
        }
    }
    d.executed = ctx.failsafe_action(s);
    return d;
}

int nearest_index(const std::vector<Vector>& actions, const Vector& a) {
    if (actions.empty()) throw InputError("nearest_index: empty action grid");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < actions.size(); ++i) {
        const double d = (actions[i] - a).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

ShieldDecision shield_replace_discrete(const safety::SafetyContext& ctx, const Vector& s, int proposed,
                                       const std::vector<Vector>& actions, ReplacementStrategy strategy,
                                       env::Rng& rng, int* executed_index) {
    if (proposed < 0 || static_cast<std::size_t>(proposed) >= actions.size())
        throw InputError("shield_replace_discrete: proposed index out of range");
    ShieldDecision d;
    d.proposed = actions[proposed];
    int index = proposed;
    if (ctx.phi(s, d.proposed)) {
        d.executed = d.proposed;
    } else {
        d.intervened = true;
        index = -1;
        if (strategy == ReplacementStrategy::sample) {
            std::vector<int> safe;
            for (std::size_t i = 0; i < actions.size(); ++i)
                if (ctx.phi(s, actions[i])) safe.push_back(static_cast<int>(i));
            if (!safe.empty()) {
                index = safe[std::uniform_int_distribution<std::size_t>(0, safe.size() - 1)(rng)];
                d.executed = actions[index];
            } else {
                d.fallback = Fallback::sample_budget;
            }
        }
        if (index < 0) d.executed = ctx.failsafe_action(s);
    }
    if (executed_index) *executed_index = index;
    return d;
}

// ---------------------------------------------------------------------------

Projection project_onto(const HPolytope& p, const Box& box, const Vector& a) {
    Projection out;
    const auto m = p.dim();
    if (a.size() != m || box.dim() != m) throw InputError("project_onto: dimension mismatch");

    if (m == 1) {
        double lo = box.lower()(0);
        double hi = box.upper()(0);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const double c = p.C()(i, 0);
            const double b = p.q()(i);
            if (c > 0.0) hi = std::min(hi, b / c);
            else lo = std::max(lo, b / c);
        }
        if (lo > hi) return out;
        out.feasible = true;
        out.point = Vector::Constant(1, std::clamp(a(0), lo, hi));
        out.distance = std::abs(out.point(0) - a(0));
        return out;
    }
    if (m != 2) throw InputError("project_onto: only one- and two-dimensional actions are supported");

    // The clipped polygon keeps exactly the non-redundant constraints: its
    // edges are the one-constraint active sets, its vertices the two-constraint ones.
    const geom::Polygon poly = geom::polygon_from_polytope(p, box);
    if (poly.empty()) return out;
    out.feasible = true;
    if (geom::point_in_polytope(a, p, 0.0) && box.contains(a)) {
        out.point = a;
        return out;
    }
    const Eigen::Vector2d x(a(0), a(1));
    double best = std::numeric_limits<double>::infinity();
    Eigen::Vector2d best_point = poly.vertices.front();
    const auto n = poly.vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d& u = poly.vertices[i];
        const Eigen::Vector2d& v = poly.vertices[(i + 1) % n];
        // Vertex candidate (two active constraints).
        if (const double d = (x - u).squaredNorm(); d < best) {
            best = d;
            best_point = u;
        }
        // Edge candidate (one active constraint): foot of the perpendicular.
        const Eigen::Vector2d e = v - u;
        const double len2 = e.squaredNorm();
        if (len2 <= 0.0) continue;
        const double t = (x - u).dot(e) / len2;
        if (t > 0.0 && t < 1.0) {
            const Eigen::Vector2d foot = u + t * e;
            if (const double d = (x - foot).squaredNorm(); d < best) {
                best = d;
                best_point = foot;
            }
        }
    }
    out.point = Vector(best_point);
    out.distance = std::sqrt(best);
    return out;
}

ShieldDecision shield_project(const safety::SafetyContext& ctx, const Vector& s, const Vector& a) {
    ShieldDecision d;
    d.proposed = a;
    if (ctx.phi(s, a)) {
        d.executed = a;
        d.projection_distance = 0.0;
        return d;
    }
    const HPolytope safe = ctx.safe_action_polytope(s, kConstructionMargin);
    const Projection proj = project_onto(safe, ctx.action_box(), a);
    if (proj.feasible && ctx.phi(s, proj.point)) {
        d.executed = proj.point;
        d.projection_distance = proj.distance;
        d.intervened = proj.distance > 1e-9;
        return d;
    }
    d.fallback = Fallback::projection_infeasible;
    d.intervened = true;
    d.executed = ctx.failsafe_action(s);
    d.projection_distance = (d.executed - a).norm();
    return d;
}

// ---------------------------------------------------------------------------

DiscreteMask mask_discrete(const safety::SafetyContext& ctx, const Vector& s,
                           const std::vector<Vector>& actions) {
    DiscreteMask mask;
    for (std::size_t i = 0; i < actions.size(); ++i)
        if (ctx.phi(s, actions[i])) mask.indices.push_back(static_cast<int>(i));
    if (mask.indices.empty()) {
        mask.synthetic = true;
        mask.synthetic_action = ctx.failsafe_action(s);
        mask.indices.push_back(static_cast<int>(actions.size()));
    }
    return mask;
}

geom::CenteredBox safe_action_box(const safety::SafetyContext& ctx, const Vector& s) {
    const Box& A = ctx.action_box();
    const HPolytope safe = ctx.safe_action_polytope(s);
    const Vector center = A.center();
    if (!geom::point_in_polytope(center, safe, 0.0)) return {0.0, Box(center, center)};
    double scale = geom::max_centered_box(safe, center, A.halfwidths(), 0.0).scale;
    if (scale < 1.0) scale *= 1.0 - kMaskScaleShrink;
    return {scale, Box::symmetric(center, scale * A.halfwidths())};
}

Vector mask_transform(const Vector& a, const Box& from, const Box& to) {
    return (a - from.lower())
               .cwiseProduct(to.upper() - to.lower())
               .cwiseQuotient(from.upper() - from.lower()) +
           to.lower();
}

ShieldDecision mask_continuous(const safety::SafetyContext& ctx, const Vector& s, const Vector& a) {
    ShieldDecision d;
    d.proposed = a;
    const geom::CenteredBox safe_box = safe_action_box(ctx, s);
    d.mask_scale = safe_box.scale;
    d.intervened = safe_box.scale < 1.0;
    if (safe_box.scale > 0.0) {
        const Vector transformed = mask_transform(ctx.action_box().clamp(a), ctx.action_box(), safe_box.box);
        if (ctx.phi(s, transformed)) {
            d.executed = transformed;
            return d;
        }
    }
    d.fallback = Fallback::mask_empty_box;
    d.executed = ctx.failsafe_action(s);
    return d;
}

// ---------------------------------------------------------------------------

Shield::Shield(ShieldType type, const safety::SafetyContext* ctx) : type_(type), ctx_(ctx) {
    if (type_ != ShieldType::none && ctx_ == nullptr)
        throw ConfigError("shield '" + to_string(type_) + "' requires a safety context");
}

ShieldDecision Shield::apply(const Vector& s, const Vector& a, env::Rng& rng) const {
    switch (type_) {
        case ShieldType::none: {
            ShieldDecision d;
            d.proposed = a;
            d.executed = a;
            return d;
        }
        case ShieldType::replace_sample:
            return shield_replace(*ctx_, s, a, ReplacementStrategy::sample, rng);
        case ShieldType::replace_failsafe:
            return shield_replace(*ctx_, s, a, ReplacementStrategy::failsafe, rng);
        case ShieldType::project:
            return shield_project(*ctx_, s, a);
        case ShieldType::mask:
            return mask_continuous(*ctx_, s, a);
    }
    throw ConfigError("unhandled shield type");
}

bool is_valid_combination(ShieldType shield, TupleMode mode, bool discrete_agent) {
    switch (shield) {
        case ShieldType::none:
        case ShieldType::mask:
            return mode == TupleMode::naive;
        case ShieldType::replace_sample:
            return true;
        case ShieldType::replace_failsafe:
            // The failsafe action is generally not on the grid, so it cannot be
            // stored as a discrete learning action.
            return !discrete_agent || mode == TupleMode::naive || mode == TupleMode::adaption_penalty;
        case ShieldType::project:
            return !discrete_agent;
    }
    return false;
}

void validate_combination(ShieldType shield, TupleMode mode, bool discrete_agent) {
    if (!is_valid_combination(shield, mode, discrete_agent))
        throw ConfigError("tuple '" + to_string(mode) + "' is not supported with shield '" +
                          to_string(shield) + "' for " + (discrete_agent ? "discrete" : "continuous") +
                          " agents");
}

std::vector<LearningTuple> make_learning_tuples(TupleMode mode, const Vector& s, const Vector& a,
                                                const ShieldDecision& decision, const Vector& s_next,
                                                double reward, double penalty, double proj_dist_coef) {
    const auto tuple = [&](const Vector& action, double r, TupleMode m) {
        return LearningTuple{s, action, s_next, r, m};
    };
    const double adapted = reward + (decision.intervened ? penalty : 0.0) +
                           proj_dist_coef * decision.projection_distance.value_or(0.0);
    switch (mode) {
        case TupleMode::naive: return {tuple(a, reward, mode)};
        case TupleMode::adaption_penalty: return {tuple(a, adapted, mode)};
        case TupleMode::safe_action: return {tuple(decision.executed, reward, mode)};
        case TupleMode::both: {
            std::vector<LearningTuple> out{tuple(a, adapted, mode)};
            if (decision.intervened) out.push_back(tuple(decision.executed, reward, mode));
            return out;
        }
    }
    throw ConfigError("unhandled tuple mode");
}

// ---------------------------------------------------------------------------

FiniteMdp::FiniteMdp(int states, int actions)
    : states_(states),
      actions_(actions),
      transition_(static_cast<std::size_t>(states) * actions * states, 0.0),
      reward_(static_cast<std::size_t>(states) * actions, 0.0),
      replacement_(static_cast<std::size_t>(states) * actions, 0.0),
      safe_(static_cast<std::size_t>(states) * actions, 1) {
    if (states <= 0 || actions <= 0) throw InputError("FiniteMdp: need at least one state and action");
}

std::size_t FiniteMdp::index2(int s, int a) const {
    return static_cast<std::size_t>(s) * actions_ + a;
}

std::size_t FiniteMdp::index3(int s, int a, int s_next) const {
    return (static_cast<std::size_t>(s) * actions_ + a) * states_ + s_next;
}

void FiniteMdp::validate(double tol) const {
    for (int s = 0; s < states_; ++s) {
        double mass = 0.0;
        bool any_safe = false;
        for (int a = 0; a < actions_; ++a) {
            double row = 0.0;
            for (int s2 = 0; s2 < states_; ++s2) {
                if (T(s, a, s2) < 0.0) throw InputError("FiniteMdp: negative transition probability");
                row += T(s, a, s2);
            }
            if (std::abs(row - 1.0) > tol) throw InputError("FiniteMdp: transition row does not sum to 1");
            if (replacement(s, a) < 0.0) throw InputError("FiniteMdp: negative replacement probability");
            if (replacement(s, a) > 0.0 && !safe(s, a))
                throw InputError("FiniteMdp: replacement policy places mass on an unsafe action");
            mass += replacement(s, a);
            any_safe = any_safe || safe(s, a);
        }
        if (any_safe && std::abs(mass - 1.0) > tol)
            throw InputError("FiniteMdp: replacement policy row does not sum to 1");
    }
}

FiniteMdp shielded_mdp_model(const FiniteMdp& m) {
    m.validate();
    FiniteMdp out = m;
    for (int s = 0; s < m.states(); ++s) {
        for (int a = 0; a < m.actions(); ++a) {
            if (m.safe(s, a)) continue;
            double reward = 0.0;
            for (int s2 = 0; s2 < m.states(); ++s2) out.T(s, a, s2) = 0.0;
            for (int alt = 0; alt < m.actions(); ++alt) {
                const double w = m.replacement(s, alt);
                if (w == 0.0) continue;
                reward += w * m.r(s, alt);
                for (int s2 = 0; s2 < m.states(); ++s2) out.T(s, a, s2) += w * m.T(s, alt, s2);
            }
            out.r(s, a) = reward;
        }
    }
    return out;
}

}  // namespace safeshield::shields
