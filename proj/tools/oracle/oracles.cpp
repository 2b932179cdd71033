#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "safeshield/errors.hpp"
#include "safeshield/harness.hpp"
#include "safeshield/mlp.hpp"

namespace safeshield::oracles {

using geom::Box;
using geom::HPolytope;
using geom::Matrix;
using geom::Vector;
using Rng = std::mt19937_64;

namespace {

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

const harness::SafetyStack& stack(env::EnvKind kind) {
    static std::map<env::EnvKind, std::unique_ptr<harness::SafetyStack>> cache;
    auto& slot = cache[kind];
    if (!slot) {
        const auto config = harness::resolve_config({{"env.name", env::to_string(kind)}});
        slot = std::make_unique<harness::SafetyStack>(harness::build_safety(config));
    }
    return *slot;
}

Vector uniform_in(const Box& b, Rng& rng) {
    Vector x(b.dim());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x(i) = std::uniform_real_distribution<double>(b.lower()(i), b.upper()(i))(rng);
    return x;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

/// States near the boundary of the safe set, where unsafe actions exist.
std::vector<Vector> boundary_states(const harness::SafetyStack& st, int count, std::uint64_t seed, double pull = 0.98) {
    safety::PolytopeSampler sampler(st.ctx->polytope(), st.problem.spec.equilibrium, seed);
    std::vector<Vector> out;
    const Vector& eq = st.problem.spec.equilibrium;
    while (static_cast<int>(out.size()) < count) {
        Vector boundary;
        sampler.next(&boundary);
        out.push_back(eq + pull * (boundary - eq));
    }
    return out;
}

std::vector<std::pair<Vector, Vector>> unsafe_proposals(const harness::SafetyStack& st, int count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::pair<Vector, Vector>> out;
    std::uint64_t round = 0;
    while (static_cast<int>(out.size()) < count) {
        for (const auto& s : boundary_states(st, count, seed + 1000 * ++round)) {
            for (int tries = 0; tries < 20; ++tries) {
                const Vector a = uniform_in(st.problem.spec.action_box, rng);
                if (!st.ctx->phi(s, a)) {
                    out.emplace_back(s, a);
                    break;
                }
            }
            if (static_cast<int>(out.size()) == count) break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// 1. Zero violations under every shield configuration

Outcome zero_violations(std::ostream* log) {
    long runs = 0, episodes = 0, steps = 0;
    std::string failures;
    for (auto kind : {env::EnvKind::pendulum, env::EnvKind::quadrotor}) {
        const auto& st = stack(kind);
        for (auto agent : {rl::AgentKind::td3, rl::AgentKind::dqn}) {
            // Lighter update cadence than the training defaults: this checks
            // the shield, and the learner only has to keep changing its policy.
            const auto config = harness::resolve_config({{"env.name", env::to_string(kind)},
                                                         {"agent.name", rl::to_string(agent)},
                                                         {"agent.steps", "10000"},
                                                         {"agent.learning_starts", "1000"},
                                                         {"agent.batch", "64"},
                                                         {"agent.train_freq", "10"},
                                                         {"agent.gradient_steps", "1"}});
            for (auto shield : {shields::ShieldType::replace_sample, shields::ShieldType::replace_failsafe,
                                shields::ShieldType::project, shields::ShieldType::mask}) {
                for (auto tuple : {shields::TupleMode::naive, shields::TupleMode::adaption_penalty,
                                   shields::TupleMode::safe_action, shields::TupleMode::both}) {
                    if (!shields::is_valid_combination(shield, tuple, config.train.discrete())) continue;
                    for (std::uint64_t seed : {1, 2, 3}) {
                        rl::TrainConfig tc = config.train;
                        tc.shield.type = shield;
                        tc.shield.tuple = tuple;
                        tc.seed = seed;
                        const std::string tag = env::to_string(kind) + "/" + rl::to_string(agent) + "/" +
                                                shields::to_string(shield) + "/" + shields::to_string(tuple) +
                                                "/seed" + std::to_string(seed);
                        try {
                            rl::Agent a = rl::make_agent(tc, st.problem);
                            const rl::RunLog r = rl::train(tc, st.problem, a);
                            ++runs;
                            steps += r.steps;
                            episodes += static_cast<long>(r.episodes.size());
                            long v = 0;
                            for (const auto& e : r.episodes) v += e.violations;
                            if (v != 0 || r.steps != 10000) failures += " " + tag;
                        } catch (const Error& e) {
                            failures += " " + tag + " (" + e.what() + ")";
                        }
                    }
                    if (log) *log << "  " << env::to_string(kind) << " " << rl::to_string(agent) << " "
                                  << shields::to_string(shield) << "/" << shields::to_string(tuple) << " done\n";
                }
            }
        }
    }
    Outcome o;
    o.pass = failures.empty() && runs > 0;
    o.detail = std::to_string(runs) + " runs, " + std::to_string(steps) + " steps, " + std::to_string(episodes) +
               " episodes" + (failures.empty() ? ", 0 violations" : "; violations or aborts in:" + failures);
    return o;
}

// ---------------------------------------------------------------------------
// 2. Unshielded quadrotor training violates the specification

Outcome unshielded_failure(std::ostream*) {
    const auto& st = stack(env::EnvKind::quadrotor);
    const auto config = harness::resolve_config({{"env.name", "quadrotor"},
                                                 {"agent.steps", "20000"},
                                                 {"agent.learning_starts", "1000"},
                                                 {"agent.batch", "64"},
                                                 {"agent.train_freq", "10"},
                                                 {"agent.gradient_steps", "1"},
                                                 {"shield.type", "none"}});
    rl::TrainConfig tc = config.train;
    tc.seed = 1;
    rl::Agent a = rl::make_agent(tc, st.problem);
    const rl::RunLog r = rl::train(tc, st.problem, a);
    const auto n = std::min<std::size_t>(100, r.episodes.size());
    double share = 0.0;
    int touched = 0;
    for (std::size_t i = 0; i < n; ++i) {
        share += static_cast<double>(r.episodes[i].violations) / r.episodes[i].steps;
        touched += r.episodes[i].violations > 0 ? 1 : 0;
    }
    share /= static_cast<double>(n);
    Outcome o;
    o.pass = n == 100 && share > 0.2;
    o.detail = "violation rate " + fmt(share) + " over the first " + std::to_string(n) +
               " episodes (share of violating steps; " + std::to_string(touched) + " episodes left the box)";
    return o;
}

// ---------------------------------------------------------------------------
// 3. Zonotope containment against support functions

double support_by_vertices(const geom::Zonotope& z, const Vector& d) {
    const Eigen::Index p = z.order();
    double best = -std::numeric_limits<double>::infinity();
    for (long mask = 0; mask < (1L << p); ++mask) {
        Vector x = z.center();
        for (Eigen::Index j = 0; j < p; ++j) x += ((mask >> j) & 1 ? 1.0 : -1.0) * z.generators().col(j);
        best = std::max(best, d.dot(x));
    }
    return best;
}

Outcome containment(std::ostream*) {
    Rng rng(31);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    int mismatches = 0, inside = 0;
    const int pairs = 1000;
    for (int k = 0; k < pairs; ++k) {
        const Eigen::Index n = 2 + k % 4;
        const Eigen::Index order = 1 + k % 7;
        const geom::Zonotope z(gaussian(n, 1, rng).col(0), gaussian(n, order, rng));
        const Matrix C = gaussian(2 * n + k % 5, n, rng);
        Vector support(C.rows());
        for (Eigen::Index i = 0; i < C.rows(); ++i) support(i) = support_by_vertices(z, C.row(i).transpose());
        Vector q = support;
        // Most rows get room; some are pushed inside so both verdicts occur.
        for (Eigen::Index i = 0; i < q.size(); ++i) q(i) += (k % 2 ? std::abs(u(rng)) : u(rng)) + 1e-6;
        const HPolytope P(C, q);
        bool oracle = true;
        for (Eigen::Index i = 0; i < q.size(); ++i)
            if (support(i) > q(i) - geom::kContainmentSlack) oracle = false;
        const bool got = geom::zonotope_in_polytope(z, P);
        mismatches += got != oracle ? 1 : 0;
        inside += oracle ? 1 : 0;
    }
    Outcome o;
    o.pass = mismatches == 0 && inside > 0 && inside < pairs;
    o.detail = std::to_string(pairs) + " pairs (" + std::to_string(inside) + " contained), " +
               std::to_string(mismatches) + " mismatches";
    return o;
}

// ---------------------------------------------------------------------------
// 4. Projection against a brute-force grid

Outcome projection(std::ostream*) {
    const auto& st = stack(env::EnvKind::quadrotor);
    const Box& A = st.problem.spec.action_box;
    const int cells = 400;
    const Vector step = (A.upper() - A.lower()) / (cells - 1);
    const double cell = step.norm();
    int failures = 0, unsafe_results = 0;
    double worst_gap = 0.0;
    for (const auto& [s, a] : unsafe_proposals(st, 200, 41)) {
        const auto d = shields::shield_project(*st.ctx, s, a);
        if (!st.ctx->phi(s, d.executed)) ++unsafe_results;
        double grid_best = std::numeric_limits<double>::infinity();
        Vector x(2);
        for (int i = 0; i < cells; ++i) {
            x(0) = A.lower()(0) + step(0) * i;
            for (int j = 0; j < cells; ++j) {
                x(1) = A.lower()(1) + step(1) * j;
                if (st.ctx->phi(s, x)) grid_best = std::min(grid_best, (x - a).norm());
            }
        }
        const double dist = d.projection_distance.value_or(std::numeric_limits<double>::infinity());
        const double gap = std::abs(dist - grid_best);
        worst_gap = std::max(worst_gap, gap);
        if (!(dist <= grid_best + 1e-12 && gap <= cell)) ++failures;
    }
    Outcome o;
    o.pass = failures == 0 && unsafe_results == 0;
    o.detail = "200 unsafe proposals: worst |QP - grid| = " + fmt(worst_gap) + " (cell " + fmt(cell) + "), " +
               std::to_string(failures) + " outside tolerance, " + std::to_string(unsafe_results) +
               " projected actions rejected by phi";
    return o;
}

// ---------------------------------------------------------------------------
// 5. Continuous masking contract

/// Largest scale whose box (center +- scale * h) has every vertex accepted by phi.
double bisect_scale(const safety::SafetyContext& ctx, const Vector& s, const Vector& center, const Vector& h) {
    const auto inside = [&](double scale) {
        const Eigen::Index m = center.size();
        for (long mask = 0; mask < (1L << m); ++mask) {
            Vector v = center;
            for (Eigen::Index j = 0; j < m; ++j) v(j) += ((mask >> j) & 1 ? 1.0 : -1.0) * scale * h(j);
            if (!ctx.phi(s, v)) return false;
        }
        return true;
    };
    if (!inside(0.0)) return 0.0;
    if (inside(1.0)) return 1.0;
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (inside(mid) ? lo : hi) = mid;
    }
    return lo;
}

Outcome masking(std::ostream*) {
    int unsafe = 0, inverse_fail = 0, scale_fail = 0, restricted = 0, total = 0;
    double worst_scale = 0.0, worst_inverse = 0.0;
    for (auto kind : {env::EnvKind::pendulum, env::EnvKind::quadrotor}) {
        const auto& st = stack(kind);
        const Box& A = st.problem.spec.action_box;
        Rng rng(51);
        const auto states = boundary_states(st, 1000, 52, 0.9);
        for (const auto& s : states) {
            ++total;
            const Vector a = uniform_in(A, rng);
            const auto d = shields::mask_continuous(*st.ctx, s, a);
            if (!st.ctx->phi(s, d.executed)) ++unsafe;
            const double oracle = bisect_scale(*st.ctx, s, A.center(), A.halfwidths());
            const geom::CenteredBox box = shields::safe_action_box(*st.ctx, s);
            worst_scale = std::max(worst_scale, std::abs(box.scale - oracle));
            if (std::abs(box.scale - oracle) > 1e-9) ++scale_fail;
            if (box.scale > 0.0) {
                restricted += box.scale < 1.0 ? 1 : 0;
                const double err = (shields::mask_transform(d.executed, box.box, A) - a).cwiseAbs().maxCoeff();
                worst_inverse = std::max(worst_inverse, err);
                if (err > 1e-9) ++inverse_fail;
            }
        }
    }
    Outcome o;
    o.pass = unsafe == 0 && inverse_fail == 0 && scale_fail == 0 && restricted > 0;
    o.detail = std::to_string(total) + " (s, a) pairs over both systems (" + std::to_string(restricted) +
               " restricted): " + std::to_string(unsafe) + " unsafe, worst inverse error " + fmt(worst_inverse) +
               ", worst scale error " + fmt(worst_scale);
    return o;
}

// ---------------------------------------------------------------------------
// 6. Shielded MDP closed form against simulation

Outcome shielded_mdp(std::ostream*) {
    Rng rng(61);
    std::exponential_distribution<double> ex(1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    shields::FiniteMdp m(3, 2);
    for (int s = 0; s < 3; ++s) {
        for (int a = 0; a < 2; ++a) {
            double total = 0.0;
            std::vector<double> w(3);
            for (auto& x : w) total += (x = ex(rng));
            for (int s2 = 0; s2 < 3; ++s2) m.T(s, a, s2) = w[static_cast<std::size_t>(s2)] / total;
            m.r(s, a) = u(rng);
        }
        // One unsafe action in two of the three states.
        const int unsafe = s < 2 ? static_cast<int>(u(rng) < 0.5) : -1;
        for (int a = 0; a < 2; ++a) {
            m.set_safe(s, a, a != unsafe);
            m.replacement(s, a) = 0.0;
        }
        if (unsafe >= 0) m.replacement(s, 1 - unsafe) = 1.0;
        else m.replacement(s, 0) = m.replacement(s, 1) = 0.5;
    }
    m.validate();
    const shields::FiniteMdp closed = shields::shielded_mdp_model(m);

    const int samples = 100000;
    double worst = 0.0, worst_row = 0.0;
    std::discrete_distribution<int> pick_state;
    for (int s = 0; s < 3; ++s) {
        std::discrete_distribution<int> replace({m.replacement(s, 0), m.replacement(s, 1)});
        for (int a = 0; a < 2; ++a) {
            std::vector<int> counts(3, 0);
            for (int k = 0; k < samples; ++k) {
                const int executed = m.safe(s, a) ? a : replace(rng);
                std::discrete_distribution<int> next({m.T(s, executed, 0), m.T(s, executed, 1), m.T(s, executed, 2)});
                ++counts[static_cast<std::size_t>(next(rng))];
            }
            double row = 0.0;
            for (int s2 = 0; s2 < 3; ++s2) {
                row += closed.T(s, a, s2);
                worst = std::max(worst, std::abs(static_cast<double>(counts[static_cast<std::size_t>(s2)]) / samples -
                                                 closed.T(s, a, s2)));
            }
            worst_row = std::max(worst_row, std::abs(row - 1.0));
        }
    }
    Outcome o;
    o.pass = worst <= 0.01 && worst_row <= 1e-12;
    o.detail = "worst |MC - closed form| = " + fmt(worst) + " with 1e5 samples per pair, worst row-sum error " +
               fmt(worst_row);
    return o;
}

// ---------------------------------------------------------------------------
// 7. Uniformity of replacement sampling

/// Draws `n` unsafe proposals at s and returns the executed replacements.
std::vector<Vector> replacements(const harness::SafetyStack& st, const Vector& s, int n, Rng& rng, int* fallbacks) {
    std::vector<Vector> out;
    while (static_cast<int>(out.size()) < n) {
        const Vector a = uniform_in(st.problem.spec.action_box, rng);
        if (st.ctx->phi(s, a)) continue;
        const auto d = shields::shield_replace(*st.ctx, s, a, shields::ReplacementStrategy::sample, rng);
        if (d.fallback != shields::Fallback::none) ++*fallbacks;
        out.push_back(d.executed);
    }
    return out;
}

/// A state where the safe share of the action box lies in [0.25, 0.75].
Vector partly_safe_state(const harness::SafetyStack& st, std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& s : boundary_states(st, 400, seed, 0.95)) {
        int ok = 0;
        for (int i = 0; i < 2000; ++i) ok += st.ctx->phi(s, uniform_in(st.problem.spec.action_box, rng)) ? 1 : 0;
        if (ok >= 500 && ok <= 1500) return s;
    }
    throw Error("no partly safe state found");
}

double chi_square_p(const std::vector<double>& observed, const std::vector<double>& expected) {
    double stat = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i)
        stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
    const boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

Outcome replacement_uniformity(std::ostream*) {
    const int n = 10000;
    int fallbacks = 0, outside = 0;
    Rng rng(71);

    // Pendulum: the safe set of actions is an interval, split into 20 equal bins.
    const auto& pend = stack(env::EnvKind::pendulum);
    const Vector sp = partly_safe_state(pend, 72);
    const Box interval = geom::bounding_box(pend.ctx->safe_action_polytope(sp));
    const double lo = interval.lower()(0), hi = interval.upper()(0);
    std::vector<double> obs1(20, 0.0), exp1(20, n / 20.0);
    for (const auto& a : replacements(pend, sp, n, rng, &fallbacks)) {
        if (!pend.ctx->phi(sp, a)) ++outside;
        const auto k = std::clamp<int>(static_cast<int>((a(0) - lo) / (hi - lo) * 20), 0, 19);
        obs1[static_cast<std::size_t>(k)] += 1.0;
    }
    const double p1 = chi_square_p(obs1, exp1);

    // Quadrotor: 6x6 cells over the safe polygon, expected counts from exact areas.
    const auto& quad = stack(env::EnvKind::quadrotor);
    const Vector sq = partly_safe_state(quad, 73);
    const HPolytope P = quad.ctx->safe_action_polytope(sq);
    const Box& A = quad.problem.spec.action_box;
    const geom::Polygon poly = geom::polygon_from_polytope(P, A);
    const Box bb = geom::bounding_box(P);
    const int g = 6;
    std::vector<double> area(g * g, 0.0);
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
            const Vector c0 = bb.lower() + (bb.upper() - bb.lower()).cwiseProduct(Vector((Vector(2) << i, j).finished())) / g;
            const Vector c1 = bb.lower() + (bb.upper() - bb.lower()).cwiseProduct(Vector((Vector(2) << i + 1, j + 1).finished())) / g;
            const geom::Polygon cellpoly = geom::polygon_from_polytope(P, Box(c0, c1));
            area[static_cast<std::size_t>(i * g + j)] = cellpoly.empty() ? 0.0 : cellpoly.area();
        }
    std::vector<double> obs_cells(g * g, 0.0);
    for (const auto& a : replacements(quad, sq, n, rng, &fallbacks)) {
        if (!quad.ctx->phi(sq, a)) ++outside;
        const int i = std::clamp<int>(static_cast<int>((a(0) - bb.lower()(0)) / (bb.upper()(0) - bb.lower()(0)) * g), 0, g - 1);
        const int j = std::clamp<int>(static_cast<int>((a(1) - bb.lower()(1)) / (bb.upper()(1) - bb.lower()(1)) * g), 0, g - 1);
        obs_cells[static_cast<std::size_t>(i * g + j)] += 1.0;
    }
    // Cells with small expected counts are pooled into one bin.
    std::vector<double> obs2, exp2;
    double pooled_obs = 0.0, pooled_exp = 0.0;
    for (std::size_t k = 0; k < area.size(); ++k) {
        const double e = n * area[k] / poly.area();
        if (e >= 5.0) {
            obs2.push_back(obs_cells[k]);
            exp2.push_back(e);
        } else {
            pooled_obs += obs_cells[k];
            pooled_exp += e;
        }
    }
    if (pooled_exp > 0.0) {
        obs2.push_back(pooled_obs);
        exp2.push_back(pooled_exp);
    }
    const double p2 = chi_square_p(obs2, exp2);

    Outcome o;
    o.pass = p1 >= 0.01 && p2 >= 0.01 && fallbacks == 0 && outside == 0;
    o.detail = "pendulum p = " + fmt(p1) + " (20 bins), quadrotor p = " + fmt(p2) + " (" +
               std::to_string(obs2.size()) + " bins), " + std::to_string(fallbacks) + " fallbacks, " +
               std::to_string(outside) + " unsafe executions";
    return o;
}

// ---------------------------------------------------------------------------
// 8. Finite-difference gradient checks of the default networks

struct FdResult {
    double worst = 0.0;
    long entries = 0;
    long kinks = 0;  // perturbations that flipped a ReLU; the central difference is meaningless there
};

void fd_check(rl::Mlp net, const Matrix& X, const Matrix& R, FdResult& out) {
    rl::Mlp::Tape tape;
    net.forward(X, tape);
    Matrix dX;
    const rl::MlpGrad g = net.backward(tape, R, &dX);
    const double h = 1e-6;
    const bool relu = net.activation() == rl::Activation::relu;
    Matrix Xp = X;
    const auto eval = [&](std::vector<bool>* pattern) {
        rl::Mlp::Tape t;
        const double f = net.forward(Xp, t).cwiseProduct(R).sum();
        if (pattern) {
            pattern->clear();
            for (std::size_t l = 0; l + 1 < t.pre.size(); ++l)
                for (Eigen::Index i = 0; i < t.pre[l].size(); ++i) pattern->push_back(t.pre[l].data()[i] > 0.0);
        }
        return f;
    };
    std::vector<bool> p_up, p_down;
    const auto check = [&](double& param, double analytic) {
        const double keep = param;
        param = keep + h;
        const double up = eval(relu ? &p_up : nullptr);
        param = keep - h;
        const double down = eval(relu ? &p_down : nullptr);
        param = keep;
        if (relu && p_up != p_down) {
            ++out.kinks;
            return;
        }
        ++out.entries;
        const double numeric = (up - down) / (2 * h);
        out.worst = std::max(out.worst, std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric)));
    };
    for (std::size_t l = 0; l < net.layers(); ++l) {
        for (Eigen::Index i = 0; i < net.W[l].size(); ++i) check(net.W[l].data()[i], g.dW[l].data()[i]);
        for (Eigen::Index i = 0; i < net.b[l].size(); ++i) check(net.b[l](i), g.db[l](i));
    }
    for (Eigen::Index i = 0; i < Xp.size(); ++i) check(Xp.data()[i], dX.data()[i]);
}

Outcome gradients(std::ostream*) {
    struct Net {
        std::string name;
        std::vector<int> sizes;
        rl::Activation act;
    };
    std::vector<Net> nets;
    for (auto kind : {env::EnvKind::pendulum, env::EnvKind::quadrotor}) {
        for (auto agent : {rl::AgentKind::dqn, rl::AgentKind::td3}) {
            const auto c = harness::resolve_config({{"env.name", env::to_string(kind)}, {"agent.name", rl::to_string(agent)}});
            const int obs = static_cast<int>(c.spec.observation_dim());
            const int m = static_cast<int>(c.spec.action_dim());
            const std::string prefix = env::to_string(kind) + " " + rl::to_string(agent);
            const auto with = [](int in, const std::vector<int>& hidden, int out) {
                std::vector<int> s{in};
                s.insert(s.end(), hidden.begin(), hidden.end());
                s.push_back(out);
                return s;
            };
            if (agent == rl::AgentKind::dqn) {
                const int n = static_cast<int>(rl::action_grid(c.spec.action_box, c.train.grid_points).size());
                nets.push_back({prefix + " q", with(obs, c.train.dqn.hidden, n), c.train.dqn.activation});
            } else {
                nets.push_back({prefix + " actor", with(obs, c.train.td3.hidden, m), c.train.td3.activation});
                nets.push_back({prefix + " critic", with(obs + m, c.train.td3.hidden, 1), c.train.td3.activation});
            }
        }
    }
    Rng rng(81);
    double worst = 0.0;
    long entries = 0, kinks = 0;
    std::string where;
    for (const auto& net : nets) {
        for (int instance = 0; instance < 50; ++instance) {
            const rl::Mlp mlp(net.sizes, net.act, rng);
            FdResult r;
            fd_check(mlp, gaussian(net.sizes.front(), 2, rng), gaussian(net.sizes.back(), 2, rng), r);
            entries += r.entries;
            kinks += r.kinks;
            if (r.worst > worst) {
                worst = r.worst;
                where = net.name;
            }
        }
    }
    Outcome o;
    o.pass = worst < 1e-4 && kinks * 1000 < entries;
    o.detail = std::to_string(nets.size()) + " networks x 50 instances, " + std::to_string(entries) +
               " entries, worst relative error " + fmt(worst) + (where.empty() ? "" : " (" + where + ")") + ", " +
               std::to_string(kinks) + " perturbations skipped for crossing a ReLU kink";
    return o;
}

// ---------------------------------------------------------------------------
// 9. Learning progress of shielded DQN on the pendulum

Outcome learning_progress(std::ostream* log) {
    const auto& st = stack(env::EnvKind::pendulum);
    auto config = harness::resolve_config({{"env.name", "pendulum"},
                                           {"agent.name", "dqn"},
                                           {"agent.steps", "20000"},
                                           {"shield.type", "mask"},
                                           {"run.eval_every", "1000"},
                                           {"run.eval_curve_episodes", "10"}});
    const double failsafe = rl::evaluate_failsafe(st.problem, config.train.eval_episodes, config.train.eval_seed).return_mean;
    int passed = 0;
    std::string detail = "failsafe return " + fmt(failsafe) + ";";
    for (std::uint64_t seed : {1, 2, 3}) {
        rl::TrainConfig tc = config.train;
        tc.shield.type = shields::ShieldType::mask;
        tc.seed = seed;
        rl::Agent a = rl::make_agent(tc, st.problem);
        const rl::RunLog r = rl::train(tc, st.problem, a);
        if (r.evaluations.size() < 2) return {false, "missing evaluations"};
        const double first = r.evaluations.front().mean_return;
        const double last = r.evaluations.back().mean_return;
        const double gap = failsafe - first;
        // With no gap to close, progress means not getting worse.
        const bool ok = gap > 0.0 ? last - first >= 0.5 * gap : last >= first;
        passed += ok ? 1 : 0;
        detail += " seed " + std::to_string(seed) + ": " + fmt(first) + " -> " + fmt(last) +
                  (gap > 0.0 ? " (" + fmt(100.0 * (last - first) / gap, 3) + "% of gap)" : " (no gap)");
        if (log) *log << "  seed " << seed << " done\n";
    }
    Outcome o;
    o.pass = passed >= 2;
    o.detail = detail + "; " + std::to_string(passed) + "/3 seeds pass";
    return o;
}

// ---------------------------------------------------------------------------
// 10. Byte-identical run files

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism(std::ostream*) {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "safeshield_determinism";
    int compared = 0, differ = 0;
    const std::vector<harness::KeyValues> configs = {
        {{"env.name", "quadrotor"}, {"agent.name", "td3"}, {"shield.type", "project,mask"}, {"agent.steps", "3000"},
         {"agent.batch", "64"}, {"agent.learning_starts", "500"}, {"run.seeds", "5"}},
        {{"env.name", "pendulum"}, {"agent.name", "dqn"}, {"shield.type", "replace_sample,mask"}, {"agent.steps", "3000"},
         {"agent.batch", "64"}, {"run.seeds", "5"}}};
    for (std::size_t k = 0; k < configs.size(); ++k) {
        std::vector<harness::ExperimentResult> results;
        for (int rep = 0; rep < 2; ++rep) {
            auto kv = configs[k];
            kv["run.output_dir"] = (root / (std::to_string(k) + "_" + std::to_string(rep))).string();
            fs::remove_all(kv["run.output_dir"]);
            results.push_back(harness::run_experiment(harness::resolve_config(kv)));
        }
        for (std::size_t r = 0; r < results[0].runs.size(); ++r) {
            ++compared;
            const auto a = slurp(fs::path(results[0].directory) / results[0].runs[r].csv);
            const auto b = slurp(fs::path(results[1].directory) / results[1].runs[r].csv);
            if (a != b || a.empty()) ++differ;
        }
    }
    fs::remove_all(root);
    Outcome o;
    o.pass = compared > 0 && differ == 0;
    o.detail = std::to_string(compared) + " per-run CSVs compared across two invocations, " + std::to_string(differ) +
               " differ";
    return o;
}

}  // namespace

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all = {
        {1, "zero violations for every shield, tuple and seed", true, zero_violations},
        {2, "unshielded quadrotor violates the specification", true, unshielded_failure},
        {3, "containment matches the support-function oracle", false, containment},
        {4, "projection matches the grid oracle and passes phi", false, projection},
        {5, "continuous masking contract", false, masking},
        {6, "shielded MDP closed form matches simulation", false, shielded_mdp},
        {7, "replacement sampling is uniform over safe actions", false, replacement_uniformity},
        {8, "default networks pass finite-difference checks", false, gradients},
        {9, "shielded DQN closes half the gap to the failsafe return", true, learning_progress},
        {10, "identical config and seed give byte-identical CSVs", true, determinism},
    };
    return all;
}

}  // namespace safeshield::oracles
