#include "safeshield/safety.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "safeshield/errors.hpp"

namespace safeshield::safety {

using geom::LpStatus;

Vector FailsafeController::operator()(const Vector& s) const {
    return saturation.clamp(gain * (s - state_ref) + action_ref);
}

Box default_spec_box(const env::EnvSpec& spec) {
    if (spec.kind == env::EnvKind::pendulum)
        return Box((Vector(2) << -0.8, -4.0).finished(), (Vector(2) << 0.8, 4.0).finished());
    Vector lo(6), hi(6);
    lo << -1.0, 0.5, -1.0, -1.0, -0.3, -2.0;
    hi << 1.0, 1.5, 1.0, 1.0, 0.3, 2.0;
    return Box(lo, hi);
}

env::LinearModel model_for(const env::EnvSpec& spec, const Box& spec_box) {
    if (spec_box.dim() != spec.state_dim()) throw ConfigError("spec box dimension does not match the state");
    const double theta_bound =
        spec.kind == env::EnvKind::pendulum ? std::max(-spec_box.lower()(0), spec_box.upper()(0)) : 0.0;
    return env::verification_model(spec, theta_bound);
}

Matrix dlqr(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
            int max_iterations, double tol) {
    if (A.rows() != A.cols() || B.rows() != A.rows() || Q.rows() != A.rows() ||
        R.rows() != B.cols())
        throw InputError("dlqr: inconsistent dimensions");
    Matrix P = Q;
    for (int i = 0; i < max_iterations; ++i) {
        const Matrix BtP = B.transpose() * P;
        const Matrix gain = (R + BtP * B).ldlt().solve(BtP * A);
        const Matrix next = Q + A.transpose() * P * (A - B * gain);
        const double change = (next - P).cwiseAbs().maxCoeff();
        P = 0.5 * (next + next.transpose());
        if (change <= tol * std::max(1.0, P.cwiseAbs().maxCoeff())) break;
    }
    const Matrix BtP = B.transpose() * P;
    return -(R + BtP * B).ldlt().solve(BtP * A);
}

FailsafeController default_failsafe(const env::EnvSpec& spec, const env::LinearModel& model) {
    Matrix Q;
    Matrix R;
    if (spec.kind == env::EnvKind::pendulum) {
        Q = Vector((Vector(2) << 1.0, 0.1).finished()).asDiagonal();
        R = Matrix::Constant(1, 1, 1e-3);
    } else {
        Q = Vector((Vector(6) << 1.0, 1.0, 1.0, 1.0, 0.1, 0.01).finished()).asDiagonal();
        R = Vector((Vector(2) << 1.0, 1.0).finished()).asDiagonal();
    }
    FailsafeController c;
    c.gain = dlqr(model.A_d, model.B_d, Q, R);
    c.state_ref = spec.equilibrium;
    c.action_ref = spec.equilibrium_action;
    c.saturation = spec.action_box;
    return c;
}

// ---------------------------------------------------------------------------

namespace {

// Disturbance-plus-remainder zonotope in state space: center and generators.
struct StateNoise {
    Vector center;
    Matrix generators;
};

StateNoise state_noise(const env::LinearModel& model, const Box& W) {
    const auto n = model.A_d.rows();
    if (W.dim() != model.E_d.cols()) throw InputError("disturbance box dimension does not match E_d");
    std::vector<Vector> cols;
    const Vector rw = W.halfwidths();
    for (Eigen::Index j = 0; j < rw.size(); ++j) {
        const Vector g = model.E_d.col(j) * rw(j);
        if (g.cwiseAbs().maxCoeff() > 0.0) cols.push_back(g);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (model.remainder(i) > 0.0) {
            Vector g = Vector::Zero(n);
            g(i) = model.remainder(i);
            cols.push_back(g);
        }
    }
    StateNoise noise;
    noise.center = model.E_d * W.center();
    noise.generators = Matrix(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) noise.generators.col(static_cast<Eigen::Index>(j)) = cols[j];
    return noise;
}

Vector support(const Matrix& rows, const StateNoise& noise) {
    Vector s = rows * noise.center;
    if (noise.generators.cols() > 0) s += (rows * noise.generators).cwiseAbs().rowwise().sum();
    return s;
}

void append_row(std::vector<Vector>& rows, std::vector<double>& rhs, const Vector& row, double b) {
    rows.push_back(row);
    rhs.push_back(b);
}

HPolytope assemble(const std::vector<Vector>& rows, const std::vector<double>& rhs, Eigen::Index n) {
    Matrix C(static_cast<Eigen::Index>(rows.size()), n);
    Vector q(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        C.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
        q(static_cast<Eigen::Index>(i)) = rhs[i];
    }
    return HPolytope(std::move(C), std::move(q));
}

}  // namespace

SafeSet compute_invariant_set(const env::LinearModel& model, const FailsafeController& controller,
                              const HPolytope& spec_box, const Box& disturbance,
                              const InvariantSetOptions& options) {
    model.validate();
    const auto n = model.A_d.rows();
    if (spec_box.dim() != n || controller.gain.cols() != n || controller.gain.rows() != model.B_d.cols())
        throw InputError("compute_invariant_set: dimension mismatch");

    const Matrix& K = controller.gain;
    const Vector& s_ref = controller.state_ref;
    const Vector& a_ref = controller.action_ref;
    const Matrix closed_loop = model.A_d + model.B_d * K;
    const StateNoise noise = state_noise(model, disturbance);

    // The reference must be a fixed point of the nominal closed loop.
    const Vector drift = model.A_d * s_ref + model.B_d * a_ref + model.c_off - s_ref;
    if (drift.cwiseAbs().maxCoeff() > 1e-9)
        throw InputError("compute_invariant_set: reference is not an equilibrium of the model");

    // Base constraints in deviation coordinates x = s - s*.
    std::vector<Vector> base_rows;
    std::vector<double> base_rhs;
    for (Eigen::Index i = 0; i < spec_box.rows(); ++i)
        append_row(base_rows, base_rhs, spec_box.C().row(i).transpose(),
                   spec_box.q()(i) - spec_box.C().row(i).dot(s_ref));
    const Box& U = controller.saturation;
    for (Eigen::Index j = 0; j < K.rows(); ++j) {
        if (K.row(j).cwiseAbs().maxCoeff() == 0.0) continue;
        append_row(base_rows, base_rhs, K.row(j).transpose(), U.upper()(j) - a_ref(j));
        append_row(base_rows, base_rhs, -K.row(j).transpose(), a_ref(j) - U.lower()(j));
    }
    for (double b : base_rhs)
        if (b < 0.0) throw CertificateError("compute_invariant_set: equilibrium violates the constraints");

    const HPolytope base = assemble(base_rows, base_rhs, n);
    std::vector<Vector> rows = base_rows;
    std::vector<double> rhs = base_rhs;

    Matrix layer = base.C();                          // F0 A_K^t
    Vector accumulated = Vector::Zero(base.rows());   // sum_{j<t} h_D(F0 A_K^j) + t * margin
    bool converged = false;
    for (int t = 1; t <= options.max_iterations; ++t) {
        accumulated += support(layer, noise) + Vector::Constant(base.rows(), options.step_margin);
        layer = layer * closed_loop;
        const Vector layer_rhs = base.q() - accumulated;
        const HPolytope current = assemble(rows, rhs, n);
        std::vector<Vector> fresh_rows;
        std::vector<double> fresh_rhs;
        for (Eigen::Index i = 0; i < layer.rows(); ++i) {
            const Vector row = layer.row(i).transpose();
            if (layer_rhs(i) < 0.0)
                throw CertificateError("compute_invariant_set: iteration collapsed (equilibrium excluded after " +
                                       std::to_string(t) + " steps)");
            if (row.cwiseAbs().maxCoeff() < 1e-300) continue;
            const auto lp = geom::maximize(current, row);
            if (lp.status == LpStatus::optimal && lp.value <= layer_rhs(i) + options.fixed_point_tol)
                continue;
            if (lp.status == LpStatus::infeasible)
                throw CertificateError("compute_invariant_set: iterate became empty");
            append_row(fresh_rows, fresh_rhs, row, layer_rhs(i));
        }
        if (fresh_rows.empty()) {
            converged = true;
            break;
        }
        for (std::size_t k = 0; k < fresh_rows.size(); ++k) append_row(rows, rhs, fresh_rows[k], fresh_rhs[k]);
    }
    if (!converged)
        throw ConvergenceError("compute_invariant_set: no fixed point within " +
                               std::to_string(options.max_iterations) + " iterations");

    HPolytope deviation = geom::remove_redundant(assemble(rows, rhs, n), 1e-10);
    if (geom::inscribed_depth(deviation) <= 1e-9)
        throw CertificateError("compute_invariant_set: invariant set is (near-)empty");

    // Back to absolute coordinates.
    Vector q = deviation.q() + deviation.C() * s_ref;
    return SafeSet{HPolytope(deviation.C(), std::move(q)), SetSource::computed};
}

SafeSet load_safe_set(const std::string& path) {
    SafeSet set{geom::read_polytope_file(path), SetSource::loaded};
    if (set.polytope.rows() == 0) throw ParseError("safe-set file '" + path + "' has no halfspaces");
    if (geom::inscribed_depth(set.polytope) <= 0.0)
        throw ParseError("safe-set file '" + path + "' describes an empty set");
    try {
        (void)geom::bounding_box(set.polytope);
    } catch (const InputError&) {
        throw ParseError("safe-set file '" + path + "' describes an unbounded set");
    }
    return set;
}

void save_safe_set(const std::string& path, const SafeSet& set, const std::string& comment) {
    geom::write_polytope_file(path, set.polytope, comment);
}

void check_safe_set(const SafeSet& set, const Vector& equilibrium, const HPolytope& spec_box) {
    if (!geom::point_in_polytope(equilibrium, set.polytope, 0.0))
        throw CertificateError("safe set does not contain the equilibrium state");
    try {
        (void)geom::bounding_box(set.polytope);
    } catch (const InputError&) {
        throw CertificateError("safe set is unbounded");
    }
    if (!geom::polytope_contains(spec_box, set.polytope, 1e-9))
        throw CertificateError("safe set is not contained in the safety specification box");
}

// ---------------------------------------------------------------------------

SafetyContext::SafetyContext(env::LinearModel model, SafeSet safe_set, Box disturbance, Box action_box,
                             FailsafeController failsafe)
    : model_(std::move(model)),
      set_(std::move(safe_set)),
      disturbance_(std::move(disturbance)),
      action_box_(std::move(action_box)),
      failsafe_(std::move(failsafe)) {
    model_.validate();
    const auto& C = set_.polytope.C();
    if (C.cols() != model_.A_d.rows()) throw InputError("SafetyContext: safe set dimension mismatch");
    if (action_box_.dim() != model_.B_d.cols()) throw InputError("SafetyContext: action box dimension mismatch");
    const StateNoise noise = state_noise(model_, disturbance_);
    generators_ = noise.generators;
    w_center_term_ = noise.center;
    CA_ = C * model_.A_d;
    CB_ = C * model_.B_d;
    offset_ = (set_.polytope.q().array() - geom::kContainmentSlack).matrix() -
              C * (model_.c_off + w_center_term_);
    if (generators_.cols() > 0) offset_ -= (C * generators_).cwiseAbs().rowwise().sum();
}

geom::Zonotope SafetyContext::reachable_set(const Vector& s, const Vector& a) const {
    return geom::Zonotope(model_.A_d * s + model_.B_d * a + model_.c_off + w_center_term_, generators_);
}

double SafetyContext::margin(const Vector& s, const Vector& a) const {
    if (s.size() != CA_.cols() || a.size() != CB_.cols()) throw InputError("phi: dimension mismatch");
    return (offset_ - CA_ * s - CB_ * a).minCoeff();
}

bool SafetyContext::phi(const Vector& s, const Vector& a) const {
    if (!action_box_.contains(a)) return false;
    return margin(s, a) >= 0.0;
}

HPolytope SafetyContext::safe_action_polytope(const Vector& s, double extra_tightening) const {
    const Vector h = offset_ - CA_ * s - Vector::Constant(offset_.size(), extra_tightening);
    const auto m = action_box_.dim();
    std::vector<Eigen::Index> keep;
    bool infeasible = false;
    for (Eigen::Index i = 0; i < CB_.rows(); ++i) {
        if (CB_.row(i).cwiseAbs().maxCoeff() == 0.0) {
            if (h(i) < 0.0) infeasible = true;
            continue;
        }
        keep.push_back(i);
    }
    const auto extra = infeasible ? 1 : 0;
    Matrix H(static_cast<Eigen::Index>(keep.size()) + 2 * m + extra, m);
    Vector b(H.rows());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        H.row(static_cast<Eigen::Index>(r)) = CB_.row(keep[r]);
        b(static_cast<Eigen::Index>(r)) = h(keep[r]);
    }
    const auto base = static_cast<Eigen::Index>(keep.size());
    H.block(base, 0, m, m) = Matrix::Identity(m, m);
    H.block(base + m, 0, m, m) = -Matrix::Identity(m, m);
    b.segment(base, m) = action_box_.upper();
    b.segment(base + m, m) = -action_box_.lower();
    if (infeasible) {
        // An action-independent row fails: encode the empty set explicitly.
        H.row(H.rows() - 1) = Matrix::Identity(m, m).row(0);
        b(H.rows() - 1) = action_box_.lower()(0) - 1.0;
    }
    return HPolytope(std::move(H), std::move(b));
}

Vector SafetyContext::failsafe_action(const Vector& s) const {
    Vector a = failsafe_(s);
    if (!phi(s, a))
        throw CertificateError("failsafe action rejected by the safety function (margin " +
                               std::to_string(margin(s, a)) + ")");
    return a;
}

bool SafetyContext::in_safe_set(const Vector& s, double tol) const {
    return geom::point_in_polytope(s, set_.polytope, tol);
}

// ---------------------------------------------------------------------------

PolytopeSampler::PolytopeSampler(const HPolytope& p, Vector start, std::uint64_t seed)
    : p_(p), x_(std::move(start)), rng_(seed) {}

Vector PolytopeSampler::next(Vector* boundary) {
    std::normal_distribution<double> normal;
    Vector u(x_.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = normal(rng_);
    u.normalize();
    const Vector cu = p_.C() * u;
    const Vector slack = p_.q() - p_.C() * x_;
    double t_hi = std::numeric_limits<double>::infinity();
    double t_lo = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < cu.size(); ++i) {
        if (cu(i) > 1e-15) t_hi = std::min(t_hi, std::max(0.0, slack(i)) / cu(i));
        else if (cu(i) < -1e-15) t_lo = std::max(t_lo, -std::max(0.0, slack(i)) / -cu(i));
    }
    if (!std::isfinite(t_hi) || !std::isfinite(t_lo)) throw InputError("PolytopeSampler: unbounded polytope");
    if (boundary) *boundary = x_ + t_hi * u;
    x_ += std::uniform_real_distribution<double>(t_lo, t_hi)(rng_) * u;
    return x_;
}

bool verify_failsafe(const SafeSet& set, const FailsafeController& controller,
                     const env::LinearModel& model, const Box& disturbance,
                     const VerifyOptions& options) {
    const HPolytope& P = set.polytope;
    const SafetyContext ctx(model, set, disturbance, controller.saturation, controller);
    if (!geom::point_in_polytope(controller.state_ref, P, 0.0)) return false;

    const Matrix& K = controller.gain;
    const Vector feedforward = controller.action_ref - K * controller.state_ref;

    // Does the failsafe saturate anywhere on the set?
    bool saturates = false;
    for (Eigen::Index j = 0; j < K.rows() && !saturates; ++j) {
        const Vector row = K.row(j).transpose();
        const auto hi = geom::maximize(P, row);
        const auto lo = geom::maximize(P, -row);
        if (hi.status != LpStatus::optimal || lo.status != LpStatus::optimal) return false;
        saturates = hi.value + feedforward(j) > controller.saturation.upper()(j) ||
                    -lo.value + feedforward(j) < controller.saturation.lower()(j);
    }

    if (!saturates) {
        // Affine closed loop on P: row-wise worst case by LP is exact.
        const StateNoise noise = state_noise(model, disturbance);
        const Matrix& C = P.C();
        const Matrix row_dynamics = C * (model.A_d + model.B_d * K);
        const Vector constant = C * (model.B_d * feedforward + model.c_off) + support(C, noise);
        for (Eigen::Index i = 0; i < C.rows(); ++i) {
            const auto lp = geom::maximize(P, row_dynamics.row(i).transpose());
            if (lp.status != LpStatus::optimal) return false;
            if (lp.value + constant(i) > P.q()(i) - geom::kContainmentSlack) return false;
        }
        return true;
    }

    auto passes = [&](const Vector& s) { return ctx.phi(s, controller(s)); };
    const Box bbox = geom::bounding_box(P);
    if (P.dim() == 2) {
        for (const auto& v : geom::polygon_from_polytope(P, bbox).vertices)
            if (!passes(Vector(v))) return false;
    }
    PolytopeSampler sampler(P, controller.state_ref, options.seed);
    Vector boundary;
    for (int k = 0; k < options.samples; ++k) {
        const Vector x = sampler.next(&boundary);
        if (!passes(x) || !passes(boundary)) return false;
    }
    return true;
}

}  // namespace safeshield::safety
