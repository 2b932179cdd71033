// Linear programs over halfspace polytopes.
//
// max c.x s.t. H x <= h is solved through its dual
//     min h.y  s.t.  H^T y = c,  y >= 0,
// which has only d equality rows (d = state or action dimension, at most a
// handful) and one column per halfspace. A revised simplex with an explicit
// d x d basis is therefore cheap even for polytopes with thousands of rows.
// The primal maximizer is the vector of simplex multipliers at optimality.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "safeshield/errors.hpp"
#include "safeshield/geom.hpp"

namespace safeshield::geom {

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kCostTol = 1e-10;

enum class SimplexOutcome { optimal, unbounded, iteration_limit };

// Standard-form revised simplex on columns [A | I] where the last `rows`
// columns are artificials. Artificials never re-enter once they leave; an
// artificial that stays basic in phase two is pinned at zero.
struct Simplex {
    const Matrix& A;     // rows x m (structural columns only)
    Vector b;            // rows, nonnegative
    Eigen::Index rows;
    Eigen::Index m;
    std::vector<Eigen::Index> basis;  // column ids; id >= m means artificial (id - m)
    Vector x_basic;

    Vector col_norm;

    Simplex(const Matrix& a, const Vector& rhs) : A(a), b(rhs), rows(a.rows()), m(a.cols()) {
        col_norm = A.colwise().norm().transpose().cwiseMax(1e-300);
        basis.resize(static_cast<std::size_t>(rows));
        for (Eigen::Index i = 0; i < rows; ++i) basis[static_cast<std::size_t>(i)] = m + i;
        x_basic = b;
    }

    Vector column(Eigen::Index id) const {
        if (id < m) return A.col(id);
        Vector e = Vector::Zero(rows);
        e(id - m) = 1.0;
        return e;
    }

    Matrix basis_matrix() const {
        Matrix B(rows, rows);
        for (Eigen::Index i = 0; i < rows; ++i) B.col(i) = column(basis[static_cast<std::size_t>(i)]);
        return B;
    }

    // cost(id) for structural ids; artificial costs supplied separately.
    template <class CostFn>
    SimplexOutcome run(CostFn cost, bool allow_artificial_entering, Vector& multipliers) {
        const int max_iter = static_cast<int>(50 * (m + rows) + 1000);
        int degenerate_streak = 0;
        for (int iter = 0; iter < max_iter; ++iter) {
            const Matrix B = basis_matrix();
            Eigen::PartialPivLU<Matrix> lu(B);
            Vector cb(rows);
            for (Eigen::Index i = 0; i < rows; ++i) cb(i) = cost(basis[static_cast<std::size_t>(i)]);
            multipliers = lu.transpose().solve(cb);

            // Pricing: Dantzig on normalized reduced costs, Bland when stalling.
            const bool bland = degenerate_streak > 25;
            Eigen::Index entering = -1;
            double best = -kCostTol;
            std::vector<char> in_basis(static_cast<std::size_t>(m + rows), 0);
            for (auto id : basis) in_basis[static_cast<std::size_t>(id)] = 1;
            const Eigen::Index limit = allow_artificial_entering ? m + rows : m;
            for (Eigen::Index j = 0; j < limit; ++j) {
                if (in_basis[static_cast<std::size_t>(j)]) continue;
                const double reduced =
                    j < m ? (cost(j) - multipliers.dot(A.col(j))) / col_norm(j)
                          : cost(j) - multipliers(j - m);
                if (reduced < -kCostTol) {
                    if (bland) {
                        entering = j;
                        break;
                    }
                    if (reduced < best) {
                        best = reduced;
                        entering = j;
                    }
                }
            }
            if (entering < 0) return SimplexOutcome::optimal;

            const Vector direction = lu.solve(column(entering));
            Eigen::Index leaving = -1;
            double ratio = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < rows; ++i) {
                const auto id = basis[static_cast<std::size_t>(i)];
                const double d = direction(i);
                // Artificials left in the basis during phase two are pinned at zero.
                const bool pinned = !allow_artificial_entering && id >= m;
                if (pinned && std::abs(d) > kPivotTol) {
                    if (ratio > 0.0 || (ratio == 0.0 && id < basis[static_cast<std::size_t>(leaving)])) {
                        ratio = 0.0;
                        leaving = i;
                    }
                    continue;
                }
                if (d > kPivotTol) {
                    const double r = std::max(0.0, x_basic(i)) / d;
                    if (r < ratio - 1e-15 ||
                        (std::abs(r - ratio) <= 1e-15 && leaving >= 0 &&
                         id < basis[static_cast<std::size_t>(leaving)])) {
                        ratio = r;
                        leaving = i;
                    }
                }
            }
            if (leaving < 0) return SimplexOutcome::unbounded;
            degenerate_streak = ratio <= 1e-14 ? degenerate_streak + 1 : 0;
            basis[static_cast<std::size_t>(leaving)] = entering;
            x_basic = basis_matrix().partialPivLu().solve(b);
        }
        return SimplexOutcome::iteration_limit;
    }
};

}  // namespace

LpResult maximize(const HPolytope& p, const Vector& objective) {
    if (objective.size() != p.dim()) throw InputError("maximize: objective dimension mismatch");
    LpResult result;
    const Eigen::Index d = p.dim();
    if (p.rows() == 0) {
        result.status = objective.isZero() ? LpStatus::optimal : LpStatus::unbounded;
        result.argmax = Vector::Zero(d);
        return result;
    }

    // Dual in standard form with nonnegative right-hand side.
    Matrix A = p.C().transpose();
    Vector b = objective;
    for (Eigen::Index i = 0; i < d; ++i) {
        if (b(i) < 0.0) {
            A.row(i) *= -1.0;
            b(i) = -b(i);
        }
    }
    const Vector& h = p.q();
    Simplex simplex(A, b);
    Vector multipliers;

    // Phase one: minimize the sum of artificials.
    const Eigen::Index m = A.cols();
    auto phase_one_cost = [m](Eigen::Index id) { return id >= m ? 1.0 : 0.0; };
    if (simplex.run(phase_one_cost, true, multipliers) == SimplexOutcome::iteration_limit)
        throw ConvergenceError("maximize: simplex phase one did not terminate");
    double infeasibility = 0.0;
    for (Eigen::Index i = 0; i < d; ++i)
        if (simplex.basis[static_cast<std::size_t>(i)] >= m) infeasibility += simplex.x_basic(i);
    if (infeasibility > 1e-9 * std::max(1.0, b.lpNorm<Eigen::Infinity>())) {
        // Dual infeasible: the primal is unbounded (or empty, which callers rule out).
        result.status = LpStatus::unbounded;
        return result;
    }

    auto phase_two_cost = [&h, m](Eigen::Index id) { return id >= m ? 0.0 : h(id); };
    const auto outcome = simplex.run(phase_two_cost, false, multipliers);
    if (outcome == SimplexOutcome::iteration_limit)
        throw ConvergenceError("maximize: simplex phase two did not terminate");
    if (outcome == SimplexOutcome::unbounded) {
        // Dual unbounded below: the primal is infeasible.
        result.status = LpStatus::infeasible;
        return result;
    }

    // Undo the row sign flips to recover the primal maximizer.
    Vector x = multipliers;
    for (Eigen::Index i = 0; i < d; ++i)
        if (objective(i) < 0.0) x(i) = -x(i);
    result.status = LpStatus::optimal;
    result.argmax = x;
    result.value = objective.dot(x);
    return result;
}

double inscribed_depth(const HPolytope& p, double cap) {
    // Variables (x, t): maximize t s.t. C x + |C_i| t <= q, t <= cap.
    const Eigen::Index d = p.dim();
    Matrix C(p.rows() + 1, d + 1);
    Vector q(p.rows() + 1);
    C.topLeftCorner(p.rows(), d) = p.C();
    C.topRightCorner(p.rows(), 1) = p.C().rowwise().norm();
    C.bottomRows(1).setZero();
    C(p.rows(), d) = 1.0;
    q.head(p.rows()) = p.q();
    q(p.rows()) = cap;
    Vector objective = Vector::Zero(d + 1);
    objective(d) = 1.0;
    const LpResult r = maximize(HPolytope(std::move(C), std::move(q)), objective);
    if (r.status != LpStatus::optimal) return -std::numeric_limits<double>::infinity();
    return r.value;
}

Box bounding_box(const HPolytope& p) {
    const Eigen::Index d = p.dim();
    Vector lower(d);
    Vector upper(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        Vector e = Vector::Zero(d);
        e(i) = 1.0;
        const LpResult hi = maximize(p, e);
        const LpResult lo = maximize(p, -e);
        if (hi.status != LpStatus::optimal || lo.status != LpStatus::optimal)
            throw InputError("bounding_box: polytope is unbounded or empty");
        upper(i) = hi.value;
        lower(i) = -lo.value;
    }
    return Box(lower, upper.cwiseMax(lower));
}

bool polytope_contains(const HPolytope& outer, const HPolytope& inner, double tol) {
    if (outer.dim() != inner.dim()) throw InputError("polytope_contains: dimension mismatch");
    for (Eigen::Index i = 0; i < outer.rows(); ++i) {
        const LpResult r = maximize(inner, outer.C().row(i).transpose());
        if (r.status == LpStatus::infeasible) return true;
        if (r.status == LpStatus::unbounded) return false;
        if (r.value > outer.q()(i) + tol) return false;
    }
    return true;
}

HPolytope remove_redundant(const HPolytope& p, double tol) {
    std::vector<Eigen::Index> keep;
    keep.reserve(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) keep.push_back(i);

    // Test each row against all other currently kept rows.
    for (Eigen::Index i = p.rows() - 1; i >= 0; --i) {
        std::vector<Eigen::Index> others;
        others.reserve(keep.size());
        for (auto k : keep)
            if (k != i) others.push_back(k);
        if (others.empty()) continue;
        Matrix C(static_cast<Eigen::Index>(others.size()), p.dim());
        Vector q(static_cast<Eigen::Index>(others.size()));
        for (std::size_t r = 0; r < others.size(); ++r) {
            C.row(static_cast<Eigen::Index>(r)) = p.C().row(others[r]);
            q(static_cast<Eigen::Index>(r)) = p.q()(others[r]);
        }
        const LpResult r = maximize(HPolytope(std::move(C), std::move(q)), p.C().row(i).transpose());
        if (r.status == LpStatus::optimal && r.value <= p.q()(i) + tol)
            keep.erase(std::find(keep.begin(), keep.end(), i));
    }
    Matrix C(static_cast<Eigen::Index>(keep.size()), p.dim());
    Vector q(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t r = 0; r < keep.size(); ++r) {
        C.row(static_cast<Eigen::Index>(r)) = p.C().row(keep[r]);
        q(static_cast<Eigen::Index>(r)) = p.q()(keep[r]);
    }
    return HPolytope(std::move(C), std::move(q));
}

}  // namespace safeshield::geom
