#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "safeshield/errors.hpp"
#include "safeshield/geom.hpp"

using namespace safeshield;
using namespace safeshield::geom;

namespace {

// Support of the zonotope in direction d by enumerating every vertex candidate
// c + G b with b in {-1, 1}^p.
double support_by_vertices(const Zonotope& z, const Vector& d) {
    const auto p = z.order();
    double best = -std::numeric_limits<double>::infinity();
    for (long mask = 0; mask < (1L << p); ++mask) {
        Vector b(p);
        for (Eigen::Index j = 0; j < p; ++j) b(j) = (mask >> j) & 1 ? 1.0 : -1.0;
        best = std::max(best, d.dot(z.point(b)));
    }
    return best;
}

bool contained_by_vertices(const Zonotope& z, const HPolytope& p, double slack) {
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        if (support_by_vertices(z, p.C().row(i).transpose()) > p.q()(i) - slack) return false;
    return true;
}

bool box_inside(const HPolytope& p, const Vector& c, const Vector& h, double scale) {
    const auto n = c.size();
    for (long mask = 0; mask < (1L << n); ++mask) {
        Vector x = c;
        for (Eigen::Index j = 0; j < n; ++j) x(j) += ((mask >> j) & 1 ? 1.0 : -1.0) * scale * h(j);
        if (!point_in_polytope(x, p, 0.0)) return false;
    }
    return true;
}

}  // namespace

TEST_SUITE("geom") {

TEST_CASE("box basics") {
    const Box b((Vector(2) << -1.0, 0.0).finished(), (Vector(2) << 3.0, 2.0).finished());
    CHECK(b.center().isApprox((Vector(2) << 1.0, 1.0).finished()));
    CHECK(b.halfwidths().isApprox((Vector(2) << 2.0, 1.0).finished()));
    CHECK(b.contains((Vector(2) << 3.0, 0.0).finished()));
    CHECK_FALSE(b.contains((Vector(2) << 3.1, 0.0).finished()));
    CHECK(b.clamp((Vector(2) << 5.0, -1.0).finished()).isApprox((Vector(2) << 3.0, 0.0).finished()));
    CHECK(box_volume(b) == doctest::Approx(8.0));
    CHECK_THROWS_AS(Box((Vector(1) << 1.0).finished(), (Vector(1) << 0.0).finished()), InputError);
}

TEST_CASE("polytope rejects degenerate rows") {
    Matrix C(2, 2);
    C << 1.0, 0.0, 0.0, 0.0;
    CHECK_THROWS_AS(HPolytope(C, Vector::Ones(2)), InputError);
    C(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(HPolytope(C, Vector::Ones(2)), InputError);
}

TEST_CASE("unit box contains a small centered zonotope") {
    const HPolytope p = HPolytope::from_box(Box::symmetric(Vector::Zero(2), Vector::Ones(2)));
    const Zonotope z(Vector::Zero(2), 0.5 * Matrix::Identity(2, 2));
    CHECK(zonotope_in_polytope(z, p));
    const Zonotope shifted((Vector(2) << 0.6, 0.0).finished(), 0.5 * Matrix::Identity(2, 2));
    CHECK_FALSE(zonotope_in_polytope(shifted, p));
}

TEST_CASE("containment agrees with vertex enumeration on random pairs") {
    std::mt19937_64 rng(11);
    int mismatches = 0;
    int positives = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const Eigen::Index n = 2 + trial % 3;
        const Eigen::Index order = 1 + trial % 5;
        const Eigen::Index rows = n + 1 + trial % 6;
        const Matrix C = fixtures::random_matrix(rows, n, rng);
        const Vector q = Vector::Constant(rows, 1.0) + 0.5 * fixtures::random_matrix_entry_vector(rows, rng).cwiseAbs();
        const HPolytope p(C, q);
        const Zonotope z(0.2 * fixtures::random_matrix_entry_vector(n, rng),
                         0.15 * fixtures::random_matrix(n, order, rng));
        const bool fast = zonotope_in_polytope(z, p);
        positives += fast ? 1 : 0;
        if (fast != contained_by_vertices(z, p, kContainmentSlack)) ++mismatches;
    }
    CHECK(mismatches == 0);
    CHECK(positives > 50);
    CHECK(positives < 450);
}

TEST_CASE("affine map of a zonotope") {
    const Zonotope z((Vector(2) << 1.0, 2.0).finished(), Matrix::Identity(2, 2));
    Matrix A(2, 2);
    A << 0.0, 1.0, 2.0, 0.0;
    const Zonotope m = affine_map(z, A, Vector::Ones(2));
    CHECK(m.center().isApprox((Vector(2) << 3.0, 3.0).finished()));
    CHECK(m.generators().isApprox(A));
}

TEST_CASE("max centered box matches bisection") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index n = 1 + trial % 3;
        const Eigen::Index rows = 2 * n + trial % 4;
        const Matrix C = fixtures::random_matrix(rows, n, rng);
        const Vector q = 0.1 + fixtures::random_matrix_entry_vector(rows, rng).cwiseAbs().array();
        const HPolytope p(C, q);
        const Vector h = 0.5 + fixtures::random_matrix_entry_vector(n, rng).cwiseAbs().array();
        const CenteredBox got = max_centered_box(p, Vector::Zero(n), h, 0.0);
        double lo = 0.0, hi = 1.0;
        if (box_inside(p, Vector::Zero(n), h, 1.0)) {
            lo = 1.0;
        } else {
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                (box_inside(p, Vector::Zero(n), h, mid) ? lo : hi) = mid;
            }
        }
        CHECK(std::abs(got.scale - lo) < 1e-9);
        CHECK(got.box.upper().isApprox(got.scale * h, 1e-12));
    }
}

TEST_CASE("max centered box rejects an outside center") {
    const HPolytope p = HPolytope::from_box(Box::symmetric(Vector::Zero(1), Vector::Ones(1)));
    CHECK_THROWS_AS(max_centered_box(p, Vector::Constant(1, 2.0), Vector::Ones(1)), PreconditionError);
}

TEST_CASE("polygon clipping") {
    const Box unit(Vector::Zero(2), Vector::Ones(2));
    const Polygon sq = polygon_from_box(unit);
    CHECK(sq.area() == doctest::Approx(1.0));
    const Polygon tri = clip(sq, Eigen::Vector2d(1.0, 1.0), 1.0);
    CHECK(tri.vertices.size() == 3);
    CHECK(tri.area() == doctest::Approx(0.5));
    CHECK(clip(sq, Eigen::Vector2d(1.0, 0.0), -0.5).empty());

    // Monte-Carlo oracle for the area of a random polygon.
    std::mt19937_64 rng(3);
    const Matrix C = fixtures::random_matrix(5, 2, rng);
    const Vector q = Vector::Constant(5, 0.3);
    const HPolytope p(C, q);
    const Box big = Box::symmetric(Vector::Zero(2), Vector::Ones(2));
    const Polygon poly = polygon_from_polytope(p, big);
    int inside = 0;
    const int samples = 200000;
    for (int i = 0; i < samples; ++i)
        inside += point_in_polytope(fixtures::uniform_in(big, rng), p, 0.0) ? 1 : 0;
    const double mc = 4.0 * inside / samples;
    CHECK(poly.area() == doctest::Approx(mc).epsilon(0.03));
}

TEST_CASE("polytope text round trip") {
    Matrix C(3, 2);
    C << 1.0, 0.0, 0.0, 1.0, -1.0, -1.0;
    const Vector q = (Vector(3) << 1.0 / 3.0, 2.5, 1e-17).finished();
    std::stringstream ss;
    write_polytope(ss, HPolytope(C, q), {"a comment"});
    const HPolytope back = read_polytope(ss);
    CHECK(back.C() == C);
    CHECK(back.q() == q);
}

TEST_CASE("polytope parse errors") {
    std::stringstream truncated("2 2\n1 0 1\n");
    CHECK_THROWS_AS(read_polytope(truncated), ParseError);
    std::stringstream garbage("2 x\n");
    CHECK_THROWS_AS(read_polytope(garbage), ParseError);
    std::stringstream zero_row("1 2\n0 0 1\n");
    CHECK_THROWS_AS(read_polytope(zero_row), ParseError);
}

}  // TEST_SUITE
