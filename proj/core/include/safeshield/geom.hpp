#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace safeshield::geom {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Absolute slack subtracted from every halfspace offset before a set is
/// declared contained.
inline constexpr double kContainmentSlack = 1e-9;

/// Axis-aligned box [lower, upper].
class Box {
public:
    Box() = default;
    Box(Vector lower, Vector upper);

    static Box symmetric(const Vector& center, const Vector& halfwidths);

    const Vector& lower() const { return lower_; }
    const Vector& upper() const { return upper_; }
    Eigen::Index dim() const { return lower_.size(); }
    Vector center() const { return 0.5 * (lower_ + upper_); }
    Vector halfwidths() const { return 0.5 * (upper_ - lower_); }

    bool contains(const Vector& x, double tol = 0.0) const;
    Vector clamp(const Vector& x) const;

private:
    Vector lower_;
    Vector upper_;
};

/// Centrally symmetric set {c + G b : |b|_inf <= 1}.
class Zonotope {
public:
    Zonotope() = default;
    Zonotope(Vector center, Matrix generators);

    static Zonotope from_box(const Box& box);

    const Vector& center() const { return center_; }
    const Matrix& generators() const { return generators_; }
    Eigen::Index dim() const { return center_.size(); }
    Eigen::Index order() const { return generators_.cols(); }

    /// c + G * coefficients; coefficients are not range-checked.
    Vector point(const Vector& coefficients) const;

private:
    Vector center_;
    Matrix generators_;
};

/// Halfspace polytope {x : C x <= q}. Rows are stored unnormalized.
class HPolytope {
public:
    HPolytope() = default;
    HPolytope(Matrix C, Vector q);

    static HPolytope from_box(const Box& box);

    const Matrix& C() const { return C_; }
    const Vector& q() const { return q_; }
    Eigen::Index rows() const { return C_.rows(); }
    Eigen::Index dim() const { return C_.cols(); }

    /// Stacks the rows of both polytopes (set intersection).
    HPolytope intersect(const HPolytope& other) const;

private:
    Matrix C_;
    Vector q_;
};

Zonotope affine_map(const Zonotope& z, const Matrix& A, const Vector& b);

/// Exact containment test C c + |C G| 1 <= q - slack.
bool zonotope_in_polytope(const Zonotope& z, const HPolytope& p,
                          double slack = kContainmentSlack);

/// Per-row margin q_i - slack - (C_i c + |C_i G| 1); contained iff all >= 0.
Vector containment_margins(const Zonotope& z, const HPolytope& p,
                           double slack = kContainmentSlack);

bool point_in_polytope(const Vector& x, const HPolytope& p, double tol);

double box_volume(const Box& b);

struct CenteredBox {
    double scale = 0.0;  // in [0, 1]
    Box box;
};

/// Largest box center +- scale * template_halfwidths (scale <= 1) inside p.
CenteredBox max_centered_box(const HPolytope& p, const Vector& center,
                             const Vector& template_halfwidths,
                             double tol = kContainmentSlack);

// ---------------------------------------------------------------------------
// Linear programming over halfspace polytopes.

enum class LpStatus { optimal, infeasible, unbounded };

struct LpResult {
    LpStatus status = LpStatus::infeasible;
    double value = 0.0;
    Vector argmax;
};

/// max objective . x subject to C x <= q.
LpResult maximize(const HPolytope& p, const Vector& objective);

/// Largest t with C x + t * |C_i| <= q for some x (Chebyshev-style depth).
/// Negative means empty. Capped at `cap` so the problem is always bounded.
double inscribed_depth(const HPolytope& p, double cap = 1.0);

/// Tight axis-aligned bounding box; throws InputError if p is unbounded or empty.
Box bounding_box(const HPolytope& p);

/// inner subset of outer, checked row by row with LPs over inner.
bool polytope_contains(const HPolytope& outer, const HPolytope& inner,
                       double tol = kContainmentSlack);

/// Drops rows implied by the remaining ones (within tol).
HPolytope remove_redundant(const HPolytope& p, double tol = 1e-10);

// ---------------------------------------------------------------------------
// Planar convex polygons (two-dimensional action sets).

struct Polygon {
    std::vector<Eigen::Vector2d> vertices;  // counter-clockwise, no repeats

    bool empty() const { return vertices.empty(); }
    double area() const;
};

Polygon polygon_from_box(const Box& box);

/// Intersection of a convex polygon with {x : n . x <= d}.
Polygon clip(const Polygon& poly, const Eigen::Vector2d& normal, double offset);

/// Intersection of box with every halfspace of p (p must be two-dimensional).
Polygon polygon_from_polytope(const HPolytope& p, const Box& box);

// ---------------------------------------------------------------------------
// Safe-set text format: "n d" header, then n rows of d coefficients and the
// offset. Lines starting with '#' are comments.

HPolytope read_polytope(std::istream& in);
HPolytope read_polytope_file(const std::string& path);
void write_polytope(std::ostream& out, const HPolytope& p,
                    const std::string& comment = {});
void write_polytope_file(const std::string& path, const HPolytope& p,
                         const std::string& comment = {});

}  // namespace safeshield::geom
