#include "safeshield/geom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "safeshield/errors.hpp"

namespace safeshield::geom {

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require(bool cond, const char* what) {
    if (!cond) throw InputError(what);
}

}  // namespace

// ---------------------------------------------------------------------------

Box::Box(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    require(lower_.size() == upper_.size(), "Box: lower/upper dimension mismatch");
    require(all_finite(lower_) && all_finite(upper_), "Box: non-finite bound");
    require((lower_.array() <= upper_.array()).all(), "Box: lower > upper");
}

Box Box::symmetric(const Vector& center, const Vector& halfwidths) {
    return Box(center - halfwidths, center + halfwidths);
}

bool Box::contains(const Vector& x, double tol) const {
    require(x.size() == dim(), "Box::contains: dimension mismatch");
    return ((x.array() >= lower_.array() - tol) && (x.array() <= upper_.array() + tol)).all();
}

Vector Box::clamp(const Vector& x) const {
    require(x.size() == dim(), "Box::clamp: dimension mismatch");
    return x.cwiseMax(lower_).cwiseMin(upper_);
}

Zonotope::Zonotope(Vector center, Matrix generators)
    : center_(std::move(center)), generators_(std::move(generators)) {
    require(center_.size() == generators_.rows(), "Zonotope: center/generator dimension mismatch");
    require(all_finite(center_) && all_finite(generators_), "Zonotope: non-finite entry");
}

Zonotope Zonotope::from_box(const Box& box) {
    return Zonotope(box.center(), box.halfwidths().asDiagonal().toDenseMatrix());
}

Vector Zonotope::point(const Vector& coefficients) const {
    require(coefficients.size() == order(), "Zonotope::point: coefficient count mismatch");
    return center_ + generators_ * coefficients;
}

HPolytope::HPolytope(Matrix C, Vector q) : C_(std::move(C)), q_(std::move(q)) {
    require(C_.rows() == q_.size(), "HPolytope: row count of C differs from length of q");
    require(all_finite(C_) && all_finite(q_), "HPolytope: non-finite entry");
    for (Eigen::Index i = 0; i < C_.rows(); ++i) {
        if (C_.row(i).cwiseAbs().maxCoeff() == 0.0)
            throw InputError("HPolytope: all-zero row " + std::to_string(i));
    }
}

HPolytope HPolytope::from_box(const Box& box) {
    const auto n = box.dim();
    Matrix C(2 * n, n);
    Vector q(2 * n);
    C.topRows(n) = Matrix::Identity(n, n);
    C.bottomRows(n) = -Matrix::Identity(n, n);
    q.head(n) = box.upper();
    q.tail(n) = -box.lower();
    return HPolytope(std::move(C), std::move(q));
}

HPolytope HPolytope::intersect(const HPolytope& other) const {
    if (rows() == 0) return other;
    if (other.rows() == 0) return *this;
    require(dim() == other.dim(), "HPolytope::intersect: dimension mismatch");
    Matrix C(rows() + other.rows(), dim());
    Vector q(rows() + other.rows());
    C << C_, other.C_;
    q << q_, other.q_;
    return HPolytope(std::move(C), std::move(q));
}

// ---------------------------------------------------------------------------

Zonotope affine_map(const Zonotope& z, const Matrix& A, const Vector& b) {
    if (A.cols() != z.dim()) throw InputError("affine_map: A column count differs from zonotope dimension");
    if (b.size() != A.rows()) throw InputError("affine_map: offset length differs from A row count");
    return Zonotope(A * z.center() + b, A * z.generators());
}

Vector containment_margins(const Zonotope& z, const HPolytope& p, double slack) {
    if (z.dim() != p.dim()) throw InputError("zonotope_in_polytope: dimension mismatch");
    Vector support = p.C() * z.center();
    if (z.order() > 0) support += (p.C() * z.generators()).cwiseAbs().rowwise().sum();
    return (p.q().array() - slack).matrix() - support;
}

bool zonotope_in_polytope(const Zonotope& z, const HPolytope& p, double slack) {
    const Vector margins = containment_margins(z, p, slack);
    return margins.size() == 0 || margins.minCoeff() >= 0.0;
}

bool point_in_polytope(const Vector& x, const HPolytope& p, double tol) {
    if (x.size() != p.dim()) throw InputError("point_in_polytope: dimension mismatch");
    if (p.rows() == 0) return true;
    return ((p.C() * x - p.q()).array() <= tol).all();
}

double box_volume(const Box& b) { return (b.upper() - b.lower()).prod(); }

CenteredBox max_centered_box(const HPolytope& p, const Vector& center,
                             const Vector& template_halfwidths, double tol) {
    if (center.size() != p.dim() || template_halfwidths.size() != p.dim())
        throw InputError("max_centered_box: dimension mismatch");
    if (!(template_halfwidths.array() > 0.0).all())
        throw PreconditionError("max_centered_box: template halfwidths must be positive");

    const Vector slack = p.q() - p.C() * center;
    const Vector reach = p.C().cwiseAbs() * template_halfwidths;
    double scale = 1.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        if (slack(i) < -tol)
            throw PreconditionError("max_centered_box: center violates row " + std::to_string(i));
        if (reach(i) > 0.0) scale = std::min(scale, std::max(0.0, slack(i)) / reach(i));
    }
    scale = std::clamp(scale, 0.0, 1.0);
    return {scale, Box::symmetric(center, scale * template_halfwidths)};
}

// ---------------------------------------------------------------------------

double Polygon::area() const {
    double twice = 0.0;
    const auto n = vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = vertices[i];
        const auto& b = vertices[(i + 1) % n];
        twice += a.x() * b.y() - a.y() * b.x();
    }
    return 0.5 * std::abs(twice);
}

Polygon polygon_from_box(const Box& box) {
    require(box.dim() == 2, "polygon_from_box: box must be two-dimensional");
    const auto& lo = box.lower();
    const auto& hi = box.upper();
    return Polygon{{{lo(0), lo(1)}, {hi(0), lo(1)}, {hi(0), hi(1)}, {lo(0), hi(1)}}};
}

Polygon clip(const Polygon& poly, const Eigen::Vector2d& normal, double offset) {
    Polygon out;
    const auto n = poly.vertices.size();
    if (n == 0) return out;
    out.vertices.reserve(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d& a = poly.vertices[i];
        const Eigen::Vector2d& b = poly.vertices[(i + 1) % n];
        const double fa = normal.dot(a) - offset;
        const double fb = normal.dot(b) - offset;
        if (fa <= 0.0) out.vertices.push_back(a);
        if ((fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0)) {
            const double t = fa / (fa - fb);
            out.vertices.push_back(a + t * (b - a));
        }
    }
    // Collapse coincident neighbours produced by clipping through a vertex.
    Polygon cleaned;
    for (const auto& v : out.vertices) {
        if (cleaned.vertices.empty() || (v - cleaned.vertices.back()).norm() > 1e-14)
            cleaned.vertices.push_back(v);
    }
    while (cleaned.vertices.size() > 1 &&
           (cleaned.vertices.front() - cleaned.vertices.back()).norm() <= 1e-14)
        cleaned.vertices.pop_back();
    return cleaned;
}

Polygon polygon_from_polytope(const HPolytope& p, const Box& box) {
    require(p.dim() == 2 && box.dim() == 2, "polygon_from_polytope: expected two dimensions");
    Polygon poly = polygon_from_box(box);
    for (Eigen::Index i = 0; i < p.rows() && !poly.empty(); ++i)
        poly = clip(poly, Eigen::Vector2d(p.C()(i, 0), p.C()(i, 1)), p.q()(i));
    return poly;
}

// ---------------------------------------------------------------------------

namespace {

std::string next_content_line(std::istream& in, int& line_no) {
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        return line;
    }
    throw ParseError("safe-set file: unexpected end of input after line " + std::to_string(line_no));
}

}  // namespace

HPolytope read_polytope(std::istream& in) {
    int line_no = 0;
    std::istringstream header(next_content_line(in, line_no));
    long rows = -1;
    long dim = -1;
    if (!(header >> rows >> dim) || rows < 0 || dim <= 0)
        throw ParseError("safe-set file: bad header on line " + std::to_string(line_no));
    Matrix C(rows, dim);
    Vector q(rows);
    for (long i = 0; i < rows; ++i) {
        std::istringstream row(next_content_line(in, line_no));
        for (long j = 0; j <= dim; ++j) {
            double v = 0.0;
            if (!(row >> v))
                throw ParseError("safe-set file: expected " + std::to_string(dim + 1) +
                                 " numbers on line " + std::to_string(line_no));
            if (j < dim) C(i, j) = v;
            else q(i) = v;
        }
        std::string extra;
        if (row >> extra)
            throw ParseError("safe-set file: trailing token '" + extra + "' on line " +
                             std::to_string(line_no));
    }
    try {
        return HPolytope(std::move(C), std::move(q));
    } catch (const InputError& e) {
        throw ParseError(std::string("safe-set file: ") + e.what());
    }
}

HPolytope read_polytope_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open safe-set file '" + path + "'");
    return read_polytope(in);
}

void write_polytope(std::ostream& out, const HPolytope& p, const std::string& comment) {
    if (!comment.empty()) {
        std::istringstream lines(comment);
        std::string line;
        while (std::getline(lines, line)) out << "# " << line << '\n';
    }
    out << p.rows() << ' ' << p.dim() << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.dim(); ++j) out << p.C()(i, j) << ' ';
        out << p.q()(i) << '\n';
    }
}

void write_polytope_file(const std::string& path, const HPolytope& p, const std::string& comment) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write safe-set file '" + path + "'");
    write_polytope(out, p, comment);
}

}  // namespace safeshield::geom
