#pragma once

#include "nrbf/geometry.hpp"
#include "nrbf/kernels.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace nrbf {

/// Raised when a local interpolation matrix is numerically singular; carries
/// the condition-number estimate that triggered the failure.
struct ConditioningError : std::runtime_error {
    explicit ConditioningError(double kappa_estimate)
        : std::runtime_error("interpolation matrix numerically singular (kappa ~ " +
                             std::to_string(kappa_estimate) + ")"),
          kappa(kappa_estimate) {}
    double kappa;
};

struct AssemblyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A linear differential operator applied to the interpolant when generating
/// stencil weights.
struct DiffOperator {
    enum class Kind : std::uint8_t { Identity, Partial, Laplacian, NormalDeriv };

    Kind kind = Kind::Identity;
    int axis = 0;    // Partial only
    Vector normal;   // NormalDeriv only, unit length

    static DiffOperator identity() { return {}; }
    static DiffOperator partial(int axis) { return {Kind::Partial, axis, {}}; }
    static DiffOperator laplacian() { return {Kind::Laplacian, 0, {}}; }
    static DiffOperator normal_deriv(const Vector& n) {
        if (std::abs(n.norm() - 1.0) > 1e-12) throw AssemblyError("normal derivative needs a unit vector");
        return {Kind::NormalDeriv, 0, n};
    }
};

/// The assembled local interpolation system: interior value rows, boundary
/// normal-derivative rows and the polynomial augmentation blocks.
struct StencilSystem {
    Stencil stencil;
    KernelSpec kernel;
    PolyBasis basis;
    Matrix points;   // m x d stencil node positions, interior first
    Matrix normals;  // m_B x d unit normals of the boundary rows
    Matrix M;        // (m + q) x (m + q)
    Vector poly_center;      // monomials are evaluated in stencil-local
    double poly_scale = 1.0; // coordinates (x - center)/scale

    Index m_I() const { return stencil.m_I(); }
    Index m_B() const { return stencil.m_B(); }
    Index m() const { return stencil.m(); }
    Index q() const { return basis.size(); }
    Index dim() const { return points.cols(); }

    Vector local(const Vector& x) const { return (x - poly_center) / poly_scale; }
};

/// Stencil coefficients for one operator at one evaluation point; only the
/// first m solution entries are kept (the polynomial tail multiplies zeros).
struct StencilWeights {
    Vector c;
    Vector eval_point;
};

/// Fills M per the block layout [phi_BC, P_BC; P^T, 0]: row k of the boundary
/// block holds d phi_i(x_k) = Phi'(r_ik) e_ik . n_k and d p_j(x_k) =
/// grad p_j(x_k) . n_k.
inline StencilSystem assemble(const Stencil& stencil, const NodeSet& nodes, const KernelSpec& kernel,
                              const PolyBasis& basis) {
    const Index m_I = stencil.m_I(), m_B = stencil.m_B(), m = stencil.m();
    const Index q = basis.size();
    const Index d = nodes.dim();
    if (m < 1) throw AssemblyError("empty stencil");

    StencilSystem sys{stencil, kernel, basis, Matrix(m, d), Matrix(m_B, d),
                      Matrix::Zero(m + q, m + q), Vector(), 1.0};
    for (Index i = 0; i < m_I; ++i) sys.points.row(i) = nodes.positions.row(stencil.interior[static_cast<std::size_t>(i)]);
    for (Index k = 0; k < m_B; ++k) {
        const Index idx = stencil.boundary[static_cast<std::size_t>(k)];
        sys.points.row(m_I + k) = nodes.positions.row(idx);
        sys.normals.row(k) = nodes.normals.row(idx);
    }

    for (Index i = 0; i < m; ++i)
        for (Index j = i + 1; j < m; ++j)
            if ((sys.points.row(i) - sys.points.row(j)).norm() < 1e-12 * std::max(1.0, nodes.spacing))
                throw AssemblyError("duplicate nodes in stencil");

    // The polynomial block is evaluated in stencil-local coordinates; the
    // spanned space is unchanged but the block stays well scaled away from
    // the global origin.
    sys.poly_center = sys.points.colwise().mean();
    sys.poly_scale = nodes.spacing > 0.0 ? nodes.spacing : 1.0;

    // Interior rows: plain RBF and polynomial evaluations.
    for (Index i = 0; i < m_I; ++i) {
        const Vector xi = sys.points.row(i);
        for (Index j = 0; j < m; ++j)
            sys.M(i, j) = phi(kernel, (sys.points.row(j).transpose() - xi).norm());
        for (Index l = 0; l < q; ++l) sys.M(i, m + l) = basis.eval(l, sys.local(xi));
    }
    // Boundary rows: normal derivatives with respect to the row's normal.
    for (Index k = 0; k < m_B; ++k) {
        const Index row = m_I + k;
        const Vector xk = sys.points.row(row);
        const Vector nk = sys.normals.row(k);
        for (Index j = 0; j < m; ++j)
            sys.M(row, j) = rbf_gradient(kernel, sys.points.row(j), xk).dot(nk);
        for (Index l = 0; l < q; ++l)
            sys.M(row, m + l) = basis.gradient(l, sys.local(xk)).dot(nk) / sys.poly_scale;
    }
    // Orthogonality rows.
    for (Index l = 0; l < q; ++l)
        for (Index j = 0; j < m; ++j) sys.M(m + l, j) = basis.eval(l, sys.local(sys.points.row(j)));
    return sys;
}

/// Right-hand side [Psi(x); Pi(x)] for the adjoint solve of one operator.
inline Vector operator_rhs(const StencilSystem& sys, const DiffOperator& op, const Vector& x) {
    const Index m = sys.m(), q = sys.q();
    Vector rhs(m + q);
    for (Index j = 0; j < m; ++j) {
        const Vector cj = sys.points.row(j);
        switch (op.kind) {
            case DiffOperator::Kind::Identity: rhs[j] = phi(sys.kernel, (x - cj).norm()); break;
            case DiffOperator::Kind::Partial: rhs[j] = rbf_gradient(sys.kernel, cj, x)[op.axis]; break;
            case DiffOperator::Kind::Laplacian: rhs[j] = rbf_laplacian(sys.kernel, cj, x); break;
            case DiffOperator::Kind::NormalDeriv:
                rhs[j] = rbf_gradient(sys.kernel, cj, x).dot(op.normal);
                break;
        }
    }
    const Vector xl = sys.local(x);
    const double h = sys.poly_scale;
    for (Index l = 0; l < q; ++l) {
        switch (op.kind) {
            case DiffOperator::Kind::Identity: rhs[m + l] = sys.basis.eval(l, xl); break;
            case DiffOperator::Kind::Partial: rhs[m + l] = sys.basis.gradient(l, xl)[op.axis] / h; break;
            case DiffOperator::Kind::Laplacian: rhs[m + l] = sys.basis.laplacian(l, xl) / (h * h); break;
            case DiffOperator::Kind::NormalDeriv:
                rhs[m + l] = sys.basis.gradient(l, xl).dot(op.normal) / h;
                break;
        }
    }
    return rhs;
}

/// Factorization of M^T reused across operators and evaluation points.
class StencilSolver {
public:
    explicit StencilSolver(StencilSystem sys) : sys_(std::move(sys)), lu_(sys_.M.transpose()) {
        rcond_ = lu_.rcond();
        if (!(rcond_ > 1e-15)) throw ConditioningError(rcond_ > 0.0 ? 1.0 / rcond_
                                                                     : std::numeric_limits<double>::infinity());
    }

    const StencilSystem& system() const { return sys_; }
    double rcond() const { return rcond_; }

    StencilWeights weights(const DiffOperator& op, const Vector& x) const {
        const Vector full = lu_.solve(operator_rhs(sys_, op, x));
        return {full.head(sys_.m()), x};
    }

    /// Cardinal function values psi_1..psi_m at x (identity operator).
    Vector cardinal(const Vector& x) const {
        return weights(DiffOperator::identity(), x).c;
    }

    /// Solves for several operators at once (shared factorization).
    Matrix weights_block(const std::vector<DiffOperator>& ops, const Vector& x) const {
        Matrix rhs(sys_.m() + sys_.q(), static_cast<Index>(ops.size()));
        for (std::size_t j = 0; j < ops.size(); ++j) rhs.col(static_cast<Index>(j)) = operator_rhs(sys_, ops[j], x);
        Matrix full = lu_.solve(rhs);
        return full.topRows(sys_.m());
    }

private:
    StencilSystem sys_;
    Eigen::PartialPivLU<Matrix> lu_;
    double rcond_;
};

inline StencilWeights stencil_weights(const StencilSystem& sys, const DiffOperator& op, const Vector& x) {
    return StencilSolver(sys).weights(op, x);
}

inline Vector cardinal_functions(const StencilSystem& sys, const Vector& x) {
    return StencilSolver(sys).cardinal(x);
}

/// 2-norm condition number of M via a full singular value decomposition
/// (matrices stay small); +infinity when exactly singular.
inline double condition_number(const StencilSystem& sys) {
    Eigen::JacobiSVD<Matrix> svd(sys.M);
    const auto& sv = svd.singularValues();
    const double smin = sv[sv.size() - 1];
    if (smin == 0.0) return std::numeric_limits<double>::infinity();
    return sv[0] / smin;
}

namespace detail {

/// Convex hull (monotone chain) of the stencil nodes and a point-in-hull test.
inline std::vector<Eigen::Vector2d> convex_hull(const Matrix& pts) {
    std::vector<Eigen::Vector2d> p(static_cast<std::size_t>(pts.rows()));
    for (Index i = 0; i < pts.rows(); ++i) p[static_cast<std::size_t>(i)] = pts.row(i);
    std::sort(p.begin(), p.end(), [](const auto& a, const auto& b) {
        return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y();
    });
    p.erase(std::unique(p.begin(), p.end(), [](const auto& a, const auto& b) { return a == b; }), p.end());
    if (p.size() < 3) return p;
    auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::vector<Eigen::Vector2d> hull(2 * p.size());
    std::size_t k = 0;
    for (const auto& pt : p) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pt) <= 0) --k;
        hull[k++] = pt;
    }
    const std::size_t lower = k + 1;
    for (auto it = p.rbegin() + 1; it != p.rend(); ++it) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0) --k;
        hull[k++] = *it;
    }
    hull.resize(k - 1);
    return hull;
}

inline bool in_hull(const std::vector<Eigen::Vector2d>& hull, const Eigen::Vector2d& p, double tol) {
    if (hull.empty()) return false;
    if (hull.size() == 1) return (p - hull[0]).norm() <= tol;
    if (hull.size() == 2) {
        const Eigen::Vector2d a = hull[0], b = hull[1];
        const Eigen::Vector2d ab = b - a;
        const double t = std::clamp(ab.dot(p - a) / ab.squaredNorm(), 0.0, 1.0);
        return (p - (a + t * ab)).norm() <= tol;
    }
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Eigen::Vector2d a = hull[i], b = hull[(i + 1) % hull.size()];
        const double cr = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
        if (cr < -tol) return false;
    }
    return true;
}

}  // namespace detail

struct LebesgueConstants {
    double lambda_I = 0.0;
    double lambda_B = 0.0;
    double lambda_m = 0.0;  // Sobolev-style constant summing the |alpha| <= 1 variants
};

/// Samples the Lebesgue functions on a uniform grid over the convex hull of
/// the stencil nodes and reports the maxima; lambda_m additionally sums the
/// first-derivative variants obtained from partial-operator cardinal solves.
inline LebesgueConstants lebesgue(const StencilSystem& sys, int grid_resolution = 101) {
    if (sys.dim() != 2) throw AssemblyError("lebesgue sampling implemented for d = 2");
    StencilSolver solver(sys);
    const auto hull = detail::convex_hull(sys.points);

    Eigen::Vector2d lo = sys.points.colwise().minCoeff();
    Eigen::Vector2d hi = sys.points.colwise().maxCoeff();
    const double tol = 1e-9 * std::max(1.0, (hi - lo).norm());

    std::vector<DiffOperator> ops = {DiffOperator::identity(), DiffOperator::partial(0),
                                     DiffOperator::partial(1)};
    Eigen::Vector3d max_I = Eigen::Vector3d::Zero(), max_B = Eigen::Vector3d::Zero();
    const Index m_I = sys.m_I(), m = sys.m();
    for (int iy = 0; iy < grid_resolution; ++iy)
        for (int ix = 0; ix < grid_resolution; ++ix) {
            Eigen::Vector2d p(
                grid_resolution == 1 ? lo.x() : lo.x() + (hi.x() - lo.x()) * ix / (grid_resolution - 1),
                grid_resolution == 1 ? lo.y() : lo.y() + (hi.y() - lo.y()) * iy / (grid_resolution - 1));
            if (!detail::in_hull(hull, p, tol)) continue;
            const Matrix psi = solver.weights_block(ops, p);
            for (int o = 0; o < 3; ++o) {
                const double lI = psi.col(o).head(m_I).cwiseAbs().sum();
                const double lB = psi.col(o).segment(m_I, m - m_I).cwiseAbs().sum();
                max_I[o] = std::max(max_I[o], lI);
                max_B[o] = std::max(max_B[o], lB);
            }
        }
    return {max_I[0], max_B[0], max_I.sum() + max_B.sum()};
}

/// |u(x_eval) - u^h(x_eval)| where the interpolant takes nodal values at
/// interior nodes and normal derivatives (from the gradient callable) at
/// boundary nodes.
inline double interp_error(const StencilSystem& sys,
                           const std::function<double(const Vector&)>& u,
                           const std::function<Vector(const Vector&)>& du, const Vector& x_eval) {
    const Vector psi = cardinal_functions(sys, x_eval);
    double uh = 0.0;
    for (Index i = 0; i < sys.m_I(); ++i) uh += u(sys.points.row(i)) * psi[i];
    for (Index k = 0; k < sys.m_B(); ++k) {
        const Vector xk = sys.points.row(sys.m_I() + k);
        uh += du(xk).dot(sys.normals.row(k)) * psi[sys.m_I() + k];
    }
    return std::abs(u(x_eval) - uh);
}

}  // namespace nrbf
