#pragma once

#include "nrbf/dmat.hpp"
#include "nrbf/geometry.hpp"
#include "nrbf/interp.hpp"
#include "nrbf/kernels.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace nrbf {

struct SchurError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Normal-independent data of the boundary-block Schur complement of M:
/// S_BB(N) = H(G_BB, N) with G_BB = D_BB - D_BI psi_bar. Everything here is
/// purely geometric; the boundary normals enter only through the contraction.
struct SchurData {
    KernelSpec kernel;
    Matrix interior_points;   // m_I x d
    Matrix boundary_points;   // m_B x d
    Matrix boundary_normals;  // m_B x d actual normals of the stencil
    Matrix psi_bar;           // m_I x m_B cardinal values of the interior-only
                              // interpolation, evaluated at the boundary nodes
    DMat d_bb;                // m_B x m_B, antisymmetric with zero diagonal
    DMat d_bi;                // m_B x m_I
    DMat g_bb;                // m_B x m_B
    double det_phi_ii_sign = 1.0;

    Index m_I() const { return interior_points.rows(); }
    Index m_B() const { return boundary_points.rows(); }
    Index dim() const { return interior_points.cols(); }

    Vector interior_centroid() const { return interior_points.colwise().mean(); }
};

namespace detail {

inline double sign_of_lu_determinant(const Eigen::PartialPivLU<Matrix>& lu) {
    double sign = lu.permutationP().determinant();
    const auto& diag = lu.matrixLU().diagonal();
    for (Index i = 0; i < diag.size(); ++i) sign *= (diag[i] < 0.0 ? -1.0 : 1.0);
    return sign;
}

}  // namespace detail

/// Builds D_BB, D_BI and G_BB = D_BB - D_BI psi_bar for a stencil. Requires a
/// kernel that is strictly or conditionally positive definite of order <= 1 so
/// the interior block is nonsingular on its own.
inline SchurData schur_data(const Stencil& stencil, const NodeSet& nodes, const KernelSpec& kernel) {
    const Index m_I = stencil.m_I(), m_B = stencil.m_B();
    const Index d = nodes.dim();
    if (m_B < 1) throw SchurError("schur_data needs at least one boundary node");
    if (m_I < 1) throw SchurError("schur_data needs at least one interior node");
    if (kernel.conditional_order() > 1)
        throw SchurError("kernel of conditional order > 1 not admitted for the Schur analysis");

    SchurData data{kernel,
                   Matrix(m_I, d),
                   Matrix(m_B, d),
                   Matrix(m_B, d),
                   Matrix(m_I, m_B),
                   DMat(m_B, m_B, d),
                   DMat(m_B, m_I, d),
                   DMat(m_B, m_B, d)};
    for (Index i = 0; i < m_I; ++i)
        data.interior_points.row(i) = nodes.positions.row(stencil.interior[static_cast<std::size_t>(i)]);
    for (Index k = 0; k < m_B; ++k) {
        const Index idx = stencil.boundary[static_cast<std::size_t>(k)];
        data.boundary_points.row(k) = nodes.positions.row(idx);
        data.boundary_normals.row(k) = nodes.normals.row(idx);
    }

    Matrix phi_ii(m_I, m_I), phi_ib(m_I, m_B);
    for (Index i = 0; i < m_I; ++i) {
        const Vector xi = data.interior_points.row(i);
        for (Index j = 0; j < m_I; ++j)
            phi_ii(i, j) = phi(kernel, (data.interior_points.row(j).transpose() - xi).norm());
        for (Index b = 0; b < m_B; ++b)
            phi_ib(i, b) = phi(kernel, (data.boundary_points.row(b).transpose() - xi).norm());
    }
    Eigen::PartialPivLU<Matrix> lu(phi_ii);
    if (!(lu.rcond() > 1e-15)) throw SchurError("interior interpolation block is numerically singular");
    data.psi_bar = lu.solve(phi_ib);
    data.det_phi_ii_sign = detail::sign_of_lu_determinant(lu);

    // d_{i,k} = Phi'(r_ik) e_ik, stored with the evaluation node as the row.
    for (Index a = 0; a < m_B; ++a) {
        const Vector xa = data.boundary_points.row(a);
        for (Index b = 0; b < m_B; ++b)
            data.d_bb.at(a, b) = rbf_gradient(kernel, data.boundary_points.row(b), xa);
        for (Index j = 0; j < m_I; ++j)
            data.d_bi.at(a, j) = rbf_gradient(kernel, data.interior_points.row(j), xa);
    }
    data.g_bb = dmat_add(data.d_bb, dmat_scale(dmat_matmul(data.d_bi, data.psi_bar), -1.0));
    return data;
}

/// S_BB = H(G_BB, N) for a given set of unit normals.
inline Matrix s_bb(const SchurData& data, const Matrix& normals) { return op_H(data.g_bb, normals); }
inline Matrix s_bb(const SchurData& data, const DMat& normals) { return op_H(data.g_bb, normals); }

/// The single-boundary-node optimal vector: det(M(n)) = v . n up to the
/// positive factor |det(phi_II)|. The coefficients w_j are those of the
/// expansion v = sum_j w_j e_{j,m} over the unit directions towards the
/// boundary node, up to the same factor.
struct SingleNodeV {
    Vector v;
    Vector w;
    bool singular = false;  // ||v|| vanishes: forbidden boundary-node location
};

inline SingleNodeV single_node_v(const SchurData& data) {
    if (data.m_B() != 1) throw SchurError("single_node_v needs exactly one boundary node");
    SingleNodeV out;
    out.v = data.det_phi_ii_sign * data.g_bb.at(0, 0);
    out.w = Vector::Zero(data.m_I());
    double scale = 0.0;
    const Vector xb = data.boundary_points.row(0);
    for (Index j = 0; j < data.m_I(); ++j) {
        const double r = (xb - data.interior_points.row(j).transpose()).norm();
        out.w[j] = -data.det_phi_ii_sign * data.psi_bar(j, 0) * phi_prime(data.kernel, r);
        scale += std::abs(out.w[j]);
    }
    out.singular = out.v.norm() < 1e-14 * std::max(scale, 1e-300);
    return out;
}

enum class OptInit : std::uint8_t { Diag, Geometric };

/// Result of the constrained maximization of det(S_BB) over unit normals.
struct OptResult {
    Matrix directions;  // m_B x d unit rows
    int iterations = 0;
    double residual = 0.0;  // max_i (1 - |t_i . n_i| / ||t_i||) at exit
    double det_value = 0.0;
    int perturbations = 0;
    bool converged = false;
};

namespace detail {

/// t_i of the stationarity conditions: the det(S_i) factor is dropped since
/// the direction is normalized afterwards. Returns false when S_i is singular.
inline bool stationarity_vector(const DMat& g_bb, const Matrix& normals, Index i, Vector& t_out) {
    const Index m_B = g_bb.rows();
    const Matrix S = op_H(g_bb, normals);
    Matrix S_i(m_B - 1, m_B - 1);
    Vector c_i(m_B - 1);
    for (Index a = 0, oa = 0; a < m_B; ++a) {
        if (a == i) continue;
        for (Index b = 0, ob = 0; b < m_B; ++b) {
            if (b == i) continue;
            S_i(oa, ob) = S(a, b);
            ++ob;
        }
        c_i[oa] = S(a, i);
        ++oa;
    }
    Vector t = g_bb.at(i, i);
    if (m_B > 1) {
        Eigen::FullPivLU<Matrix> lu(S_i);
        if (!lu.isInvertible()) return false;
        const Vector w = lu.solve(c_i);
        for (Index j = 0, oj = 0; j < m_B; ++j) {
            if (j == i) continue;
            t -= w[oj] * g_bb.at(i, j);
            ++oj;
        }
    }
    t_out = t;
    return true;
}

inline void rotate_slightly(Matrix& normals, Index row, double angle) {
    if (normals.cols() == 2) {
        const double c = std::cos(angle), s = std::sin(angle);
        const double x = normals(row, 0), y = normals(row, 1);
        normals(row, 0) = c * x - s * y;
        normals(row, 1) = s * x + c * y;
    } else {
        // Perturb towards the axis least aligned with the normal and renormalize.
        Index axis = 0;
        normals.row(row).cwiseAbs().minCoeff(&axis);
        normals(row, axis) += angle;
        normals.row(row) /= normals.row(row).norm();
    }
}

}  // namespace detail

/// Fixed-point iteration for the optimal directions, starting from explicit
/// initial normals. At every step each t_i is obtained from a Schur-reduced
/// solve on the current contraction, normalized with the sign chosen to keep
/// continuity with the previous iterate. A singular reduced block is handled
/// by slightly rotating the offending normal.
inline OptResult optimal_directions(const DMat& g_bb, Matrix init_normals, double tol = 1e-10,
                                    int max_iter = 200) {
    const Index m_B = g_bb.rows();
    if (g_bb.cols() != m_B) throw SchurError("optimal_directions needs a square G_BB");
    if (init_normals.rows() != m_B || init_normals.cols() != g_bb.dim())
        throw SchurError("bad initial normals shape");
    for (Index i = 0; i < m_B; ++i) {
        const double len = init_normals.row(i).norm();
        if (!(len > 0.0)) throw SchurError("zero initial normal");
        init_normals.row(i) /= len;
    }

    OptResult res;
    res.directions = init_normals;
    Matrix& N = res.directions;

    auto stationarity_residual = [&](double& out) {
        double worst = 0.0;
        for (Index i = 0; i < m_B; ++i) {
            Vector t;
            if (!detail::stationarity_vector(g_bb, N, i, t) || !(t.norm() > 0.0)) return false;
            worst = std::max(worst, 1.0 - std::abs(t.dot(N.row(i)) / t.norm()));
        }
        out = worst;
        return true;
    };

    auto sweep = [&]() -> bool {  // one fixed-point update; false if a block was singular
        Matrix N_next = N;
        for (Index i = 0; i < m_B; ++i) {
            Vector t;
            if (!detail::stationarity_vector(g_bb, N, i, t) || !(t.norm() > 0.0)) {
                detail::rotate_slightly(N, i, 1e-3);
                ++res.perturbations;
                return false;
            }
            Vector n_new = t / t.norm();
            if (n_new.dot(N.row(i)) < 0.0) n_new = -n_new;
            N_next.row(i) = n_new;
        }
        N.swap(N_next);
        return true;
    };

    int iter = 0;
    for (; iter < max_iter; ++iter) {
        const Matrix N_prev = N;
        if (!sweep()) continue;
        double step = 0.0;
        for (Index i = 0; i < m_B; ++i)
            step = std::max(step, 1.0 - std::abs(N.row(i).dot(N_prev.row(i))));
        if (step < tol) {
            res.converged = true;
            ++iter;
            break;
        }
    }

    // Polish to the floating-point fixed point: the stationarity defect keeps
    // contracting linearly, so a few extra sweeps pin the directions far more
    // accurately than the step-based exit alone.
    double stat = std::numeric_limits<double>::quiet_NaN();
    if (stationarity_residual(stat)) {
        for (int extra = 0; extra < 100 && stat > 0.0; ++extra) {
            const Matrix keep = N;
            if (!sweep()) break;
            double next_stat = std::numeric_limits<double>::quiet_NaN();
            if (!stationarity_residual(next_stat) || !(next_stat < stat)) {
                N = keep;
                break;
            }
            stat = next_stat;
        }
        res.residual = stat;
    }
    res.iterations = iter;
    res.det_value = op_H(g_bb, N).determinant();
    if (!res.converged) res.converged = res.residual <= tol;
    return res;
}

inline Matrix initial_normals(const SchurData& data, OptInit init) {
    const Index m_B = data.m_B();
    Matrix N(m_B, data.dim());
    const Vector centroid = data.interior_centroid();
    for (Index i = 0; i < m_B; ++i) {
        Vector n0 = data.g_bb.at(i, i);
        if (init == OptInit::Geometric || !(n0.norm() > 0.0))
            n0 = data.boundary_points.row(i).transpose() - centroid;
        if (!(n0.norm() > 0.0)) n0 = Vector::Unit(data.dim(), 0);
        N.row(i) = n0 / n0.norm();
    }
    return N;
}

inline OptResult optimal_directions(const SchurData& data, OptInit init = OptInit::Diag,
                                    double tol = 1e-10, int max_iter = 200) {
    return optimal_directions(data.g_bb, initial_normals(data, init), tol, max_iter);
}

/// Closed form for two boundary nodes: with G = g_11 (x) g_22 - g_12 (x) g_21
/// the optimal second normal is the top eigenvector of G^T G, the first one
/// its image under G, and the maximal determinant equals sqrt(lambda_max).
struct TwoNodeSolution {
    Vector n1, n2;
    double det_value = 0.0;
};

inline Matrix two_node_coupling(const DMat& g_bb) {
    if (g_bb.rows() != 2 || g_bb.cols() != 2) throw SchurError("two_node_coupling needs m_B = 2");
    return g_bb.at(0, 0) * g_bb.at(1, 1).transpose() - g_bb.at(0, 1) * g_bb.at(1, 0).transpose();
}

inline TwoNodeSolution two_node_closed_form(const Matrix& G) {
    if (G.rows() != G.cols() || (G.rows() != 2 && G.rows() != 3))
        throw SchurError("two_node_closed_form expects a d x d matrix with d = 2 or 3");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(G.transpose() * G);
    const Index top = G.rows() - 1;  // eigenvalues in increasing order
    const double lambda_max = eig.eigenvalues()[top];
    if (!(lambda_max > 0.0)) throw SchurError("coupling matrix has no positive eigenvalue");
    TwoNodeSolution sol;
    sol.n2 = eig.eigenvectors().col(top);
    const Vector gn2 = G * sol.n2;
    sol.n1 = gn2 / gn2.norm();
    sol.det_value = std::sqrt(lambda_max);
    return sol;
}

/// The symmetric three-node configuration with two distinct extremum classes:
/// det S_BB(a1, a2, a3) = -(cos a1 cos a2 cos a3 + sin a1 sin a2 sin a3).
struct ThreeNodeReport {
    double det_000 = 0.0;
    double det_all_half_pi = 0.0;
    double det_mixed = 0.0;           // (0, 0, pi/2)
    bool converged_cos_class = false;  // start near all-zero angles
    bool converged_sin_class = false;  // start near all-pi/2 angles
    bool classes_distinct = false;
};

inline DMat symmetric_three_node_gbb() {
    DMat g(3, 3, 2);
    const Vector ex = Eigen::Vector2d(1.0, 0.0), ey = Eigen::Vector2d(0.0, 1.0);
    g.at(0, 0) = ex;
    g.at(1, 2) = ex;
    g.at(2, 1) = ex;
    g.at(2, 2) = ey;
    g.at(0, 1) = ey;
    g.at(1, 0) = ey;
    return g;
}

inline ThreeNodeReport symmetric_three_node_case() {
    const DMat g = symmetric_three_node_gbb();
    auto det_at = [&](double a1, double a2, double a3) {
        Matrix N(3, 2);
        N << std::cos(a1), std::sin(a1), std::cos(a2), std::sin(a2), std::cos(a3), std::sin(a3);
        return op_H(g, N).determinant();
    };
    ThreeNodeReport rep;
    rep.det_000 = det_at(0.0, 0.0, 0.0);
    rep.det_all_half_pi = det_at(M_PI_2, M_PI_2, M_PI_2);
    rep.det_mixed = det_at(0.0, 0.0, M_PI_2);

    auto angles_init = [](double a1, double a2, double a3) {
        Matrix N(3, 2);
        N << std::cos(a1), std::sin(a1), std::cos(a2), std::sin(a2), std::cos(a3), std::sin(a3);
        return N;
    };
    auto classify = [](const Matrix& N) {
        // cos class: normals along +-e_x; sin class: along +-e_y.
        return N.col(0).cwiseAbs().minCoeff() > 0.9 ? 0 : (N.col(1).cwiseAbs().minCoeff() > 0.9 ? 1 : -1);
    };
    const OptResult near_cos = optimal_directions(g, angles_init(0.12, -0.08, 0.05));
    const OptResult near_sin = optimal_directions(g, angles_init(M_PI_2 - 0.12, M_PI_2 + 0.08, M_PI_2 - 0.05));
    rep.converged_cos_class = near_cos.converged && classify(near_cos.directions) == 0;
    rep.converged_sin_class = near_sin.converged && classify(near_sin.directions) == 1;
    rep.classes_distinct = rep.converged_cos_class && rep.converged_sin_class;
    return rep;
}

/// Influence of the polynomial augmentation on the Schur complement:
/// S_BB = d(phi_BB) - W_BB with W_BB = d(phi_BI) K1 + d(P_B) K2, and the
/// difference to the bare complement is Delta W = dE S E^T.
struct PolyInfluence {
    Matrix delta_w;       // m_B x m_B, for the stencil's actual normals
    Matrix s_bb_aug;      // augmented Schur complement at the actual normals
    double det_m_ii = 0.0;  // det of the rearranged interior block [phi_II, P_I; P_I^T, 0]
    DMat g_bare;
    DMat g_aug;
    Matrix dirs_bare;  // optimal directions without augmentation
    Matrix dirs_aug;   // optimal directions with augmentation
    double max_angle_shift = 0.0;  // radians, up to sign
};

inline PolyInfluence poly_delta_w(const Stencil& stencil, const NodeSet& nodes,
                                  const KernelSpec& kernel, const PolyBasis& basis) {
    const SchurData data = schur_data(stencil, nodes, kernel);
    const Index m_I = data.m_I(), m_B = data.m_B(), q = basis.size(), d = data.dim();
    if (q < 1) throw SchurError("poly_delta_w needs a non-empty polynomial basis");

    // Same stencil-local monomial coordinates as assemble(), so determinant
    // identities against the assembled M hold exactly.
    Vector center = (data.interior_points.colwise().sum() + data.boundary_points.colwise().sum());
    center /= static_cast<double>(m_I + m_B);
    const double h = nodes.spacing > 0.0 ? nodes.spacing : 1.0;

    Matrix phi_ii(m_I, m_I), phi_ib(m_I, m_B), p_i(m_I, q), p_b(m_B, q);
    for (Index i = 0; i < m_I; ++i) {
        const Vector xi = data.interior_points.row(i);
        for (Index j = 0; j < m_I; ++j)
            phi_ii(i, j) = phi(kernel, (data.interior_points.row(j).transpose() - xi).norm());
        for (Index b = 0; b < m_B; ++b)
            phi_ib(i, b) = phi(kernel, (data.boundary_points.row(b).transpose() - xi).norm());
        for (Index l = 0; l < q; ++l) p_i(i, l) = basis.eval(l, (xi - center) / h);
    }
    DMat p_b_grad(m_B, q, d);
    for (Index b = 0; b < m_B; ++b) {
        const Vector xb = data.boundary_points.row(b);
        for (Index l = 0; l < q; ++l) {
            p_b(b, l) = basis.eval(l, (xb - center) / h);
            p_b_grad.at(b, l) = basis.gradient(l, (xb - center) / h) / h;
        }
    }

    Eigen::FullPivLU<Matrix> rank_check(p_i);
    if (rank_check.rank() < q) throw SchurError("interior stencil not unisolvent for the requested degree");

    Eigen::PartialPivLU<Matrix> lu(phi_ii);
    const Matrix A = lu.solve(p_i);                      // phi_II^{-1} P_I
    const Matrix S = (p_i.transpose() * A).inverse();    // q x q
    const Matrix E = phi_ib.transpose() * A - p_b;       // m_B x q
    const Matrix K2 = S * E.transpose();                 // q x m_B
    const Matrix K1 = lu.solve(phi_ib - p_i * K2);       // m_I x m_B

    PolyInfluence out{Matrix(), Matrix(), 0.0, data.g_bb,
                      DMat(m_B, m_B, d), Matrix(), Matrix(), 0.0};

    // dE as a d-matrix so the normals enter through the H contraction.
    const DMat dE = dmat_add(dmat_matmul(data.d_bi, A), dmat_scale(p_b_grad, -1.0));
    out.delta_w = op_H(dE, data.boundary_normals) * (S * E.transpose());

    out.g_aug = dmat_add(data.d_bb, dmat_add(dmat_scale(dmat_matmul(data.d_bi, K1), -1.0),
                                             dmat_scale(dmat_matmul(p_b_grad, K2), -1.0)));
    out.s_bb_aug = op_H(out.g_aug, data.boundary_normals);

    Matrix m_ii(m_I + q, m_I + q);
    m_ii.setZero();
    m_ii.topLeftCorner(m_I, m_I) = phi_ii;
    m_ii.topRightCorner(m_I, q) = p_i;
    m_ii.bottomLeftCorner(q, m_I) = p_i.transpose();
    out.det_m_ii = m_ii.partialPivLu().determinant();

    const Matrix init = initial_normals(data, OptInit::Diag);
    out.dirs_bare = optimal_directions(data.g_bb, init).directions;
    out.dirs_aug = optimal_directions(out.g_aug, init).directions;
    for (Index i = 0; i < m_B; ++i) {
        const double c = std::clamp(std::abs(out.dirs_bare.row(i).dot(out.dirs_aug.row(i))), 0.0, 1.0);
        out.max_angle_shift = std::max(out.max_angle_shift, std::acos(c));
    }
    return out;
}

}  // namespace nrbf
