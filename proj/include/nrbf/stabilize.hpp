#pragma once

#include "nrbf/geometry.hpp"
#include "nrbf/interp.hpp"
#include "nrbf/optdir.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace nrbf {

/// Threshold for the boundary-node selection: node i is discarded while
/// |n_i . n_hat_i| < d_min, with the optimal directions recomputed after
/// every removal.
struct SelectionConfig {
    double d_min = 0.7;
};

struct SelectionResult {
    Stencil stencil;
    Index removed = 0;
};

/// Approach 1: iteratively discards the boundary node whose actual normal is
/// least aligned with its optimal direction, shrinking G_BB row/column-wise,
/// until every surviving node satisfies the threshold. Removing all boundary
/// nodes is a legal outcome.
inline SelectionResult select_boundary_nodes(const Stencil& stencil, const NodeSet& nodes,
                                             const KernelSpec& kernel, const SelectionConfig& cfg) {
    SelectionResult out{stencil, 0};
    if (stencil.m_B() == 0 || cfg.d_min <= 0.0) return out;

    const SchurData data = schur_data(stencil, nodes, kernel);
    DMat g = data.g_bb;
    std::vector<Index> active(static_cast<std::size_t>(stencil.m_B()));
    for (std::size_t k = 0; k < active.size(); ++k) active[k] = static_cast<Index>(k);

    const Vector centroid = data.interior_centroid();
    while (!active.empty()) {
        Matrix init(static_cast<Index>(active.size()), data.dim());
        Matrix actual(static_cast<Index>(active.size()), data.dim());
        for (std::size_t k = 0; k < active.size(); ++k) {
            const Index orig = active[k];
            Vector n0 = g.at(static_cast<Index>(k), static_cast<Index>(k));
            if (!(n0.norm() > 0.0)) n0 = data.boundary_points.row(orig).transpose() - centroid;
            if (!(n0.norm() > 0.0)) n0 = Vector::Unit(data.dim(), 0);
            init.row(static_cast<Index>(k)) = n0 / n0.norm();
            actual.row(static_cast<Index>(k)) = data.boundary_normals.row(orig);
        }
        const OptResult opt = optimal_directions(g, init);

        Vector dots(static_cast<Index>(active.size()));
        for (Index k = 0; k < dots.size(); ++k)
            dots[k] = std::abs(actual.row(k).dot(opt.directions.row(k)));
        const double worst_dot = dots.minCoeff();
        if (worst_dot >= cfg.d_min) break;
        // Drop every node tied with the worst alignment, so exactly symmetric
        // offenders leave together.
        for (Index k = dots.size() - 1; k >= 0; --k) {
            if (dots[k] > worst_dot + 1e-9) continue;
            g = g.without(k);
            active.erase(active.begin() + k);
            ++out.removed;
        }
    }

    out.stencil.boundary.clear();
    for (Index k : active)
        out.stencil.boundary.push_back(stencil.boundary[static_cast<std::size_t>(k)]);
    return out;
}

namespace detail {

struct ProjectedCandidate {
    Eigen::Vector2d point;
    Eigen::Vector2d normal;
    double source_distance;
};

/// Keeps candidates at mutual distance >= dedup_radius * s, preferring the
/// ones whose source interior node sits closer to the boundary. Feet of a
/// full interior ring can bunch together near locally convex arcs, and
/// near-coincident boundary nodes carry near-duplicate Neumann rows, so the
/// radius is chosen to keep the projected spacing comparable to s.
inline std::vector<ProjectedCandidate> dedup_projected(std::vector<ProjectedCandidate> cand,
                                                       double s, double dedup_radius = 0.75) {
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
        return a.source_distance < b.source_distance;
    });
    std::vector<ProjectedCandidate> kept;
    for (const auto& c : cand) {
        bool clash = false;
        for (const auto& k : kept)
            if ((k.point - c.point).norm() < dedup_radius * s) {
                clash = true;
                break;
            }
        if (!clash) kept.push_back(c);
    }
    return kept;
}

inline NodeSet rebuild_with_boundary(const NodeSet& nodes,
                                     const std::vector<ProjectedCandidate>& bnd) {
    const auto interior = nodes.interior_indices();
    NodeSet out;
    out.spacing = nodes.spacing;
    const Index n = static_cast<Index>(interior.size() + bnd.size());
    out.positions.resize(n, 2);
    out.normals = Matrix::Zero(n, 2);
    out.kinds.assign(static_cast<std::size_t>(n), NodeKind::Interior);
    Index at = 0;
    for (Index i : interior) out.positions.row(at++) = nodes.positions.row(i);
    for (const auto& b : bnd) {
        out.positions.row(at) = b.point;
        out.normals.row(at) = b.normal;
        out.kinds[static_cast<std::size_t>(at)] = NodeKind::Boundary;
        ++at;
    }
    return out;
}

}  // namespace detail

/// Approach 2 on a real domain: replaces the boundary nodes with the feet of
/// the nearest-boundary projections of the first-layer interior nodes, with
/// normals taken from the curve at the projected locations. The first layer
/// is the ring below 1.5 s: the generator keeps interior nodes at least
/// 0.7 s away from the boundary and its second ring starts past sqrt(3) s,
/// so this window captures exactly the innermost ring.
inline NodeSet project_boundary_nodes(const NodeSet& nodes, const Domain2D& domain) {
    const double s = nodes.spacing;
    std::vector<detail::ProjectedCandidate> cand;
    for (Index i : nodes.interior_indices()) {
        const Eigen::Vector2d p = nodes.positions.row(i);
        const auto near = domain.nearest_boundary(p);
        if (near.distance < 1.5 * s)
            cand.push_back({near.point, domain.outward_normal(near.theta), near.distance});
    }
    if (cand.empty()) throw GeometryError("no first-layer interior nodes to project");
    return detail::rebuild_with_boundary(nodes, detail::dedup_projected(std::move(cand), s));
}

/// Approach 2 on the reference stencil: the first interior row is sent to the
/// boundary line y = 0 along the same point-G lines that define the normals,
/// so the projected nodes inherit consistent normals. Angles near the pole of
/// the construction (G crossing the first-row height) are rejected.
inline NodeSet project_reference_boundary(double alpha, double s) {
    auto [nodes, stencil] = reference_stencil(alpha, s);
    const double row_y = std::sqrt(3.0) / 2.0 * s;

    std::vector<detail::ProjectedCandidate> cand;
    for (Index i : nodes.interior_indices()) {
        const Eigen::Vector2d p = nodes.positions.row(i);
        if (std::abs(p.y() - row_y) > 1e-12 * s) continue;
        double foot_x;
        if (alpha == 0.0) {
            foot_x = p.x();
        } else {
            const double g = 3.0 * s / std::tan(alpha);
            if (std::abs(g - p.y()) < 1e-9 * s) throw GeometryError("projection degenerate at this alpha");
            foot_x = p.x() * g / (g - p.y());
        }
        if (std::abs(foot_x) > 30.0 * s) continue;  // projected far outside the stencil
        cand.push_back({Eigen::Vector2d(foot_x, 0.0), reference_normal(foot_x, alpha, s), row_y});
    }
    if (cand.empty()) throw GeometryError("no projectable first-layer nodes");
    // Same source distance for all: dedup keeps the earlier (left-to-right) node.
    return detail::rebuild_with_boundary(nodes, detail::dedup_projected(std::move(cand), s));
}

struct BoundaryOptimResult {
    NodeSet nodes;
    Stencil stencil;
    std::vector<double> cost_history;  // cost before the first step, then one entry per accepted step
    Index merged = 0;
};

namespace detail {

/// Lebesgue-at-boundary cost F = sum_k lambda_I(x_k) for a bare (q = 0)
/// stencil system, together with the cardinal solves it needs.
struct PlacementCost {
    double value = 0.0;
    std::vector<Vector> psi;  // cardinal vectors at every boundary node
    StencilSystem sys;
};

inline PlacementCost placement_cost(const Stencil& stencil, const NodeSet& nodes,
                                    const KernelSpec& kernel) {
    PlacementCost out{0.0, {}, assemble(stencil, nodes, kernel, PolyBasis::none(static_cast<int>(nodes.dim())))};
    StencilSolver solver(out.sys);
    const Index m_I = out.sys.m_I();
    for (Index k = 0; k < out.sys.m_B(); ++k) {
        const Vector xk = out.sys.points.row(m_I + k);
        Vector psi = solver.cardinal(xk);
        out.value += psi.head(m_I).cwiseAbs().sum();
        out.psi.push_back(std::move(psi));
    }
    return out;
}

/// Analytic sensitivities dF/dx_j for every boundary node j via the adjoint
/// solves M c = sgn(psi_I): both the right-hand sides and the matrix entries
/// depend on the boundary positions.
inline Matrix placement_sensitivities(const PlacementCost& cost, const KernelSpec& kernel) {
    const StencilSystem& sys = cost.sys;
    const Index m_I = sys.m_I(), m_B = sys.m_B(), m = sys.m(), d = sys.dim();
    Matrix grad = Matrix::Zero(m_B, d);

    Eigen::PartialPivLU<Matrix> lu_m(sys.M);
    std::vector<Vector> adjoints;
    for (Index k = 0; k < m_B; ++k) {
        const Vector& psi = cost.psi[static_cast<std::size_t>(k)];
        // Cardinal values that vanish (often exactly, by symmetry) get a zero
        // subgradient instead of a noise-driven sign.
        const double tiny = 1e-12 * psi.head(m_I).cwiseAbs().maxCoeff();
        Vector s = Vector::Zero(m);
        for (Index i = 0; i < m_I; ++i)
            s[i] = std::abs(psi[i]) <= tiny ? 0.0 : (psi[i] > 0.0 ? 1.0 : -1.0);
        adjoints.push_back(lu_m.solve(s));
    }

    for (Index jb = 0; jb < m_B; ++jb) {
        const Index j = m_I + jb;
        const Vector xj = sys.points.row(j);
        const Vector nj = sys.normals.row(jb);
        for (Index k = 0; k < m_B; ++k) {
            const Index kk = m_I + k;
            const Vector xk = sys.points.row(kk);
            const Vector& psi = cost.psi[static_cast<std::size_t>(k)];
            const Vector& c = adjoints[static_cast<std::size_t>(k)];

            // d phi(x_k) / d x_j
            Vector t1 = Vector::Zero(d);
            if (kk == j) {
                for (Index i = 0; i < m; ++i)
                    if (i != j) t1 += c[i] * rbf_gradient(kernel, sys.points.row(i), xj);
            } else {
                t1 = -c[j] * rbf_gradient(kernel, xj, xk);
            }

            // c^T (dM^T/dx_j) psi = sum_{a,b} c_a psi_b dM(b,a)/dx_j
            Vector t2 = Vector::Zero(d);
            for (Index b = 0; b < m; ++b) {
                const Vector xb = sys.points.row(b);
                if (b < m_I) {
                    // interior row: M(b, j) = Phi(||x_b - x_j||)
                    t2 += c[j] * psi[b] * rbf_gradient(kernel, xb, xj);
                } else if (b == j) {
                    // the moving node's own normal-derivative row
                    for (Index a = 0; a < m; ++a) {
                        if (a == j) continue;
                        t2 += c[a] * psi[b] * (rbf_hessian(kernel, sys.points.row(a), xj) * nj);
                    }
                } else {
                    // another boundary row: only the column of node j moves
                    const Vector nb = sys.normals.row(b - m_I);
                    t2 += c[j] * psi[b] * (-(rbf_hessian(kernel, xj, xb) * nb));
                }
            }
            grad.row(jb) += (t1 - t2).transpose();
        }
    }
    return grad;
}

}  // namespace detail

/// Gradient descent on the summed interior Lebesgue function at the boundary
/// nodes. Each node moves tangentially to its (fixed) normal, the step is
/// halved whenever the cost would increase, and nodes merging within 0.25 s
/// are collapsed. Restricted to bare interpolants (no augmentation).
inline BoundaryOptimResult optimize_boundary_positions(const Stencil& stencil, const NodeSet& nodes,
                                                       const KernelSpec& kernel, double step,
                                                       int max_iter) {
    if (stencil.m_B() < 1) throw GeometryError("boundary placement needs at least one boundary node");
    BoundaryOptimResult out{nodes, stencil, {}, 0};
    const double s = nodes.spacing;

    detail::PlacementCost cost = detail::placement_cost(out.stencil, out.nodes, kernel);
    out.cost_history.push_back(cost.value);

    for (int iter = 0; iter < max_iter; ++iter) {
        const Matrix grad = detail::placement_sensitivities(cost, kernel);

        // Tangential components only: motion stays orthogonal to the normals.
        Matrix tang = grad;
        for (Index k = 0; k < grad.rows(); ++k) {
            const Vector nk = cost.sys.normals.row(k);
            tang.row(k) -= grad.row(k).dot(nk) * nk.transpose();
        }

        double local_step = step;
        bool accepted = false;
        while (local_step > 1e-10) {
            NodeSet trial = out.nodes;
            Stencil trial_stencil = out.stencil;
            for (Index k = 0; k < static_cast<Index>(out.stencil.boundary.size()); ++k) {
                const Index idx = out.stencil.boundary[static_cast<std::size_t>(k)];
                trial.positions.row(idx) -= local_step * s * tang.row(k);
            }
            // Collapse boundary nodes that land on top of each other; the merge
            // is part of the trial so the accepted history stays non-increasing.
            // Of a merging pair the node farther from the interior centroid is
            // kept, so mirror-image merges resolve mirror-symmetrically.
            Eigen::Vector2d icentroid = Eigen::Vector2d::Zero();
            for (Index ii : trial_stencil.interior) icentroid += Eigen::Vector2d(trial.positions.row(ii));
            icentroid /= static_cast<double>(trial_stencil.interior.size());
            Index merged_now = 0;
            for (std::size_t a = 0; a < trial_stencil.boundary.size(); ++a)
                for (std::size_t b = a + 1; b < trial_stencil.boundary.size();) {
                    const Eigen::Vector2d pa = trial.positions.row(trial_stencil.boundary[a]);
                    const Eigen::Vector2d pb = trial.positions.row(trial_stencil.boundary[b]);
                    if ((pa - pb).norm() < 0.25 * s) {
                        const std::size_t drop =
                            (pa - icentroid).norm() >= (pb - icentroid).norm() ? b : a;
                        trial_stencil.boundary.erase(trial_stencil.boundary.begin() +
                                                     static_cast<std::ptrdiff_t>(drop));
                        ++merged_now;
                        if (drop == a) {
                            b = a + 1;
                        }
                    } else {
                        ++b;
                    }
                }
            if (!trial_stencil.boundary.empty()) {
                try {
                    detail::PlacementCost trial_cost = detail::placement_cost(trial_stencil, trial, kernel);
                    if (trial_cost.value <= cost.value) {
                        out.nodes = std::move(trial);
                        out.stencil = std::move(trial_stencil);
                        out.merged += merged_now;
                        cost = std::move(trial_cost);
                        accepted = true;
                        break;
                    }
                } catch (const ConditioningError&) {
                    // singular trial configuration: treat as an increase and backtrack
                } catch (const AssemblyError&) {
                }
            }
            local_step *= 0.5;
        }
        if (!accepted) break;

        out.cost_history.push_back(cost.value);
        const double prev = out.cost_history[out.cost_history.size() - 2];
        if (std::abs(prev - cost.value) < 1e-6 * std::max(cost.value, 1e-30)) break;
    }
    return out;
}

}  // namespace nrbf
