#pragma once

#include "nrbf/geometry.hpp"
#include "nrbf/interp.hpp"
#include "nrbf/optdir.hpp"
#include "nrbf/pde.hpp"
#include "nrbf/stabilize.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace nrbf {

/// Drivers for the validation studies; the command-line tool serializes their
/// outputs as CSV and the acceptance suite asserts on them directly.

enum class SweepMode : std::uint8_t { None, Approach1, Approach2 };

struct RefSweepConfig {
    std::string kernel = "mq";
    double eps_s = 0.5;
    double spacing = 1.0;
    int poly_degree = -1;  // -1 = no augmentation
    double d_min = 0.6;    // approach-1 threshold
    int samples = 721;
    bool compute_lebesgue = true;
    int lebesgue_grid = 101;
    int threads = 0;
};

struct RefSweepRow {
    double alpha = 0.0;
    double kappa = std::numeric_limits<double>::infinity();
    double lambda_I = std::numeric_limits<double>::infinity();
    double lambda_B = std::numeric_limits<double>::infinity();
    double interp_err = std::numeric_limits<double>::infinity();
    Index n_rem = 0;
};

inline double ref_sweep_u(const Vector& x) { return std::exp(x[0] + 2.0 * x[1]); }
inline Vector ref_sweep_du(const Vector& x) {
    const double v = std::exp(x[0] + 2.0 * x[1]);
    return Eigen::Vector2d(v, 2.0 * v);
}

/// The alpha sweep of the reference stencil under one of the three modes.
/// Singular configurations are recorded as +inf sentinel rows.
inline std::vector<RefSweepRow> ref_sweep(SweepMode mode, const RefSweepConfig& cfg) {
    const double lo = mode == SweepMode::Approach2 ? -M_PI / 3 : -M_PI / 2;
    const double hi = mode == SweepMode::Approach2 ? M_PI / 3 : M_PI / 2;
    const double s = cfg.spacing;
    const KernelSpec kernel = parse_kernel(cfg.kernel, cfg.eps_s, s);
    const PolyBasis basis = cfg.poly_degree < 0 ? PolyBasis::none(2) : PolyBasis(cfg.poly_degree, 2);
    const Vector x_eval = Eigen::Vector2d(s / 2, s / 2);

    std::vector<RefSweepRow> rows(static_cast<std::size_t>(cfg.samples));
    detail::parallel_for(cfg.samples, cfg.threads, [&](Index i) {
        RefSweepRow& row = rows[static_cast<std::size_t>(i)];
        row.alpha = cfg.samples == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (cfg.samples - 1);
        try {
            NodeSet nodes;
            Stencil st;
            if (mode == SweepMode::Approach2) {
                nodes = project_reference_boundary(row.alpha, s);
                st.center = 3;
                for (Index j = 0; j < nodes.size(); ++j)
                    (nodes.is_boundary(j) ? st.boundary : st.interior).push_back(j);
                row.n_rem = 7 - st.m_B();  // nodes lost to projection/dedup
            } else {
                std::tie(nodes, st) = reference_stencil(row.alpha, s);
                if (mode == SweepMode::Approach1) {
                    auto sel = select_boundary_nodes(st, nodes, kernel, SelectionConfig{cfg.d_min});
                    st = std::move(sel.stencil);
                    row.n_rem = sel.removed;
                }
            }
            const StencilSystem sys = assemble(st, nodes, kernel, basis);
            row.kappa = condition_number(sys);
            row.interp_err = interp_error(sys, ref_sweep_u, ref_sweep_du, x_eval);
            if (cfg.compute_lebesgue) {
                const LebesgueConstants leb = lebesgue(sys, cfg.lebesgue_grid);
                row.lambda_I = leb.lambda_I;
                row.lambda_B = leb.lambda_B;
            } else {
                row.lambda_I = row.lambda_B = 0.0;
            }
        } catch (const std::exception&) {
            // leave the +inf sentinels in place
        }
    });
    return rows;
}

/// Indices of the strongest strict local maxima of a sampled curve.
inline std::vector<int> top_spikes(const std::vector<double>& values, int count) {
    std::vector<int> peaks;
    for (int i = 1; i + 1 < static_cast<int>(values.size()); ++i)
        if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(i - 1)] &&
            values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(i + 1)])
            peaks.push_back(i);
    std::sort(peaks.begin(), peaks.end(), [&](int a, int b) {
        return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
    });
    if (static_cast<int>(peaks.size()) > count) peaks.resize(static_cast<std::size_t>(count));
    return peaks;
}

/// Hexagonal arrangements used by the optimal-vector maps: the n lattice
/// nodes closest to the origin, ties broken by angle.
inline Matrix hex_arrangement(int n, double s) {
    std::vector<Eigen::Vector2d> pts;
    for (int i = -6; i <= 6; ++i)
        for (int j = -6; j <= 6; ++j)
            pts.emplace_back((i + 0.5 * j) * s, j * std::sqrt(3.0) / 2.0 * s);
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
        const double ra = a.norm(), rb = b.norm();
        if (std::abs(ra - rb) > 1e-12) return ra < rb;
        return std::atan2(a.y(), a.x()) < std::atan2(b.y(), b.x());
    });
    Matrix out(n, 2);
    for (int i = 0; i < n; ++i) out.row(i) = pts[static_cast<std::size_t>(i)];
    return out;
}

/// Applies a deterministic random displacement of up to `amplitude` per
/// coordinate to every node.
inline Matrix perturb_points(const Matrix& pts, double amplitude, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-amplitude, amplitude);
    Matrix out = pts;
    for (Index i = 0; i < out.rows(); ++i)
        for (Index j = 0; j < out.cols(); ++j) out(i, j) += dist(rng);
    return out;
}

/// Builds the node set for a single-boundary-node probe: the interior points
/// plus one boundary node at `p` with an arbitrary unit normal.
inline SingleNodeV probe_single_node_v(const Matrix& interior, const Eigen::Vector2d& p,
                                       const KernelSpec& kernel, double spacing) {
    NodeSet nodes;
    nodes.spacing = spacing;
    const Index m = interior.rows();
    nodes.positions.resize(m + 1, 2);
    nodes.positions.topRows(m) = interior;
    nodes.positions.row(m) = p;
    nodes.normals = Matrix::Zero(m + 1, 2);
    nodes.normals(m, 1) = -1.0;
    nodes.kinds.assign(static_cast<std::size_t>(m + 1), NodeKind::Interior);
    nodes.kinds[static_cast<std::size_t>(m)] = NodeKind::Boundary;
    Stencil st;
    st.center = 0;
    for (Index i = 0; i < m; ++i) st.interior.push_back(i);
    st.boundary.push_back(m);
    return single_node_v(schur_data(st, nodes, kernel));
}

struct VMapRow {
    double x = 0.0, y = 0.0;
    double vnorm = std::numeric_limits<double>::quiet_NaN();
    double vx = std::numeric_limits<double>::quiet_NaN();
    double vy = std::numeric_limits<double>::quiet_NaN();
};

/// Map of the single-node optimal vector over a grid of boundary-node
/// positions around a fixed interior arrangement.
inline std::vector<VMapRow> vmap_grid(const Matrix& interior, const KernelSpec& kernel,
                                      double spacing, int resolution, double margin,
                                      int threads = 0) {
    const Eigen::Vector2d lo = interior.colwise().minCoeff().array() - margin;
    const Eigen::Vector2d hi = interior.colwise().maxCoeff().array() + margin;
    std::vector<VMapRow> rows(static_cast<std::size_t>(resolution) * resolution);
    detail::parallel_for(static_cast<Index>(rows.size()), threads, [&](Index idx) {
        const int ix = static_cast<int>(idx) % resolution, iy = static_cast<int>(idx) / resolution;
        VMapRow& row = rows[static_cast<std::size_t>(idx)];
        row.x = lo.x() + (hi.x() - lo.x()) * ix / (resolution - 1);
        row.y = lo.y() + (hi.y() - lo.y()) * iy / (resolution - 1);
        try {
            const SingleNodeV v =
                probe_single_node_v(interior, Eigen::Vector2d(row.x, row.y), kernel, spacing);
            row.vnorm = v.v.norm();
            row.vx = v.v[0];
            row.vy = v.v[1];
        } catch (const std::exception&) {
        }
    });
    return rows;
}

/// Points at constant distance `dist` from the nearest interior node, traced
/// radially around the centroid (the dashed curve of the envelope study).
inline std::vector<VMapRow> vmap_curve(const Matrix& interior, const KernelSpec& kernel,
                                       double spacing, double dist, int samples) {
    const Eigen::Vector2d centroid = interior.colwise().mean();
    auto min_dist = [&](const Eigen::Vector2d& p) {
        double d = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < interior.rows(); ++i)
            d = std::min(d, (Eigen::Vector2d(interior.row(i)) - p).norm());
        return d;
    };
    std::vector<VMapRow> rows;
    for (int i = 0; i < samples; ++i) {
        const double theta = 2.0 * M_PI * i / samples;
        const Eigen::Vector2d dir(std::cos(theta), std::sin(theta));
        double lo = 0.0, hi = interior.rowwise().norm().maxCoeff() + dist + 4.0 * spacing;
        if (min_dist(centroid) >= dist) continue;  // centroid already outside the band
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (min_dist(centroid + mid * dir) < dist ? lo : hi) = mid;
        }
        const Eigen::Vector2d p = centroid + 0.5 * (lo + hi) * dir;
        VMapRow row;
        row.x = p.x();
        row.y = p.y();
        try {
            const SingleNodeV v = probe_single_node_v(interior, p, kernel, spacing);
            row.vnorm = v.v.norm();
            row.vx = v.v[0];
            row.vy = v.v[1];
        } catch (const std::exception&) {
        }
        rows.push_back(row);
    }
    return rows;
}

struct OptDirRow {
    double eps_s = 0.0;
    int perturbed = 0;
    int node = 0;
    double x = 0.0, y = 0.0;
    double nx = 0.0, ny = 0.0;
    double nx_aug = 0.0, ny_aug = 0.0;
    double angle_gap_deg = 0.0;
    double residual = 0.0;
    int iterations = 0;
    int converged = 0;
};

/// Optimal directions of the reference stencil across shape factors, with and
/// without a seeded perturbation, bare versus polynomial-augmented.
inline std::vector<OptDirRow> optdir_study(const std::vector<double>& eps_s_values, double spacing,
                                           int aug_degree, std::uint64_t seed) {
    std::vector<OptDirRow> rows;
    for (const double eps_s : eps_s_values)
        for (int perturbed = 0; perturbed <= 1; ++perturbed) {
            auto [nodes, st] = reference_stencil(0.0, spacing);
            if (perturbed) {
                nodes.positions = perturb_points(nodes.positions, 0.15 * spacing, seed);
                for (Index b = 15; b < nodes.size(); ++b) nodes.positions(b, 1) = 0.0;  // keep the wall flat
            }
            OptDirRow base;
            base.eps_s = eps_s;
            base.perturbed = perturbed;
            try {
                const KernelSpec kernel = KernelSpec::mq(eps_s / spacing);
                const PolyInfluence poly = poly_delta_w(st, nodes, kernel, PolyBasis(aug_degree, 2));
                const SchurData data = schur_data(st, nodes, kernel);
                const OptResult bare = optimal_directions(data);
                for (Index k = 0; k < st.m_B(); ++k) {
                    OptDirRow row = base;
                    row.node = static_cast<int>(k);
                    row.x = nodes.positions(st.boundary[static_cast<std::size_t>(k)], 0);
                    row.y = nodes.positions(st.boundary[static_cast<std::size_t>(k)], 1);
                    row.nx = bare.directions(k, 0);
                    row.ny = bare.directions(k, 1);
                    row.nx_aug = poly.dirs_aug(k, 0);
                    row.ny_aug = poly.dirs_aug(k, 1);
                    const double c = std::clamp(
                        std::abs(bare.directions.row(k).dot(poly.dirs_aug.row(k))), 0.0, 1.0);
                    row.angle_gap_deg = std::acos(c) * 180.0 / M_PI;
                    row.residual = bare.residual;
                    row.iterations = bare.iterations;
                    row.converged = bare.converged ? 1 : 0;
                    rows.push_back(row);
                }
            } catch (const std::exception&) {
                // shape factor outside the numerically representable range
                // (e.g. eps*s = 0.1 in double precision): report, don't abort
                for (Index k = 0; k < st.m_B(); ++k) {
                    OptDirRow row = base;
                    row.node = static_cast<int>(k);
                    row.x = nodes.positions(st.boundary[static_cast<std::size_t>(k)], 0);
                    row.y = nodes.positions(st.boundary[static_cast<std::size_t>(k)], 1);
                    row.nx = row.ny = row.nx_aug = row.ny_aug =
                        std::numeric_limits<double>::quiet_NaN();
                    row.angle_gap_deg = std::numeric_limits<double>::quiet_NaN();
                    row.residual = std::numeric_limits<double>::quiet_NaN();
                    row.converged = 0;
                    rows.push_back(row);
                }
            }
        }
    return rows;
}

/// Fields used by the application studies on the star-shaped test domain.
inline Matrix vortex_field(const NodeSet& nodes) {
    const auto interior = nodes.interior_indices();
    Matrix w(static_cast<Index>(interior.size()), 2);
    for (std::size_t i = 0; i < interior.size(); ++i) {
        const Eigen::Vector2d p = nodes.positions.row(interior[i]);
        const double r2 = p.squaredNorm();
        w.row(static_cast<Index>(i)) << -p.y() / r2, p.x() / r2;
    }
    return w;
}

inline double poisson_exact(const Eigen::Vector2d& p) { return 1.0 / p.norm(); }
inline double poisson_rhs(const Eigen::Vector2d& p) { return std::pow(p.norm(), -3.0); }
inline double poisson_neumann_data(const Eigen::Vector2d& p, const Eigen::Vector2d& n) {
    return (-p / std::pow(p.norm(), 3.0)).dot(n);
}

struct StabilityRow {
    int poly_degree = 0;
    double eps_s = 0.0;
    double d_min = 0.0;
    int stable = 0;
    double growth = std::numeric_limits<double>::infinity();
};

inline Index stencil_size_for_degree(int poly_degree) {
    switch (poly_degree) {
        case 2: return 15;
        case 3: return 20;
        case 4: return 30;
        default: return 2 * PolyBasis(poly_degree, 2).size();
    }
}

/// One repeated-HHD run on a prepared node set; d_min < 0 disables selection.
inline StabilityRow stability_run(const NodeSet& nodes, const std::vector<Stencil>& stencils,
                                  const KernelSpec& kernel, int poly_degree, double eps_s,
                                  double d_min, int n_iter, int threads = 1,
                                  bool skip_singular = false) {
    StabilityRow row;
    row.poly_degree = poly_degree;
    row.eps_s = eps_s;
    row.d_min = std::max(d_min, 0.0);
    AssemblyOptions opts;
    opts.threads = threads;
    opts.skip_singular = skip_singular;
    if (d_min >= 0.0) opts.selection = SelectionConfig{d_min};
    const Matrix w = vortex_field(nodes);
    const double w_sup = w.cwiseAbs().maxCoeff();
    try {
        const HhdState state =
            hhd_iterate(nodes, stencils, kernel, PolyBasis(poly_degree, 2), opts, w, n_iter);
        row.stable = hhd_stable(state, w_sup) ? 1 : 0;
        row.growth = hhd_growth(state, w_sup);
    } catch (const std::exception&) {
        row.stable = 0;
    }
    return row;
}

/// Manufactured pure-Neumann Poisson solve (exact solution 1/r) on a prepared
/// node set; returns the normalized RMS error.
inline double poisson_study(const NodeSet& nodes, const std::vector<Stencil>& stencils,
                            const KernelSpec& kernel, int poly_degree, double d_min,
                            int threads = 0, bool skip_singular = false) {
    AssemblyOptions opts;
    opts.threads = threads;
    opts.skip_singular = skip_singular;
    if (d_min >= 0.0) opts.selection = SelectionConfig{d_min};
    GlobalSystem sys = assemble_global(nodes, stencils, DiffOperator::laplacian(), kernel,
                                       PolyBasis(poly_degree, 2), opts);
    for (std::size_t i = 0; i < sys.interior_ids.size(); ++i)
        sys.f[static_cast<Index>(i)] = poisson_rhs(nodes.positions.row(sys.interior_ids[i]));
    Vector g(static_cast<Index>(sys.boundary_ids.size()));
    for (std::size_t i = 0; i < sys.boundary_ids.size(); ++i)
        g[static_cast<Index>(i)] = poisson_neumann_data(nodes.positions.row(sys.boundary_ids[i]),
                                                        nodes.normals.row(sys.boundary_ids[i]));
    const Vector u = solve_poisson_neumann(sys, g);
    Vector u_exact(u.size());
    for (std::size_t i = 0; i < sys.interior_ids.size(); ++i)
        u_exact[static_cast<Index>(i)] = poisson_exact(nodes.positions.row(sys.interior_ids[i]));
    return nrmse(u, u_exact);
}

}  // namespace nrbf
