#pragma once

#include "nrbf/geometry.hpp"
#include "nrbf/interp.hpp"
#include "nrbf/stabilize.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <vector>

namespace nrbf {

struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The global RBF-FD operator: interior-to-interior weights in L, boundary
/// contributions (multiplying the Neumann data) in Q, and the right-hand-side
/// values f at the interior nodes.
struct GlobalSystem {
    Eigen::SparseMatrix<double> L;  // N_I x N_I
    Eigen::SparseMatrix<double> Q;  // N_I x N_B
    Vector f;                       // N_I, defaults to zero
    std::vector<Index> interior_ids;
    std::vector<Index> boundary_ids;

    Index n_interior() const { return L.rows(); }
    Index n_boundary() const { return Q.cols(); }
};

struct AssemblyOptions {
    std::optional<SelectionConfig> selection;  // approach-1 filtering per stencil
    bool projected = false;  // marks node sets produced by boundary projection
    bool skip_singular = false;
    int threads = 0;  // 0 = hardware concurrency
};

struct AssemblyReport {
    std::vector<Index> singular_nodes;  // only populated with skip_singular
    Index removed_boundary_rows = 0;    // total approach-1 removals
};

namespace detail {

struct RowEntries {
    std::vector<std::pair<Index, double>> interior;  // column, weight
    std::vector<std::pair<Index, double>> boundary;
    bool singular = false;
    Index removed = 0;
};

template <typename F>
inline void parallel_for(Index n, int threads, F&& body) {
    int nt = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    nt = std::max(1, std::min<int>(nt, static_cast<int>(n)));
    if (nt == 1) {
        for (Index i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<Index> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const Index i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Assembles the global systems for several operators at once, sharing the
/// per-stencil selection and factorization. Rows are computed in parallel and
/// merged in node order, so the sparse structure is reproducible bit for bit.
inline std::vector<GlobalSystem> assemble_global_multi(const NodeSet& nodes,
                                                       const std::vector<Stencil>& stencils,
                                                       const std::vector<DiffOperator>& ops,
                                                       const KernelSpec& kernel, const PolyBasis& basis,
                                                       const AssemblyOptions& options,
                                                       AssemblyReport* report = nullptr) {
    const auto interior = nodes.interior_indices();
    const auto boundary = nodes.boundary_indices();
    if (stencils.size() != interior.size())
        throw SolverError("need exactly one stencil per interior node");

    std::unordered_map<Index, Index> interior_row, boundary_col;
    for (std::size_t i = 0; i < interior.size(); ++i) interior_row[interior[i]] = static_cast<Index>(i);
    for (std::size_t i = 0; i < boundary.size(); ++i) boundary_col[boundary[i]] = static_cast<Index>(i);

    const Index n_i = static_cast<Index>(interior.size());
    const std::size_t n_ops = ops.size();
    std::vector<std::vector<detail::RowEntries>> rows(n_ops);
    for (auto& r : rows) r.resize(static_cast<std::size_t>(n_i));

    detail::parallel_for(n_i, options.threads, [&](Index r) {
        Stencil st = stencils[static_cast<std::size_t>(r)];
        Index removed = 0;
        if (options.selection && st.m_B() > 0) {
            auto sel = select_boundary_nodes(st, nodes, kernel, *options.selection);
            st = std::move(sel.stencil);
            removed = sel.removed;
        }
        try {
            StencilSolver solver(assemble(st, nodes, kernel, basis));
            const Vector x = nodes.positions.row(st.center);
            for (std::size_t o = 0; o < n_ops; ++o) {
                const StencilWeights w = solver.weights(ops[o], x);
                detail::RowEntries& row = rows[o][static_cast<std::size_t>(r)];
                row.removed = removed;
                for (Index i = 0; i < st.m_I(); ++i)
                    row.interior.emplace_back(interior_row.at(st.interior[static_cast<std::size_t>(i)]), w.c[i]);
                for (Index k = 0; k < st.m_B(); ++k)
                    row.boundary.emplace_back(boundary_col.at(st.boundary[static_cast<std::size_t>(k)]),
                                              w.c[st.m_I() + k]);
            }
        } catch (const ConditioningError&) {
            if (!options.skip_singular)
                throw SolverError("stencil for interior node " + std::to_string(st.center) +
                                  " is numerically singular");
            for (std::size_t o = 0; o < n_ops; ++o) rows[o][static_cast<std::size_t>(r)].singular = true;
        }
    });

    std::vector<GlobalSystem> out(n_ops);
    for (std::size_t o = 0; o < n_ops; ++o) {
        GlobalSystem& sys = out[o];
        sys.interior_ids = interior;
        sys.boundary_ids = boundary;
        sys.f = Vector::Zero(n_i);
        std::vector<Eigen::Triplet<double>> tl, tq;
        for (Index r = 0; r < n_i; ++r) {
            const auto& row = rows[o][static_cast<std::size_t>(r)];
            for (const auto& [c, v] : row.interior) tl.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
            for (const auto& [c, v] : row.boundary) tq.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
        }
        sys.L.resize(n_i, n_i);
        sys.L.setFromTriplets(tl.begin(), tl.end());
        sys.Q.resize(n_i, static_cast<Index>(boundary.size()));
        sys.Q.setFromTriplets(tq.begin(), tq.end());
    }
    if (report) {
        for (Index r = 0; r < n_i; ++r) {
            const auto& row = rows[0][static_cast<std::size_t>(r)];
            if (row.singular) report->singular_nodes.push_back(interior[static_cast<std::size_t>(r)]);
            report->removed_boundary_rows += row.removed;
        }
    }
    return out;
}

inline GlobalSystem assemble_global(const NodeSet& nodes, const std::vector<Stencil>& stencils,
                                    const DiffOperator& op, const KernelSpec& kernel,
                                    const PolyBasis& basis, const AssemblyOptions& options = {},
                                    AssemblyReport* report = nullptr) {
    return assemble_global_multi(nodes, stencils, {op}, kernel, basis, options, report)[0];
}

/// Factorization of the bordered pure-Neumann system [L, 1; 1^T, 0], which
/// pins the additive constant through a Lagrange multiplier (zero-mean u).
class NeumannPoissonSolver {
public:
    explicit NeumannPoissonSolver(const GlobalSystem& sys) : n_(sys.n_interior()) {
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<std::size_t>(sys.L.nonZeros()) + 2 * static_cast<std::size_t>(n_));
        for (int k = 0; k < sys.L.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sys.L, k); it; ++it)
                trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        for (Index i = 0; i < n_; ++i) {
            trips.emplace_back(static_cast<int>(i), static_cast<int>(n_), 1.0);
            trips.emplace_back(static_cast<int>(n_), static_cast<int>(i), 1.0);
        }
        Eigen::SparseMatrix<double> bordered(n_ + 1, n_ + 1);
        bordered.setFromTriplets(trips.begin(), trips.end());
        bordered.makeCompressed();
        lu_.compute(bordered);
        if (lu_.info() != Eigen::Success) throw SolverError("bordered Neumann system factorization failed");
    }

    /// Solves for u with right-hand side rhs = f - Q g already formed.
    Vector solve(const Vector& rhs) const {
        Vector full(n_ + 1);
        full.head(n_) = rhs;
        full[n_] = 0.0;
        const Vector sol = lu_.solve(full);
        if (lu_.info() != Eigen::Success) throw SolverError("bordered Neumann solve failed");
        return sol.head(n_);
    }

private:
    Index n_;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

/// Solves the pure-Neumann Poisson problem assembled in sys, with boundary
/// data g sampled at the boundary nodes (in sys.boundary_ids order).
inline Vector solve_poisson_neumann(const GlobalSystem& sys, const Vector& g) {
    if (g.size() != sys.n_boundary()) throw SolverError("boundary data length mismatch");
    return NeumannPoissonSolver(sys).solve(sys.f - sys.Q * g);
}

/// State of the repeated Helmholtz-Hodge decomposition probe.
struct HhdState {
    Matrix u;  // N_I x d field after the last completed iteration
    int iterations = 0;
    std::vector<double> div_norm_history;  // ||div u||_2 before each projection
    std::vector<double> sup_norm_history;  // ||u||_inf after each projection
    bool blew_up = false;                  // non-finite values encountered
};

/// Applies the projection scheme n_iter times: solve lap(phi) = div(u) with
/// homogeneous Neumann data, then subtract grad(phi). Velocity derivatives use
/// interior-only stencils; the potential's operators use the Neumann-aware
/// (optionally selection-filtered) stencils.
inline HhdState hhd_iterate(const NodeSet& nodes, const std::vector<Stencil>& stencils,
                            const KernelSpec& kernel, const PolyBasis& basis,
                            const AssemblyOptions& options, const Matrix& w, int n_iter) {
    const Index n_i = static_cast<Index>(nodes.interior_indices().size());
    if (w.rows() != n_i || w.cols() != nodes.dim()) throw SolverError("initial field shape mismatch");
    if (nodes.dim() != 2) throw SolverError("hhd_iterate is implemented for d = 2");
    if (stencils.empty()) throw SolverError("no stencils");

    const Index m_I_target = stencils[0].m_I();
    const auto interior_stencils = build_stencils(nodes, m_I_target, /*include_boundary=*/false);

    const auto phi_ops = assemble_global_multi(
        nodes, stencils, {DiffOperator::laplacian(), DiffOperator::partial(0), DiffOperator::partial(1)},
        kernel, basis, options);
    AssemblyOptions interior_opts = options;
    interior_opts.selection.reset();
    const auto vel_ops = assemble_global_multi(nodes, interior_stencils,
                                               {DiffOperator::partial(0), DiffOperator::partial(1)},
                                               kernel, basis, interior_opts);

    NeumannPoissonSolver poisson(phi_ops[0]);
    // Homogeneous Neumann data for phi: the boundary contributions vanish.
    HhdState state;
    state.u = w;
    for (int it = 0; it < n_iter; ++it) {
        const Vector div = vel_ops[0].L * state.u.col(0) + vel_ops[1].L * state.u.col(1);
        state.div_norm_history.push_back(div.norm());
        const Vector phi_field = poisson.solve(div);
        state.u.col(0) -= phi_ops[1].L * phi_field;
        state.u.col(1) -= phi_ops[2].L * phi_field;
        state.sup_norm_history.push_back(state.u.cwiseAbs().maxCoeff());
        ++state.iterations;
        if (!std::isfinite(state.sup_norm_history.back())) {
            state.blew_up = true;
            break;
        }
    }
    return state;
}

inline void hhd_history_csv(const HhdState& state, std::ostream& os) {
    os << "iter,div_norm,sup_norm\n";
    char buf[96];
    for (std::size_t i = 0; i < state.div_norm_history.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i + 1, state.div_norm_history[i],
                      state.sup_norm_history[i]);
        os << buf;
    }
}

/// Stability classification thresholds for the repeated-HHD probe.
inline bool hhd_stable(const HhdState& state, double w_sup) {
    if (state.blew_up) return false;
    double max_sup = 0.0;
    for (double v : state.sup_norm_history) max_sup = std::max(max_sup, v);
    return max_sup <= 10.0 * w_sup;
}

inline double hhd_growth(const HhdState& state, double w_sup) {
    double max_sup = 0.0;
    for (double v : state.sup_norm_history) max_sup = std::max(max_sup, v);
    if (state.blew_up || !std::isfinite(max_sup)) return std::numeric_limits<double>::infinity();
    return max_sup / w_sup;
}

/// Root-mean-square error after removing the mean offset (the pure-Neumann
/// gauge), normalized by the range of the exact field.
inline double nrmse(const Vector& u_h, const Vector& u_exact) {
    if (u_h.size() != u_exact.size() || u_h.size() == 0) throw SolverError("field length mismatch");
    const double range = u_exact.maxCoeff() - u_exact.minCoeff();
    if (!(range > 0.0)) throw SolverError("nrmse undefined for a constant exact field");
    Vector diff = u_h - u_exact;
    diff.array() -= diff.mean();
    return std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size())) / range;
}

}  // namespace nrbf
