#pragma once

#include "nrbf/kernels.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace nrbf {

enum class NodeKind : std::uint8_t { Interior = 0, Boundary = 1 };

struct GeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A cloud of interior/boundary nodes with unit outward normals on the
/// boundary ones and a nominal spacing s.
struct NodeSet {
    Matrix positions;             // n x d
    std::vector<NodeKind> kinds;  // n
    Matrix normals;               // n x d, zero rows for interior nodes
    double spacing = 0.0;

    Index size() const { return positions.rows(); }
    Index dim() const { return positions.cols(); }

    bool is_boundary(Index i) const { return kinds[static_cast<std::size_t>(i)] == NodeKind::Boundary; }

    std::vector<Index> interior_indices() const {
        std::vector<Index> out;
        for (Index i = 0; i < size(); ++i)
            if (!is_boundary(i)) out.push_back(i);
        return out;
    }
    std::vector<Index> boundary_indices() const {
        std::vector<Index> out;
        for (Index i = 0; i < size(); ++i)
            if (is_boundary(i)) out.push_back(i);
        return out;
    }

    void validate() const {
        if (positions.rows() != static_cast<Index>(kinds.size()) || normals.rows() != positions.rows())
            throw GeometryError("node set arrays disagree in length");
        if (!(spacing > 0.0)) throw GeometryError("node spacing must be positive");
        for (Index i = 0; i < size(); ++i)
            if (is_boundary(i) && std::abs(normals.row(i).norm() - 1.0) > 1e-12)
                throw GeometryError("boundary normal is not unit length");
        for (Index i = 0; i < size(); ++i)
            for (Index j = i + 1; j < size(); ++j)
                if ((positions.row(i) - positions.row(j)).norm() <= 1e-9 * spacing)
                    throw GeometryError("node positions are not distinct");
    }
};

/// Index sets of one local interpolation stencil: the interior members are
/// ordered by distance from the center, boundary members listed after them.
struct Stencil {
    Index center = -1;
    std::vector<Index> interior;
    std::vector<Index> boundary;

    Index m_I() const { return static_cast<Index>(interior.size()); }
    Index m_B() const { return static_cast<Index>(boundary.size()); }
    Index m() const { return m_I() + m_B(); }
};

/// A smooth closed 2D domain given as a polar graph rho = r(theta) about an
/// offset center, with analytic tangents and outward normals.
class Domain2D {
public:
    Domain2D(std::function<double(double)> radius, std::function<double(double)> radius_deriv,
             Eigen::Vector2d center)
        : radius_(std::move(radius)), radius_deriv_(std::move(radius_deriv)), center_(center) {}

    const Eigen::Vector2d& center() const { return center_; }
    double radius(double theta) const { return radius_(theta); }

    Eigen::Vector2d point(double theta) const {
        const double r = radius_(theta);
        return center_ + r * Eigen::Vector2d(std::cos(theta), std::sin(theta));
    }

    Eigen::Vector2d tangent(double theta) const {
        const double r = radius_(theta), dr = radius_deriv_(theta);
        const double c = std::cos(theta), s = std::sin(theta);
        return {dr * c - r * s, dr * s + r * c};
    }

    /// Unit outward normal for the counterclockwise parametrization.
    Eigen::Vector2d outward_normal(double theta) const {
        const Eigen::Vector2d t = tangent(theta);
        Eigen::Vector2d n(t.y(), -t.x());
        return n / n.norm();
    }

    bool inside(const Eigen::Vector2d& p) const {
        const Eigen::Vector2d q = p - center_;
        const double rho = q.norm();
        if (rho == 0.0) return true;
        return rho < radius_(std::atan2(q.y(), q.x()));
    }

    /// Parameter, point and distance of the boundary point closest to p,
    /// located by a dense scan refined with golden-section iterations.
    struct Nearest {
        double theta;
        Eigen::Vector2d point;
        double distance;
    };
    Nearest nearest_boundary(const Eigen::Vector2d& p, int scan = 720) const {
        double best_t = 0.0, best_d2 = std::numeric_limits<double>::infinity();
        for (int i = 0; i < scan; ++i) {
            const double t = 2.0 * M_PI * i / scan;
            const double d2 = (point(t) - p).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best_t = t;
            }
        }
        double lo = best_t - 2.0 * M_PI / scan, hi = best_t + 2.0 * M_PI / scan;
        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
        double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
        double fa = (point(a) - p).squaredNorm(), fb = (point(b) - p).squaredNorm();
        for (int it = 0; it < 60; ++it) {
            if (fa < fb) {
                hi = b;
                b = a;
                fb = fa;
                a = hi - gr * (hi - lo);
                fa = (point(a) - p).squaredNorm();
            } else {
                lo = a;
                a = b;
                fa = fb;
                b = lo + gr * (hi - lo);
                fb = (point(b) - p).squaredNorm();
            }
        }
        const double t = 0.5 * (lo + hi);
        const Eigen::Vector2d q = point(t);
        return {t, q, (q - p).norm()};
    }

    /// Signed curvature of the polar curve at theta.
    double curvature(double theta, double h = 1e-5) const {
        const double r = radius_(theta);
        const double dr = radius_deriv_(theta);
        const double ddr = (radius_deriv_(theta + h) - radius_deriv_(theta - h)) / (2.0 * h);
        const double num = r * r + 2.0 * dr * dr - r * ddr;
        const double den = std::pow(r * r + dr * dr, 1.5);
        return num / den;
    }

private:
    std::function<double(double)> radius_;
    std::function<double(double)> radius_deriv_;
    Eigen::Vector2d center_;
};

/// The fixed test domain: r(theta) = 1 + 0.25 cos(5 theta) centered at (2, 0),
/// so fields singular at the origin stay regular on the closure.
inline Domain2D test_domain() {
    return Domain2D([](double t) { return 1.0 + 0.25 * std::cos(5.0 * t); },
                    [](double t) { return -1.25 * std::sin(5.0 * t); }, Eigen::Vector2d(2.0, 0.0));
}

/// Normal direction used by the reference stencil: the node at (x, 0) takes
/// its normal along the line through G = (0, 3 s cot(alpha)), oriented away
/// from the interior half-plane y > 0. alpha is then exactly the signed angle
/// of the rightmost normal from the downward vertical; the limits alpha =
/// +-pi/2 degenerate into normals along the boundary tangent.
inline Eigen::Vector2d reference_normal(double x, double alpha, double s) {
    Eigen::Vector2d n(x * std::sin(alpha), -3.0 * s * std::cos(alpha));
    const double len = n.norm();
    if (len < 1e-300) return {0.0, -1.0};  // central node at alpha = +-pi/2
    return n / len;
}

/// The 22-node reference stencil: 7 boundary nodes on y = 0 at x = -3s..3s and
/// 15 interior nodes on the hexagonal lattice above (rows of 6, 5 and 4).
/// Interior nodes come first (row by row, left to right), then the boundary
/// nodes left to right. The stencil center is the first-row node at x = s/2.
inline std::pair<NodeSet, Stencil> reference_stencil(double alpha, double s) {
    if (!(std::abs(alpha) <= M_PI / 2 + 1e-12)) throw GeometryError("alpha outside [-pi/2, pi/2]");
    if (!(s > 0.0)) throw GeometryError("spacing must be positive");

    std::vector<Eigen::Vector2d> pts;
    const int row_counts[3] = {6, 5, 4};
    for (int row = 0; row < 3; ++row) {
        const int count = row_counts[row];
        const double y = (row + 1) * std::sqrt(3.0) / 2.0 * s;
        // Offsets written as integer multiples of s/2 so mirrored nodes are
        // exact floating-point mirrors.
        for (int i = 0; i < count; ++i) pts.emplace_back((2 * i - (count - 1)) * (0.5 * s), y);
    }
    const Index n_interior = static_cast<Index>(pts.size());
    for (int i = -3; i <= 3; ++i) pts.emplace_back(i * s, 0.0);

    NodeSet nodes;
    nodes.spacing = s;
    nodes.positions.resize(static_cast<Index>(pts.size()), 2);
    nodes.normals = Matrix::Zero(static_cast<Index>(pts.size()), 2);
    nodes.kinds.assign(pts.size(), NodeKind::Interior);
    for (Index i = 0; i < static_cast<Index>(pts.size()); ++i) nodes.positions.row(i) = pts[static_cast<std::size_t>(i)];
    for (Index i = n_interior; i < nodes.size(); ++i) {
        nodes.kinds[static_cast<std::size_t>(i)] = NodeKind::Boundary;
        nodes.normals.row(i) = reference_normal(nodes.positions(i, 0), alpha, s);
    }

    Stencil st;
    st.center = 3;  // first row, x = +s/2
    for (Index i = 0; i < n_interior; ++i) st.interior.push_back(i);
    for (Index i = n_interior; i < nodes.size(); ++i) st.boundary.push_back(i);
    return {nodes, st};
}

namespace detail {

/// Uniform-grid bucket index for neighbor queries on ~1e4 nodes.
class CellGrid {
public:
    CellGrid(const Matrix& pts, double cell) : cell_(cell) {
        for (Index i = 0; i < pts.rows(); ++i) cells_[key(pts.row(i))].push_back(i);
    }

    template <typename F>
    void for_candidates(const Eigen::Vector2d& p, double radius, F&& f) const {
        const int reach = static_cast<int>(std::ceil(radius / cell_)) + 1;
        const int cx = coord(p.x()), cy = coord(p.y());
        for (int dx = -reach; dx <= reach; ++dx)
            for (int dy = -reach; dy <= reach; ++dy) {
                auto it = cells_.find(pack(cx + dx, cy + dy));
                if (it == cells_.end()) continue;
                for (Index idx : it->second) f(idx);
            }
    }

private:
    int coord(double v) const { return static_cast<int>(std::floor(v / cell_)); }
    long long pack(int x, int y) const { return (static_cast<long long>(x) << 32) ^ (y & 0xffffffffLL); }
    long long key(const Eigen::RowVector2d& p) const { return pack(coord(p.x()), coord(p.y())); }

    double cell_;
    std::unordered_map<long long, std::vector<Index>> cells_;
};

}  // namespace detail

/// Generates a node set for a 2D domain: boundary nodes by arc-length sampling
/// at spacing ~ s with analytic normals, interior nodes from a hexagonal
/// lattice clipped 0.7 s away from the boundary, then a fixed number of
/// Laplacian smoothing sweeps over the interior. Deterministic in (domain, s).
inline NodeSet generate_nodes(const Domain2D& domain, double s, int smoothing_sweeps = 20) {
    if (!(s > 0.0)) throw GeometryError("spacing must be positive");

    // Arc-length table for boundary sampling.
    const int n_tab = 4096;
    std::vector<double> arclen(n_tab + 1, 0.0);
    for (int i = 1; i <= n_tab; ++i) {
        const double t0 = 2.0 * M_PI * (i - 1) / n_tab, t1 = 2.0 * M_PI * i / n_tab;
        arclen[static_cast<std::size_t>(i)] =
            arclen[static_cast<std::size_t>(i - 1)] +
            0.5 * (domain.tangent(t0).norm() + domain.tangent(t1).norm()) * (t1 - t0);
    }
    const double total_len = arclen.back();
    const int n_bnd = std::max(8, static_cast<int>(std::llround(total_len / s)));

    std::vector<Eigen::Vector2d> bpts, bnrm;
    for (int i = 0; i < n_bnd; ++i) {
        const double target = total_len * i / n_bnd;
        const auto it = std::lower_bound(arclen.begin(), arclen.end(), target);
        const std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - arclen.begin()), n_tab);
        const std::size_t lo = hi == 0 ? 0 : hi - 1;
        double theta;
        if (hi == lo)
            theta = 0.0;
        else {
            const double seg = arclen[hi] - arclen[lo];
            const double frac = seg > 0.0 ? (target - arclen[lo]) / seg : 0.0;
            theta = 2.0 * M_PI * (static_cast<double>(lo) + frac) / n_tab;
        }
        bpts.push_back(domain.point(theta));
        bnrm.push_back(domain.outward_normal(theta));
    }

    // Hexagonal lattice candidates clipped to the domain.
    Eigen::Vector2d lo = bpts[0], hi = bpts[0];
    for (const auto& p : bpts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    std::vector<Eigen::Vector2d> ipts;
    const double dy = std::sqrt(3.0) / 2.0 * s;
    int row = 0;
    for (double y = lo.y() + 0.5 * dy; y < hi.y(); y += dy, ++row) {
        const double x_off = (row % 2 == 0) ? 0.0 : 0.5 * s;
        for (double x = lo.x() + x_off; x < hi.x(); x += s) {
            const Eigen::Vector2d p(x, y);
            if (!domain.inside(p)) continue;
            if (domain.nearest_boundary(p).distance < 0.7 * s) continue;
            ipts.push_back(p);
        }
    }
    if (ipts.size() < 100) throw GeometryError("domain too small for requested spacing");

    // Laplacian smoothing of the interior nodes; boundary nodes stay fixed.
    // Sweeps update in place and a move is rejected if it would bring the node
    // closer than 0.75 s to any other node, which keeps the separation
    // distance bounded away from zero where the clipped lattice is irregular.
    const Index nb = static_cast<Index>(bpts.size());
    const Index ni = static_cast<Index>(ipts.size());
    Matrix all(ni + nb, 2);
    for (Index i = 0; i < ni; ++i) all.row(i) = ipts[static_cast<std::size_t>(i)];
    for (Index i = 0; i < nb; ++i) all.row(ni + i) = bpts[static_cast<std::size_t>(i)];
    const double reach = 1.5 * s;
    for (int sweep = 0; sweep < smoothing_sweeps; ++sweep) {
        detail::CellGrid grid(all, reach);
        for (Index i = 0; i < ni; ++i) {
            const Eigen::Vector2d p = all.row(i);
            Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
            int count = 0;
            grid.for_candidates(p, reach, [&](Index j) {
                if (j == i) return;
                const Eigen::Vector2d q = all.row(j);
                if ((q - p).norm() <= reach) {
                    centroid += q;
                    ++count;
                }
            });
            if (count == 0) continue;
            centroid /= count;
            const Eigen::Vector2d moved = p + 0.3 * (centroid - p);
            if (!domain.inside(moved) || domain.nearest_boundary(moved).distance < 0.7 * s) continue;
            bool crowded = false;
            grid.for_candidates(moved, 0.75 * s, [&](Index j) {
                if (j != i && (Eigen::Vector2d(all.row(j)) - moved).norm() < 0.75 * s) crowded = true;
            });
            if (crowded) continue;
            all.row(i) = moved;
        }
    }

    NodeSet nodes;
    nodes.spacing = s;
    nodes.positions = all;
    nodes.normals = Matrix::Zero(ni + nb, 2);
    nodes.kinds.assign(static_cast<std::size_t>(ni + nb), NodeKind::Interior);
    for (Index i = 0; i < nb; ++i) {
        nodes.kinds[static_cast<std::size_t>(ni + i)] = NodeKind::Boundary;
        nodes.normals.row(ni + i) = bnrm[static_cast<std::size_t>(i)];
    }
    return nodes;
}

/// Builds one stencil per interior node: the m_I_target nearest interior
/// nodes (the center included), plus every boundary node lying within
/// 1.1 x (distance from the center to the farthest selected interior node)
/// of the selected interior cloud. Interior members are sorted by distance
/// from the center.
inline std::vector<Stencil> build_stencils(const NodeSet& nodes, Index m_I_target,
                                           bool include_boundary = true) {
    const auto interior = nodes.interior_indices();
    const auto boundary = nodes.boundary_indices();
    if (m_I_target > static_cast<Index>(interior.size()))
        throw GeometryError("too few interior nodes for requested stencil size");

    Matrix ipos(static_cast<Index>(interior.size()), nodes.dim());
    for (Index i = 0; i < ipos.rows(); ++i) ipos.row(i) = nodes.positions.row(interior[static_cast<std::size_t>(i)]);

    std::vector<Stencil> out(interior.size());
    const double cell = std::max(nodes.spacing, 1e-12);
    detail::CellGrid igrid(ipos, cell);

    for (std::size_t c = 0; c < interior.size(); ++c) {
        const Eigen::Vector2d p = nodes.positions.row(interior[c]);
        // Expand the candidate radius until enough interior nodes are found.
        std::vector<std::pair<double, Index>> cand;
        double radius = cell * std::ceil(std::sqrt(static_cast<double>(m_I_target)));
        for (;;) {
            cand.clear();
            igrid.for_candidates(p, radius, [&](Index j) {
                const double d = (ipos.row(j).transpose() - p).norm();
                if (d <= radius) cand.emplace_back(d, j);
            });
            if (static_cast<Index>(cand.size()) >= m_I_target) break;
            radius *= 1.6;
        }
        std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first < b.first : a.second < b.second;
        });
        cand.resize(static_cast<std::size_t>(m_I_target));

        Stencil st;
        st.center = interior[c];
        for (const auto& [d, j] : cand) st.interior.push_back(interior[static_cast<std::size_t>(j)]);

        if (include_boundary && !boundary.empty()) {
            const double r_far = cand.back().first;
            const double reach = 1.1 * r_far;
            std::vector<std::pair<double, Index>> bsel;
            for (Index b : boundary) {
                const Eigen::Vector2d q = nodes.positions.row(b);
                double dmin = std::numeric_limits<double>::infinity();
                for (const auto& [d, j] : cand)
                    dmin = std::min(dmin, (ipos.row(j).transpose() - q).norm());
                if (dmin <= reach) bsel.emplace_back((q - p).norm(), b);
            }
            std::sort(bsel.begin(), bsel.end());
            for (const auto& [d, b] : bsel) st.boundary.push_back(b);
        }
        out[c] = std::move(st);
    }
    return out;
}

/// Writes the node-set text format: one node per line, `x y kind nx ny` with
/// the normal columns present only for boundary nodes; 17 significant digits
/// so that read/write round-trips are bit exact. The spacing is carried in a
/// leading comment.
inline void write_nodes(std::ostream& os, const NodeSet& nodes) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "# spacing = %.17g\n", nodes.spacing);
    os << buf;
    for (Index i = 0; i < nodes.size(); ++i) {
        if (nodes.is_boundary(i))
            std::snprintf(buf, sizeof buf, "%.17g %.17g 1 %.17g %.17g\n", nodes.positions(i, 0),
                          nodes.positions(i, 1), nodes.normals(i, 0), nodes.normals(i, 1));
        else
            std::snprintf(buf, sizeof buf, "%.17g %.17g 0\n", nodes.positions(i, 0), nodes.positions(i, 1));
        os << buf;
    }
}

inline void write_nodes(const std::string& path, const NodeSet& nodes) {
    std::ofstream os(path);
    if (!os) throw GeometryError("cannot open " + path + " for writing");
    write_nodes(os, nodes);
}

inline NodeSet read_nodes(std::istream& is) {
    NodeSet nodes;
    nodes.spacing = 0.0;
    std::vector<Eigen::Vector2d> pts, nrm;
    std::vector<NodeKind> kinds;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream cs(line.substr(1));
            std::string key, eq;
            double val;
            if (cs >> key >> eq >> val && key == "spacing" && eq == "=") nodes.spacing = val;
            continue;
        }
        std::istringstream ls(line);
        double x, y;
        int kind;
        if (!(ls >> x >> y >> kind)) throw GeometryError("malformed node line: " + line);
        pts.emplace_back(x, y);
        if (kind == 1) {
            double nx, ny;
            if (!(ls >> nx >> ny)) throw GeometryError("boundary node missing normal: " + line);
            kinds.push_back(NodeKind::Boundary);
            nrm.emplace_back(nx, ny);
        } else {
            kinds.push_back(NodeKind::Interior);
            nrm.emplace_back(0.0, 0.0);
        }
    }
    nodes.positions.resize(static_cast<Index>(pts.size()), 2);
    nodes.normals.resize(static_cast<Index>(pts.size()), 2);
    nodes.kinds = std::move(kinds);
    for (Index i = 0; i < nodes.size(); ++i) {
        nodes.positions.row(i) = pts[static_cast<std::size_t>(i)];
        nodes.normals.row(i) = nrm[static_cast<std::size_t>(i)];
    }
    if (!(nodes.spacing > 0.0) && nodes.size() > 1) {
        // Fall back to the median nearest-neighbor distance.
        std::vector<double> nn(static_cast<std::size_t>(nodes.size()),
                               std::numeric_limits<double>::infinity());
        for (Index i = 0; i < nodes.size(); ++i)
            for (Index j = 0; j < nodes.size(); ++j)
                if (i != j)
                    nn[static_cast<std::size_t>(i)] = std::min(
                        nn[static_cast<std::size_t>(i)],
                        (nodes.positions.row(i) - nodes.positions.row(j)).norm());
        std::nth_element(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(nn.size() / 2), nn.end());
        nodes.spacing = nn[nn.size() / 2];
    }
    return nodes;
}

inline NodeSet read_nodes(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw GeometryError("cannot open " + path);
    return read_nodes(is);
}

}  // namespace nrbf
